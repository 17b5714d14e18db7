"""Operator surface: data generation, prompt management, training,
evaluation, and verification, driven by a single JSON config.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
No output artifact contains timestamps; identical config+seed reproduces
identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Dict, Optional

from . import augment
from .catalog import generate_catalog, load_catalog, save_catalog
from .evaluate import evaluate
from .model import Model, ModelConfig, load_checkpoint, save_checkpoint
from .prompts import TRIGGERS, PromptRegistry, PromptTemplate, split_prompts
from .train import AdamW, TrainConfig, TrainingDiverged, build_tokenizer, train
from .verify import run_verification

CONFIG_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(RuntimeError):
    pass


def load_config(path: str, seed_override: Optional[int] = None) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version: {cfg.get('version')!r}")
    if seed_override is not None:
        cfg["seed"] = seed_override
    if "seed" not in cfg:
        raise ConfigError("config must set a seed")
    return cfg


def _out_dir(cfg: dict, create: bool) -> str:
    out = cfg.get("output_dir", "out")
    if not os.path.isdir(out):
        if create:
            os.makedirs(out, exist_ok=True)
        else:
            raise ConfigError(f"output directory {out!r} does not exist (use --create)")
    return out


def _paths(out: str) -> Dict[str, str]:
    return {
        "catalog": os.path.join(out, "catalog.jsonl"),
        "registry": os.path.join(out, "registry.jsonl"),
        "checkpoint": os.path.join(out, "checkpoint.json"),
        "history": os.path.join(out, "history.jsonl"),
    }


def cmd_gen_data(cfg: dict, create: bool) -> int:
    out = _out_dir(cfg, create)
    c = cfg.get("catalog", {})
    catalog = generate_catalog(
        seed=cfg["seed"],
        n_users=c.get("n_users", 20),
        n_items=c.get("n_items", 50),
        n_interactions_per_user=c.get("n_interactions_per_user", 8),
        k_negatives=cfg.get("train", {}).get("k_negatives", 10),
    )
    path = _paths(out)["catalog"]
    save_catalog(path, catalog)
    n_inter = sum(len(v) for v in catalog.interactions.values())
    print(
        f"wrote {path}: {len(catalog.users)} users, {len(catalog.items)} items, "
        f"{n_inter} interactions"
    )
    return EXIT_OK


def _load_triggers(path: str) -> Dict[tuple, list]:
    triggers: Dict[tuple, list] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                key = (rec["family"], int(rec["group"]))
                triggers.setdefault(key, []).append(rec["text"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"malformed triggers file at line {lineno}: {exc}")
    if not triggers:
        raise ConfigError("triggers file contains no templates")
    return triggers


def cmd_gen_prompts(cfg: dict, create: bool, live: bool) -> int:
    out = _out_dir(cfg, create)
    p = cfg.get("prompts", {})
    n_per_group = p.get("n_per_group", 100)
    triggers = TRIGGERS
    if p.get("triggers_path"):
        triggers = _load_triggers(p["triggers_path"])
    if live and not os.environ.get(augment.AUTH_ENV_VAR, "").strip():
        raise ConfigError(
            f"live mode requires the {augment.AUTH_ENV_VAR} environment variable"
        )

    registry = PromptRegistry()
    for (family, group), texts in sorted(triggers.items()):
        accepted = []
        for t_i, trigger in enumerate(texts):
            registry.add(PromptTemplate(family=family, group=group, text=trigger))
        per_trigger = -(-n_per_group // len(texts))  # ceil split across triggers
        for t_i, trigger in enumerate(texts):
            want = min(per_trigger, n_per_group - len(accepted))
            if want <= 0:
                break
            if live:
                demos = [(texts[(t_i + 1) % len(texts)], [texts[(t_i + 2) % len(texts)]])]
                request = augment.build_request(
                    trigger, demos, want,
                    model=p.get("model_name", "gpt-3.5-turbo"),
                    endpoint=p.get("endpoint", ""),
                )
                raw = augment.call_endpoint(request, timeout=p.get("timeout", 30.0))
                batch = augment.parse_and_validate(raw, trigger)
            else:
                batch = augment.offline_paraphrase(
                    trigger, want, seed=cfg["seed"] * 1000 + group * 100 + t_i
                )
            accepted.extend(batch.accepted[:want])
        for text in accepted[:n_per_group]:
            registry.add(
                PromptTemplate(family=family, group=group, text=text, origin="generated")
            )
    split_prompts(
        registry,
        n_train_per_group=p.get("n_seen", 90),
        n_zeroshot_per_group=p.get("n_zeroshot", 5),
        seed=cfg["seed"],
    )
    path = _paths(out)["registry"]
    registry.save(path)
    groups = registry.groups()
    print(f"wrote {path}: {len(registry.templates)} templates in {len(groups)} groups")
    return EXIT_OK


def _train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    t["seed"] = cfg["seed"]
    try:
        return TrainConfig(**t)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}")


def _model_config(cfg: dict, vocab_size: int) -> ModelConfig:
    m = dict(cfg.get("model", {}))
    m["vocab_size"] = vocab_size
    try:
        return ModelConfig(**m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}")


def cmd_train(cfg: dict, create: bool, resume: bool = False) -> int:
    out = _out_dir(cfg, create)
    paths = _paths(out)
    for key in ("catalog", "registry"):
        if not os.path.exists(paths[key]):
            raise ConfigError(f"missing {key} file: {paths[key]} (run gen-data/gen-prompts)")
    catalog = load_catalog(paths["catalog"])
    registry = PromptRegistry.load(paths["registry"])
    tokenizer = build_tokenizer(catalog, registry)
    tc = _train_config(cfg)

    start_step = 0
    optimizer = None
    if resume and os.path.exists(paths["checkpoint"]):
        model, start_step, opt_state = load_checkpoint(paths["checkpoint"])
        optimizer = AdamW(model.params, tc)
        if opt_state is not None:
            optimizer.load_state_arrays(opt_state)
    else:
        model = Model.create(_model_config(cfg, tokenizer.size), seed=cfg["seed"])

    def checkpoint_fn(m, step, opt):
        save_checkpoint(paths["checkpoint"], m, step=step, opt_state=opt.state_arrays())

    model, history, opt = train(
        tc, catalog, registry, model, tokenizer,
        start_step=start_step, optimizer=optimizer, checkpoint_fn=checkpoint_fn,
    )
    save_checkpoint(paths["checkpoint"], model, step=tc.total_steps, opt_state=opt.state_arrays())
    mode = "a" if resume and start_step > 0 else "w"
    with open(paths["history"], mode) as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if history:
        last = history[-1]
        print(
            f"trained {len(history)} steps; final losses gen={last['gen']:.4f} "
            f"hfm={last['hfm']:.4f} icl={last['icl']:.4f}"
        )
    return EXIT_OK


def cmd_eval(cfg: dict, create: bool, split: str) -> int:
    out = _out_dir(cfg, create)
    paths = _paths(out)
    if not os.path.exists(paths["checkpoint"]):
        raise ConfigError(f"missing checkpoint: {paths['checkpoint']} (run train)")
    catalog = load_catalog(paths["catalog"])
    registry = PromptRegistry.load(paths["registry"])
    tokenizer = build_tokenizer(catalog, registry)
    model, _, _ = load_checkpoint(paths["checkpoint"])
    e = cfg.get("eval", {})
    report = evaluate(
        model, tokenizer, catalog, registry, split,
        seed=cfg["seed"],
        max_examples_per_family=e.get("max_examples_per_family", 20),
        n_ranking_decoys=e.get("n_ranking_decoys", 99),
    )
    report_path = os.path.join(out, f"report_{split}.json")
    with open(report_path, "w") as fh:
        fh.write(report.to_json() + "\n")
    print(f"split={split}")
    for family, m in report.metrics.items():
        nums = " ".join(f"{k}={v:.4f}" for k, v in m.items())
        print(f"  {family}: {nums}")
    print(f"wrote {report_path}")
    return EXIT_OK


def cmd_verify() -> int:
    failures = run_verification(verbose=True)
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return 1
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualrec")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--create", action="store_true", help="create the output dir")

    common(sub.add_parser("gen-data", help="generate the synthetic catalog"))
    gp = sub.add_parser("gen-prompts", help="build the prompt registry")
    common(gp)
    mode = gp.add_mutually_exclusive_group()
    mode.add_argument("--offline", action="store_true", default=True)
    mode.add_argument("--live", action="store_true", default=False)
    tr = sub.add_parser("train", help="train and write a checkpoint")
    common(tr)
    tr.add_argument("--resume", action="store_true", help="continue from the checkpoint")
    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    common(ev)
    ev.add_argument("--split", choices=["seen", "zeroshot"], required=True)
    sub.add_parser("verify", help="run the invariant checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify()
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.create)
        if args.command == "gen-prompts":
            return cmd_gen_prompts(cfg, args.create, live=args.live)
        if args.command == "train":
            return cmd_train(cfg, args.create, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, args.create, split=args.split)
        raise AssertionError(args.command)
    except (ConfigError, augment.EndpointConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
