"""Evaluation protocol: seen vs zeroshot prompts, six metric families,
candidate ranking, and the two contrastive probes."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .catalog import Catalog
from .metrics import parse_rating, ranking_metrics, rating_metrics, text_metrics
from .model import Model, build_visible_matrix
from .prompts import (
    FAMILIES,
    PromptRegistry,
    TrainingExample,
    make_examples,
)
from .tokenizer import Tokenizer
from .train import (
    _encode_description,
    _encode_history,
    _encode_item_id,
    icl_anchor_loss,
    nl_tokens_for_template,
    _find_template,
)
from .prompts import ITEM_DESCRIPTION_INSTRUCTION, sample_hfm_candidates, sample_icl_candidates


@dataclass
class EvalReport:
    split: str
    metrics: Dict[str, Dict[str, float]]
    per_prompt: Dict[str, List[dict]]
    prompt_ids: Dict[str, List[str]]
    unparseable_ratings: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _item_number(item_id: str) -> int:
    m = re.search(r"(\d+)$", item_id)
    return int(m.group(1)) if m else 0


def rank_candidates(
    model: Model,
    ex: TrainingExample,
    candidate_ids: Sequence[str],
    tokenizer: Tokenizer,
    id_mode: str = "id_atomic",
) -> List[str]:
    """Candidates sorted by total target log-likelihood, ties to lower item id."""
    gold = ex.meta.get("gold_item")
    if len(candidate_ids) < 2:
        raise ValueError("rank_candidates: need at least 2 candidates")
    if gold is not None and gold not in candidate_ids:
        raise ValueError(f"rank_candidates: gold {gold!r} not among candidates")
    vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
    with ad.no_grad():
        enc_id = model.encode(ex.id_tokens, vm)
        enc_nl = model.encode(ex.nl_tokens)
        scored = []
        for cand in candidate_ids:
            target = tokenizer.encode(cand, id_mode) + [tokenizer.eos_id]
            ll = model.sequence_log_likelihood(enc_id, enc_nl, target)
            scored.append((-ll, _item_number(cand), cand))
    scored.sort()
    return [c for _, _, c in scored]


def _generate_text(model: Model, ex: TrainingExample, tokenizer: Tokenizer, max_len: int = 16) -> str:
    vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
    with ad.no_grad():
        enc_id = model.encode(ex.id_tokens, vm)
        enc_nl = model.encode(ex.nl_tokens)
        seq, _ = model.generate_greedy(enc_id, enc_nl, max_len)
    return tokenizer.decode(seq)


def evaluate(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    registry: PromptRegistry,
    split: str,
    seed: int = 0,
    max_examples_per_family: int = 20,
    n_ranking_decoys: int = 99,
    id_mode: str = "id_atomic",
) -> EvalReport:
    """Run all five families with templates drawn only from ``split``."""
    if split not in ("seen", "zeroshot"):
        raise ValueError(f"evaluate: unknown split {split!r}")
    metrics: Dict[str, Dict[str, float]] = {}
    per_prompt: Dict[str, List[dict]] = {}
    prompt_ids: Dict[str, List[str]] = {}
    unparseable = 0
    item_ids = [i.item_id for i in catalog.items]
    rng = np.random.default_rng((seed, 97))

    for family in FAMILIES:
        templates = registry.by_family(family, split=split)
        if not templates:
            raise ValueError(f"evaluate: no {split} templates for family {family!r}")
        examples = make_examples(
            catalog, family, templates, tokenizer, seed=seed, id_mode=id_mode
        )[:max_examples_per_family]
        prompt_ids[family] = sorted({ex.template_id for ex in examples})
        rows: List[dict] = []

        if family == "rating":
            preds, golds = [], []
            for ex in examples:
                text = _generate_text(model, ex, tokenizer, max_len=4)
                val, ok = parse_rating(text)
                if not ok:
                    unparseable += 1
                preds.append(val)
                golds.append(ex.meta["gold_rating"])
                rows.append({"template_id": ex.template_id, "pred": val, "gold": golds[-1]})
            metrics[family] = rating_metrics(preds, golds)
        elif family in ("sequential", "direct"):
            ranked_lists, golds = [], []
            for ex in examples:
                gold = ex.meta["gold_item"]
                if family == "direct":
                    candidates = list(ex.meta["candidates"])
                else:
                    pool = [x for x in item_ids if x != gold]
                    n = min(n_ranking_decoys, len(pool))
                    candidates = [gold] + list(rng.choice(pool, size=n, replace=False))
                ranked = rank_candidates(model, ex, candidates, tokenizer, id_mode)
                ranked_lists.append(ranked)
                golds.append(gold)
                rows.append(
                    {"template_id": ex.template_id, "rank": ranked.index(gold) + 1}
                )
            metrics[family] = ranking_metrics(ranked_lists, golds)
        else:  # explanation, summarization
            hyps, refs = [], []
            for ex in examples:
                text = _generate_text(model, ex, tokenizer, max_len=16)
                hyps.append(text.split())
                refs.append(ex.meta["gold_text"].split())
                rows.append({"template_id": ex.template_id, "hyp": text})
            bleu_n = 4 if family == "explanation" else 2
            metrics[family] = text_metrics(hyps, refs, bleu_n=bleu_n)
        per_prompt[family] = rows

    return EvalReport(
        split=split,
        metrics=metrics,
        per_prompt=per_prompt,
        prompt_ids=prompt_ids,
        unparseable_ratings=unparseable,
    )


# ---------------------------------------------------------------------------
# contrastive probes used by the acceptance experiments


def hfm_retrieval_accuracy(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    n_cases: int,
    k_negatives: int,
    seed: int,
    id_mode: str = "id_atomic",
) -> float:
    """Fraction of cases where the matching description outscores K negatives."""
    rng = np.random.default_rng((seed, 131))
    item_ids = [i.item_id for i in catalog.items]
    hits = 0
    with ad.no_grad():
        for case in range(n_cases):
            positive = item_ids[int(rng.integers(len(item_ids)))]
            nl_set, _ = sample_hfm_candidates(
                catalog, positive, k_negatives, seed=int(rng.integers(2**31))
            )
            anchor = _encode_item_id(model, tokenizer, positive, id_mode).cls.data.ravel()
            cands = [positive] + list(nl_set.negatives)
            scores = []
            for c in cands:
                d = _encode_description(
                    model, tokenizer, ITEM_DESCRIPTION_INSTRUCTION,
                    catalog.item(c).description, 64,
                ).cls.data.ravel()
                scores.append(float(anchor @ d))
            if int(np.argmax(scores)) == 0:
                hits += 1
    return hits / n_cases


def icl_discrimination_rate(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    registry: PromptRegistry,
    n_cases: int,
    m_negatives: int,
    seed: int,
    max_gen_len: int = 6,
    split: str = "seen",
    id_mode: str = "id_atomic",
) -> float:
    """Fraction of cases where the same-group instruction has the highest
    pooled-generation similarity to the target instruction."""
    seen = registry.by_split(split)
    pools = []
    for fam in FAMILIES:
        fam_templates = [t for t in seen if t.family == fam]
        if fam_templates:
            pools.extend(
                make_examples(catalog, fam, fam_templates, tokenizer, seed=seed, id_mode=id_mode)
            )
    rng = np.random.default_rng((seed, 211))
    hits = 0
    with ad.no_grad():
        for case in range(n_cases):
            ex = pools[int(rng.integers(len(pools)))]
            target_template = _find_template(registry, ex.template_id)
            cand_set = sample_icl_candidates(
                registry, target_template, m_negatives,
                seed=int(rng.integers(2**31)), split=split,
            )
            cand_ids = [cand_set.positive] + list(cand_set.negatives)
            vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
            enc_id = model.encode(ex.id_tokens, vm)

            def pooled(nl_tokens):
                enc_nl = model.encode(nl_tokens)
                _, states = model.generate_greedy(enc_id, enc_nl, max_gen_len)
                return states.data.mean(axis=0)

            u_target = pooled(ex.nl_tokens)
            sims = []
            for cid in cand_ids:
                t = _find_template(registry, cid)
                nl = nl_tokens_for_template(tokenizer, t, ex, catalog)
                sims.append(float(u_target @ pooled(nl)))
            if int(np.argmax(sims)) == 0:
                hits += 1
    return hits / n_cases
