"""Training loop: optimizer, LR schedule, and batch assembly for the three
objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import NonFiniteError, Tensor
from .catalog import Catalog
from .model import Model, ModelConfig, Span, build_visible_matrix
from .prompts import (
    FAMILIES,
    ITEM_DESCRIPTION_INSTRUCTION,
    SEQUENTIAL_PREDICTION_INSTRUCTION,
    PromptRegistry,
    PromptTemplate,
    TrainingExample,
    make_examples,
    render_prompt,
    sample_hfm_candidates,
    sample_icl_candidates,
)
from .tokenizer import Tokenizer


@dataclass
class TrainConfig:
    total_steps: int = 300
    gen_batch_size: int = 5
    hfm_pairs_per_step: int = 6
    icl_anchors_per_step: int = 12
    peak_lr: float = 1e-3
    floor_lr: float = 1e-6
    warmup_fraction: float = 0.05
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    k_negatives: int = 10
    m_negatives: int = 5
    tau: float = losses.DEFAULT_TAU
    icl_tau: float = losses.DEFAULT_TAU
    lambda3_init: float = 0.0
    icl_mode: str = "free"  # free | teacher | first
    icl_max_gen_len: int = 4
    checkpoint_interval: int = 0  # 0 = only final
    id_mode: str = "id_atomic"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, components: Dict[str, float]):
        super().__init__(f"non-finite loss at step {step}: {components}")
        self.step = step
        self.components = components


def lr_at(step: int, config: TrainConfig) -> float:
    """Linear warmup 0 -> peak over the first ceil(warmup_fraction*T) steps,
    then linear anneal peak -> floor at step T."""
    total = config.total_steps
    if step < 0 or step > total:
        raise ValueError(f"lr_at: step {step} outside [0, {total}]")
    warm = max(1, math.ceil(config.warmup_fraction * total))
    if step <= warm:
        return config.peak_lr * step / warm
    frac = (step - warm) / (total - warm)
    return config.peak_lr * (1.0 - frac) + config.floor_lr * frac


class AdamW:
    """Decoupled-weight-decay adaptive optimizer (standard update rule)."""

    def __init__(self, params: Dict[str, Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: float) -> None:
        c = self.config
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            p.data -= lr * (mhat / (np.sqrt(vhat) + c.adam_eps) + c.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        out["t"] = np.asarray([float(self.t)])
        return out

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for k in self.m:
            self.m[k] = np.asarray(state[f"m.{k}"], dtype=np.float64).copy()
            self.v[k] = np.asarray(state[f"v.{k}"], dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# forward helpers


def example_gen_loss(model: Model, ex: TrainingExample) -> Tensor:
    vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
    enc_id = model.encode(ex.id_tokens, vm)
    enc_nl = model.encode(ex.nl_tokens)
    logits = model.decode_teacher_forced(enc_id, enc_nl, ex.target_tokens)
    return losses.gen_loss(logits, ex.target_tokens, pad_id=model.pad_id)


def _encode_item_id(model: Model, tokenizer: Tokenizer, item_id: str, id_mode: str):
    toks = [tokenizer.cls_id] + tokenizer.encode(item_id, id_mode)
    spans = [Span("cls", 0, 1), Span("item_0", 1, len(toks))]
    return model.encode(toks, build_visible_matrix(spans, len(toks)))


def _encode_history(model: Model, tokenizer: Tokenizer, user: str, history: Sequence[str], id_mode: str):
    toks = [tokenizer.cls_id]
    spans = [Span("cls", 0, 1)]
    utoks = tokenizer.encode(user, id_mode)
    spans.append(Span("user", len(toks), len(toks) + len(utoks)))
    toks.extend(utoks)
    for k, ent in enumerate(history):
        etoks = tokenizer.encode(ent, id_mode)
        spans.append(Span(f"item_{k}", len(toks), len(toks) + len(etoks)))
        toks.extend(etoks)
    return model.encode(toks, build_visible_matrix(spans, len(toks)))


def _encode_description(model: Model, tokenizer: Tokenizer, instruction: str, description: str, max_nl_len: int):
    toks = [tokenizer.cls_id] + tokenizer.encode(instruction + " " + description, "word")
    return model.encode(toks[:max_nl_len])


def hfm_item_description_loss(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    positive_item: str,
    k_negatives: int,
    tau: float,
    seed: int,
    id_mode: str = "id_atomic",
    max_nl_len: int = 64,
) -> Tensor:
    """Contrastive matching of one item id against K+1 descriptions, both ways."""
    nl_set, id_set = sample_hfm_candidates(catalog, positive_item, k_negatives, seed)
    rng = np.random.default_rng((seed, 17))
    instr = ITEM_DESCRIPTION_INSTRUCTION

    nl_items = list(nl_set.negatives)
    pos_i2n = int(rng.integers(len(nl_items) + 1))
    nl_items.insert(pos_i2n, positive_item)
    id_items = list(id_set.negatives)
    pos_n2i = int(rng.integers(len(id_items) + 1))
    id_items.insert(pos_n2i, positive_item)

    id_anchor = _encode_item_id(model, tokenizer, positive_item, id_mode).cls
    nl_anchor = _encode_description(
        model, tokenizer, instr, catalog.item(positive_item).description, max_nl_len
    ).cls
    nl_cands = [
        _encode_description(model, tokenizer, instr, catalog.item(i).description, max_nl_len).cls
        for i in nl_items
    ]
    id_cands = [_encode_item_id(model, tokenizer, i, id_mode).cls for i in id_items]
    return losses.hfm_pair_loss(id_anchor, nl_cands, nl_anchor, id_cands, pos_i2n, pos_n2i, tau)


def hfm_sequential_loss(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    user: str,
    k_negatives: int,
    tau: float,
    seed: int,
    id_mode: str = "id_atomic",
    max_nl_len: int = 64,
) -> Tensor:
    """Match a user's interaction history against the next item's description.

    Text-direction negatives are other items' descriptions; id-direction
    negatives are other users' histories.
    """
    inters = catalog.interactions[user]
    if len(inters) < 2:
        raise ValueError(f"user {user} has fewer than 2 interactions")
    history = [it.item_id for it in inters[:-1]]
    next_item = inters[-1].item_id
    instr = SEQUENTIAL_PREDICTION_INSTRUCTION

    nl_set, _ = sample_hfm_candidates(catalog, next_item, k_negatives, seed)
    rng = np.random.default_rng((seed, 29))
    nl_items = list(nl_set.negatives)
    pos_i2n = int(rng.integers(len(nl_items) + 1))
    nl_items.insert(pos_i2n, next_item)

    other_users = [u for u in catalog.users if u != user and len(catalog.interactions[u]) >= 2]
    if len(other_users) < k_negatives:
        raise ValueError(
            f"need {k_negatives} other users with history, have {len(other_users)}"
        )
    neg_users = list(rng.choice(other_users, size=k_negatives, replace=False))
    hist_anchors = [(user, history)] + [
        (u, [it.item_id for it in catalog.interactions[u][:-1]]) for u in neg_users
    ]
    pos_n2i = int(rng.integers(len(hist_anchors)))
    hist_anchors[0], hist_anchors[pos_n2i] = hist_anchors[pos_n2i], hist_anchors[0]

    id_anchor = _encode_history(model, tokenizer, user, history, id_mode).cls
    nl_anchor = _encode_description(
        model, tokenizer, instr, catalog.item(next_item).description, max_nl_len
    ).cls
    nl_cands = [
        _encode_description(model, tokenizer, instr, catalog.item(i).description, max_nl_len).cls
        for i in nl_items
    ]
    id_cands = [
        _encode_history(model, tokenizer, u, h, id_mode).cls for u, h in hist_anchors
    ]
    return losses.hfm_pair_loss(id_anchor, nl_cands, nl_anchor, id_cands, pos_i2n, pos_n2i, tau)


def nl_tokens_for_template(
    tokenizer: Tokenizer,
    template: PromptTemplate,
    ex: TrainingExample,
    catalog: Catalog,
    max_nl_len: int = 64,
) -> List[int]:
    """Rebuild the NL side of ``ex`` under a different template of any family."""
    bindings = {}
    if "feature" in template.placeholders():
        feature = ex.meta.get("feature")
        if feature is None and "item" in ex.meta:
            feature = catalog.item(ex.meta["item"]).category
        bindings = {"feature": feature or "quality"}
    prompt = render_prompt(template.text, bindings)
    # context text is a property of the example, not of the candidate
    # instruction: every candidate sees the same context so only the
    # instruction varies across the contrast set
    extra = ""
    if ex.family == "rating" and "item" in ex.meta:
        extra = catalog.item(ex.meta["item"]).description
    elif ex.family == "summarization" and "item" in ex.meta:
        user = ex.meta.get("user")
        if user:
            for it in catalog.interactions[user]:
                if it.item_id == ex.meta["item"]:
                    extra = it.review
                    break
    toks = [tokenizer.cls_id] + tokenizer.encode(prompt + (" " + extra if extra else ""), "word")
    return toks[:max_nl_len]


def icl_anchor_loss(
    model: Model,
    tokenizer: Tokenizer,
    catalog: Catalog,
    registry: PromptRegistry,
    ex: TrainingExample,
    m_negatives: int,
    tau: float,
    seed: int,
    mode: str = "free",
    max_gen_len: int = 6,
    split: str = "seen",
) -> Tensor:
    """Instruction-contrast loss for one ID input under M+2 instructions."""
    target_template = _find_template(registry, ex.template_id)
    cand_set = sample_icl_candidates(registry, target_template, m_negatives, seed, split=split)
    rng = np.random.default_rng((seed, 41))
    cand_ids = list(cand_set.negatives)
    # the confusable negatives are sibling groups of the same family; make
    # sure every anchor carries that contrast instead of leaving it to chance
    if all(_find_template(registry, c).family != target_template.family for c in cand_ids):
        siblings = [
            t
            for t in registry.templates
            if t.family == target_template.family
            and t.group != target_template.group
            and (split is None or t.split == split)
        ]
        if siblings:
            pick = siblings[int(rng.integers(len(siblings)))]
            cand_ids[int(rng.integers(len(cand_ids)))] = pick.template_id
    pos_index = int(rng.integers(len(cand_ids) + 1))
    cand_ids.insert(pos_index, cand_set.positive)

    vm = build_visible_matrix(ex.spans, len(ex.id_tokens))
    enc_id = model.encode(ex.id_tokens, vm)

    def pooled(template_id: Optional[str]) -> Tensor:
        if template_id is None:
            nl = ex.nl_tokens
        else:
            t = _find_template(registry, template_id)
            nl = nl_tokens_for_template(tokenizer, t, ex, catalog)
        enc_nl = model.encode(nl)
        if mode == "free":
            _, states = model.generate_greedy(enc_id, enc_nl, max_gen_len)
        elif mode == "teacher":
            _, states = model.decode_teacher_forced(
                enc_id, enc_nl, ex.target_tokens, return_states=True
            )
        elif mode == "first":
            # the state at the first decoding position depends only on the
            # start token and the cross-attended encodings, so it is the same
            # representation regardless of what gets generated afterwards
            _, states = model.decode_teacher_forced(
                enc_id, enc_nl, [model.eos_id], return_states=True
            )
        else:
            raise ValueError(f"unknown icl mode: {mode!r}")
        return losses.mean_pool(states)

    u_target = pooled(None)
    u_cands = [pooled(c) for c in cand_ids]
    return losses.icl_loss(u_target, u_cands, pos_index, tau)


def _find_template(registry: PromptRegistry, template_id: str) -> PromptTemplate:
    for t in registry.templates:
        if t.template_id == template_id:
            return t
    raise KeyError(f"template {template_id!r} not in registry")


# ---------------------------------------------------------------------------
# training loop


def build_tokenizer(catalog: Catalog, registry: PromptRegistry) -> Tokenizer:
    texts = catalog.all_texts() + registry.all_texts()
    texts.append(ITEM_DESCRIPTION_INSTRUCTION)
    texts.append(SEQUENTIAL_PREDICTION_INSTRUCTION)
    texts.extend(f"{r}.0" for r in range(1, 6))
    entities = list(catalog.users) + [i.item_id for i in catalog.items]
    return Tokenizer.build(texts, entities)


class _EncodeMemo:
    """Reuses encoder passes within one training step.

    The contrastive batches draw items/users with replacement, so the same
    sequence is often encoded several times per step. Reverse-mode gradients
    accumulate over shared subgraphs, so handing out the same encoding twice
    is numerically sound; the memo is dropped after every optimizer step.
    """

    def __init__(self, model: Model):
        self._model = model
        self._memo: dict = {}

    def __getattr__(self, name):
        return getattr(self._model, name)

    def encode(self, tokens, visible=None, dropout_rng=None):
        if dropout_rng is not None:
            return self._model.encode(tokens, visible, dropout_rng)
        key = (tuple(tokens), None if visible is None else visible.tobytes())
        out = self._memo.get(key)
        if out is None:
            out = self._model.encode(tokens, visible)
            self._memo[key] = out
        return out


def train(
    config: TrainConfig,
    catalog: Catalog,
    registry: PromptRegistry,
    model: Model,
    tokenizer: Tokenizer,
    start_step: int = 0,
    optimizer: Optional[AdamW] = None,
    checkpoint_fn=None,
) -> Tuple[Model, List[Dict[str, float]], AdamW]:
    """Run the combined objective for ``total_steps`` steps.

    Fully deterministic given (config, catalog, registry, model seed):
    every stochastic choice derives from (config.seed, step).
    """
    seen = registry.by_split("seen")
    if not seen:
        raise ValueError("train: registry has no templates flagged seen")
    pools: Dict[str, List[TrainingExample]] = {}
    for fam in FAMILIES:
        fam_templates = [t for t in seen if t.family == fam]
        if not fam_templates:
            raise ValueError(f"train: no seen templates for family {fam!r}")
        pools[fam] = make_examples(
            catalog, fam, fam_templates, tokenizer, seed=config.seed, id_mode=config.id_mode
        )
    # on resume, advance the round-robin cursors to where an uninterrupted
    # run would be after start_step steps
    drawn = [
        FAMILIES[p % len(FAMILIES)] for p in range(start_step * config.gen_batch_size)
    ]
    cursors = {fam: drawn.count(fam) for fam in FAMILIES}
    opt = optimizer or AdamW(model.params, config)
    weights = losses.LossWeights(
        lambda3_init=config.lambda3_init, total_steps=config.total_steps
    )
    history: List[Dict[str, float]] = []

    users_with_history = [u for u in catalog.users if len(catalog.interactions[u]) >= 2]
    item_ids = [i.item_id for i in catalog.items]

    for step in range(start_step, config.total_steps):
        rng = np.random.default_rng((config.seed, step))
        step_model = _EncodeMemo(model)

        # generation batch: round-robin over the five families
        gen_terms = []
        gen_examples = []
        for b in range(config.gen_batch_size):
            fam = FAMILIES[(step * config.gen_batch_size + b) % len(FAMILIES)]
            pool = pools[fam]
            ex = pool[cursors[fam] % len(pool)]
            cursors[fam] += 1
            gen_examples.append(ex)
            gen_terms.append(example_gen_loss(step_model, ex))
        gen = ad.scale(_sum(gen_terms), 1.0 / len(gen_terms))

        # matching batches, both sub-tasks
        item_terms = []
        seq_terms = []
        for b in range(config.hfm_pairs_per_step):
            item = item_ids[int(rng.integers(len(item_ids)))]
            item_terms.append(
                hfm_item_description_loss(
                    step_model, tokenizer, catalog, item, config.k_negatives, config.tau,
                    seed=int(rng.integers(2**31)), id_mode=config.id_mode,
                )
            )
            user = users_with_history[int(rng.integers(len(users_with_history)))]
            seq_terms.append(
                hfm_sequential_loss(
                    step_model, tokenizer, catalog, user, config.k_negatives, config.tau,
                    seed=int(rng.integers(2**31)), id_mode=config.id_mode,
                )
            )
        hfm = losses.hfm_task_loss(
            losses.hfm_batch_loss(item_terms), losses.hfm_batch_loss(seq_terms)
        )

        # instruction-contrast batch
        icl_terms = []
        for b in range(config.icl_anchors_per_step):
            ex = gen_examples[int(rng.integers(len(gen_examples)))]
            icl_terms.append(
                icl_anchor_loss(
                    step_model, tokenizer, catalog, registry, ex,
                    config.m_negatives, config.icl_tau,
                    seed=int(rng.integers(2**31)),
                    mode=config.icl_mode,
                    max_gen_len=config.icl_max_gen_len,
                )
            )
        icl = ad.scale(_sum(icl_terms), 1.0 / len(icl_terms))

        total = losses.total_loss(gen, hfm, icl, weights, step)
        components = {
            "gen": float(gen.data),
            "hfm": float(hfm.data),
            "icl": float(icl.data),
            "total": float(total.data),
        }
        if not all(math.isfinite(v) for v in components.values()):
            raise TrainingDiverged(step, components)

        opt.zero_grad()
        try:
            ad.backward(total)
        except NonFiniteError:
            raise TrainingDiverged(step, components)
        lr = lr_at(step + 1, config)
        opt.step(lr)

        history.append(
            {
                "step": step,
                "lr": lr,
                "lambda3": weights.lambda3(step),
                **components,
            }
        )
        if (
            checkpoint_fn is not None
            and config.checkpoint_interval > 0
            and (step + 1) % config.checkpoint_interval == 0
        ):
            checkpoint_fn(model, step + 1, opt)
    return model, history, opt


def _sum(ts: Sequence[Tensor]) -> Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = ad.add(acc, t)
    return acc
