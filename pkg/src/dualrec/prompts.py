"""Prompt templates, task-example construction, and negative samplers.

Five task families (rating, sequential, explanation, direct,
summarization), each divided into task groups.  Hand-written triggers
seed each group; paraphrase augmentation fills the groups out, and a
seeded split flags templates as seen or zeroshot.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import Catalog, Interaction
from .model import Span
from .tokenizer import Tokenizer

FAMILIES = ["rating", "sequential", "explanation", "direct", "summarization"]

# placeholders each family's templates must carry
FAMILY_PLACEHOLDERS: Dict[str, frozenset] = {
    "rating": frozenset(),
    "sequential": frozenset(),
    "explanation": frozenset({"feature"}),
    "direct": frozenset(),
    "summarization": frozenset(),
}

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")

TRIGGERS: Dict[Tuple[str, int], List[str]] = {
    ("rating", 0): [
        "How would the user rate this item on a scale of one to five?",
        "Predict the star rating the user gives to the item.",
        "What score between one and five fits the user's opinion of the item?",
    ],
    ("rating", 1): [
        "Estimate how satisfied the user is with the item, from one to five.",
        "Give the rating the user is most likely to assign to this product.",
        "Judge the user's satisfaction with the item as a number of stars.",
    ],
    ("sequential", 0): [
        "Given the interaction history, which item will the user pick next?",
        "Predict the next item the user is going to interact with.",
        "Based on what the user bought before, name the next item.",
    ],
    ("sequential", 1): [
        "Continue the user's purchase sequence with the most likely item.",
        "What comes next in this user's shopping history?",
        "Choose the item that best extends the user's interaction sequence.",
    ],
    ("explanation", 0): [
        "Explain why the user likes the item, focusing on {feature}.",
        "Write an explanation for the user's opinion, mentioning {feature}.",
        "Using the feature word {feature}, explain the user's view of the item.",
    ],
    ("explanation", 1): [
        "Why does this item suit the user? Consider {feature}.",
        "Give the reason behind the user's preference, touching on {feature}.",
        "Justify the recommendation of the item to the user via {feature}.",
    ],
    ("direct", 0): [
        "Pick the item the user would choose from the candidate list.",
        "Which of the candidate items should be recommended to the user?",
        "Select the best matching item for the user among the candidates.",
    ],
    ("direct", 1): [
        "From the listed options, recommend one item to the user.",
        "Decide which candidate item fits the user's taste best.",
        "Out of these candidates, name the item the user prefers.",
    ],
    ("summarization", 0): [
        "Summarize the user's review of the item in a few words.",
        "Write a short summary of the following review.",
        "Condense the review into a brief headline.",
    ],
    ("summarization", 1): [
        "Give a one-line summary capturing the review's verdict.",
        "Boil the user's review down to its key point.",
        "Produce a compact summary of the review text.",
    ],
}

# fixed matching-task instructions (no placeholders)
ITEM_DESCRIPTION_INSTRUCTION = "Does the description match what's being offered?"
SEQUENTIAL_PREDICTION_INSTRUCTION = (
    "Would the user's next preference align with the description provided?"
)


@dataclass
class PromptTemplate:
    family: str
    group: int
    text: str
    origin: str = "trigger"  # trigger | generated
    split: str = "unassigned"  # seen | zeroshot | unused | unassigned
    template_id: str = ""

    def placeholders(self) -> frozenset:
        return frozenset(_PLACEHOLDER_RE.findall(self.text))


@dataclass
class TrainingExample:
    id_tokens: List[int]
    spans: List[Span]
    nl_tokens: List[int]
    target_tokens: List[int]
    family: str
    group: int
    template_id: str
    meta: dict = field(default_factory=dict)


@dataclass
class CandidateSet:
    positive: str
    negatives: List[str]
    seed: int

    def __post_init__(self):
        if self.positive in self.negatives:
            raise ValueError("candidate set: positive appears among negatives")
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError("candidate set: negatives must be pairwise distinct")


class PromptRegistry:
    def __init__(self, templates: Optional[List[PromptTemplate]] = None):
        self.templates: List[PromptTemplate] = templates or []

    def add(self, template: PromptTemplate) -> None:
        if not template.template_id:
            template.template_id = f"{template.family}-{template.group}-{len(self.templates)}"
        self.templates.append(template)

    def groups(self) -> List[Tuple[str, int]]:
        return sorted({(t.family, t.group) for t in self.templates})

    def by_group(self, family: str, group: int) -> List[PromptTemplate]:
        return [t for t in self.templates if t.family == family and t.group == group]

    def by_family(self, family: str, split: Optional[str] = None) -> List[PromptTemplate]:
        out = [t for t in self.templates if t.family == family]
        if split is not None:
            out = [t for t in out if t.split == split]
        return out

    def by_split(self, split: str) -> List[PromptTemplate]:
        return [t for t in self.templates if t.split == split]

    @classmethod
    def from_triggers(cls, triggers: Dict[Tuple[str, int], List[str]] = TRIGGERS) -> "PromptRegistry":
        reg = cls()
        for (family, group), texts in sorted(triggers.items()):
            for text in texts:
                reg.add(PromptTemplate(family=family, group=group, text=text))
        return reg

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            for t in self.templates:
                fh.write(json.dumps(asdict(t)) + "\n")

    @classmethod
    def load(cls, path: str) -> "PromptRegistry":
        reg = cls()
        with open(path) as fh:
            for line in fh:
                reg.templates.append(PromptTemplate(**json.loads(line)))
        return reg

    def all_texts(self) -> List[str]:
        return [t.text for t in self.templates]


def render_prompt(template_text: str, bindings: Dict[str, str]) -> str:
    """Substitute {name} placeholders; every placeholder must be bound."""
    needed = set(_PLACEHOLDER_RE.findall(template_text))
    missing = needed - set(bindings)
    extra = set(bindings) - needed
    if missing:
        raise ValueError(f"render_prompt: unbound placeholder {sorted(missing)[0]!r}")
    if extra:
        raise ValueError(f"render_prompt: unexpected binding {sorted(extra)[0]!r}")
    return template_text.format(**bindings)


def split_prompts(
    registry: PromptRegistry,
    n_train_per_group: int = 90,
    n_zeroshot_per_group: int = 5,
    seed: int = 0,
) -> PromptRegistry:
    """Seeded disjoint seen/zeroshot assignment, per task group."""
    rng = np.random.default_rng(seed)
    for family, group in registry.groups():
        members = registry.by_group(family, group)
        need = n_train_per_group + n_zeroshot_per_group
        if len(members) < need:
            raise ValueError(
                f"group {family}/{group} has {len(members)} templates, "
                f"needs at least {need} for the requested split"
            )
        order = rng.permutation(len(members))
        for rank, idx in enumerate(order):
            if rank < n_train_per_group:
                members[idx].split = "seen"
            elif rank < need:
                members[idx].split = "zeroshot"
            else:
                members[idx].split = "unused"
    return registry


# ---------------------------------------------------------------------------
# example construction


def _id_side(
    tokenizer: Tokenizer,
    user: str,
    item_entities: Sequence[str],
    id_mode: str,
) -> Tuple[List[int], List[Span]]:
    tokens = [tokenizer.cls_id]
    spans = [Span("cls", 0, 1)]
    utoks = tokenizer.encode(user, id_mode)
    spans.append(Span("user", len(tokens), len(tokens) + len(utoks)))
    tokens.extend(utoks)
    for k, ent in enumerate(item_entities):
        etoks = tokenizer.encode(ent, id_mode)
        spans.append(Span(f"item_{k}", len(tokens), len(tokens) + len(etoks)))
        tokens.extend(etoks)
    return tokens, spans


def _nl_side(tokenizer: Tokenizer, prompt: str, extra: str = "", max_len: int = 0) -> List[int]:
    toks = [tokenizer.cls_id] + tokenizer.encode(prompt, "word")
    if extra:
        toks += tokenizer.encode(extra, "word")
    if max_len and len(toks) > max_len:
        toks = toks[:max_len]
    return toks


def make_examples(
    catalog: Catalog,
    family: str,
    templates: Sequence[PromptTemplate],
    tokenizer: Tokenizer,
    seed: int,
    id_mode: str = "id_atomic",
    n_direct_decoys: int = 9,
    max_nl_len: int = 64,
    max_target_len: int = 32,
) -> List[TrainingExample]:
    """One TrainingExample per interaction (or per user for sequential)."""
    if family not in FAMILIES:
        raise ValueError(f"unknown task family: {family!r}")
    templates = [t for t in templates if t.family == family]
    if not templates:
        raise ValueError(f"no templates supplied for family {family!r}")
    rng = np.random.default_rng(seed)
    examples: List[TrainingExample] = []
    skipped = 0

    def pick_template() -> PromptTemplate:
        return templates[int(rng.integers(len(templates)))]

    def target(text: str, with_eos: bool = True) -> List[int]:
        toks = tokenizer.encode(text, "word")
        if with_eos:
            toks = toks + [tokenizer.eos_id]
        return toks[:max_target_len]

    if family == "sequential":
        for user in catalog.users:
            inters = catalog.interactions[user]
            if len(inters) < 2:
                skipped += 1
                continue
            history = [it.item_id for it in inters[:-1]]
            gold = inters[-1].item_id
            t = pick_template()
            id_toks, spans = _id_side(tokenizer, user, history, id_mode)
            examples.append(
                TrainingExample(
                    id_tokens=id_toks,
                    spans=spans,
                    nl_tokens=_nl_side(tokenizer, t.text, max_len=max_nl_len),
                    target_tokens=tokenizer.encode(gold, id_mode) + [tokenizer.eos_id],
                    family=family,
                    group=t.group,
                    template_id=t.template_id,
                    meta={"user": user, "gold_item": gold, "history": history},
                )
            )
        if skipped:
            logging.getLogger(__name__).info(
                "sequential: skipped %d users with fewer than 2 interactions", skipped
            )
        return examples

    item_ids = [i.item_id for i in catalog.items]
    for user in catalog.users:
        for it in catalog.interactions[user]:
            t = pick_template()
            item = catalog.item(it.item_id)
            if family == "rating":
                id_toks, spans = _id_side(tokenizer, user, [it.item_id], id_mode)
                nl = _nl_side(tokenizer, t.text, item.description, max_nl_len)
                tgt = target(f"{it.rating}.0")
                meta = {"user": user, "item": it.item_id, "gold_rating": float(it.rating)}
            elif family == "explanation":
                prompt = render_prompt(t.text, {"feature": it.feature})
                id_toks, spans = _id_side(tokenizer, user, [it.item_id], id_mode)
                nl = _nl_side(tokenizer, prompt, max_len=max_nl_len)
                tgt = target(it.explanation)
                meta = {"user": user, "item": it.item_id, "gold_text": it.explanation}
            elif family == "summarization":
                id_toks, spans = _id_side(tokenizer, user, [it.item_id], id_mode)
                nl = _nl_side(tokenizer, t.text, it.review, max_nl_len)
                tgt = target(it.summary)
                meta = {"user": user, "item": it.item_id, "gold_text": it.summary}
            elif family == "direct":
                decoy_pool = [x for x in item_ids if x != it.item_id]
                decoys = list(
                    rng.choice(decoy_pool, size=min(n_direct_decoys, len(decoy_pool)), replace=False)
                )
                candidates = decoys + [it.item_id]
                rng.shuffle(candidates)
                id_toks, spans = _id_side(tokenizer, user, candidates, id_mode)
                nl = _nl_side(tokenizer, t.text, max_len=max_nl_len)
                tgt = tokenizer.encode(it.item_id, id_mode) + [tokenizer.eos_id]
                meta = {"user": user, "gold_item": it.item_id, "candidates": candidates}
            else:  # pragma: no cover
                raise AssertionError(family)
            examples.append(
                TrainingExample(
                    id_tokens=id_toks,
                    spans=spans,
                    nl_tokens=nl,
                    target_tokens=tgt,
                    family=family,
                    group=t.group,
                    template_id=t.template_id,
                    meta=meta,
                )
            )
    return examples


# ---------------------------------------------------------------------------
# negative samplers


def sample_hfm_candidates(
    catalog: Catalog,
    positive_item: str,
    k_negatives: int,
    seed: int,
) -> Tuple[CandidateSet, CandidateSet]:
    """Uniform negatives without replacement, excluding the positive.

    Returns (text-direction set, id-direction set): the text set pairs an
    ID anchor with K+1 descriptions, the id set pairs the positive
    description with K+1 item ids.
    """
    if k_negatives < 1:
        raise ValueError("sample_hfm_candidates: need at least one negative")
    pool = [i.item_id for i in catalog.items if i.item_id != positive_item]
    if len(pool) < k_negatives:
        raise ValueError(
            f"catalog has only {len(pool) + 1} items; cannot sample "
            f"{k_negatives} negatives"
        )
    rng = np.random.default_rng(seed)
    nl_negs = list(rng.choice(pool, size=k_negatives, replace=False))
    id_negs = list(rng.choice(pool, size=k_negatives, replace=False))
    return (
        CandidateSet(positive=positive_item, negatives=[str(x) for x in nl_negs], seed=seed),
        CandidateSet(positive=positive_item, negatives=[str(x) for x in id_negs], seed=seed),
    )


def sample_icl_candidates(
    registry: PromptRegistry,
    target_template: PromptTemplate,
    m_negatives: int,
    seed: int,
    split: str = "seen",
) -> CandidateSet:
    """Positive from the target's task group (≠ target), negatives from other groups."""
    if m_negatives < 1:
        raise ValueError("sample_icl_candidates: need at least one negative")
    same_group = [
        t
        for t in registry.by_group(target_template.family, target_template.group)
        if t.template_id != target_template.template_id and (split is None or t.split == split)
    ]
    if not same_group:
        raise ValueError(
            f"group {target_template.family}/{target_template.group} has no other "
            "templates to act as the positive"
        )
    other = [
        t
        for t in registry.templates
        if (t.family, t.group) != (target_template.family, target_template.group)
        and (split is None or t.split == split)
    ]
    if len(other) < m_negatives:
        raise ValueError(
            f"only {len(other)} templates outside the target group; "
            f"cannot sample {m_negatives} negatives"
        )
    rng = np.random.default_rng(seed)
    positive = same_group[int(rng.integers(len(same_group)))]
    neg_idx = rng.choice(len(other), size=m_negatives, replace=False)
    return CandidateSet(
        positive=positive.template_id,
        negatives=[other[i].template_id for i in neg_idx],
        seed=seed,
    )
