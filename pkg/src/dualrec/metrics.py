"""Evaluation metrics for the six reported metric families."""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")

RATING_FALLBACK = 3.0


def parse_rating(text: str) -> Tuple[float, bool]:
    """First decimal literal in the text, clamped to [1, 5].

    Returns (value, parsed_ok); unparseable text falls back to 3.0.
    """
    m = _NUMBER_RE.search(text)
    if not m:
        return RATING_FALLBACK, False
    return float(np.clip(float(m.group(0)), 1.0, 5.0)), True


def rating_metrics(preds: Sequence[float], golds: Sequence[float]) -> Dict[str, float]:
    if len(preds) != len(golds) or not preds:
        raise ValueError(
            f"rating_metrics: need equal non-empty lists, got {len(preds)}/{len(golds)}"
        )
    p = np.asarray(preds, dtype=float)
    g = np.asarray(golds, dtype=float)
    return {
        "rmse": float(np.sqrt(np.mean((p - g) ** 2))),
        "mae": float(np.mean(np.abs(p - g))),
    }


def ranking_metrics(
    ranked_lists: Sequence[Sequence[str]],
    golds: Sequence[str],
    ks: Sequence[int] = (5, 10),
) -> Dict[str, float]:
    """HR@k and NDCG@k with a single relevant item per list."""
    if len(ranked_lists) != len(golds) or not ranked_lists:
        raise ValueError("ranking_metrics: need equal non-empty lists")
    for k in ks:
        if k < 1:
            raise ValueError(f"ranking_metrics: k must be >= 1, got {k}")
    out: Dict[str, float] = {}
    ranks = []
    for ranked, gold in zip(ranked_lists, golds):
        if gold not in ranked:
            raise ValueError(f"ranking_metrics: gold {gold!r} absent from its list")
        ranks.append(list(ranked).index(gold) + 1)
    for k in ks:
        hr = sum(1 for r in ranks if r <= k) / len(ranks)
        ndcg = sum(1.0 / math.log2(r + 1) if r <= k else 0.0 for r in ranks) / len(ranks)
        out[f"hr@{k}"] = hr
        out[f"ndcg@{k}"] = ndcg
    return out


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> float:
    """Corpus BLEU, uniform weights, brevity penalty, add-one smoothing on
    zero-count n-gram precisions."""
    if len(hypotheses) != len(references) or not hypotheses:
        raise ValueError("bleu: need equal non-empty corpora")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    precisions = []
    for m, t in zip(matched, total):
        if t == 0:
            precisions.append(0.0)
        elif m == 0:
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t)
    if any(p == 0.0 for p in precisions):
        return 0.0
    log_p = sum(math.log(p) for p in precisions) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return bp * math.exp(log_p)


def rouge_n(hyp: Sequence[str], ref: Sequence[str], n: int) -> float:
    """F1 of n-gram overlap for one pair."""
    h = _ngrams(hyp, n)
    r = _ngrams(ref, n)
    overlap = sum(min(c, r[g]) for g, c in h.items())
    h_total = sum(h.values())
    r_total = sum(r.values())
    if h_total == 0 or r_total == 0 or overlap == 0:
        return 0.0
    prec = overlap / h_total
    rec = overlap / r_total
    return 2 * prec * rec / (prec + rec)


def text_metrics(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    bleu_n: int = 4,
) -> Dict[str, float]:
    """Corpus BLEU plus pair-averaged ROUGE-1/2; empty references skipped."""
    if len(hypotheses) != len(references):
        raise ValueError("text_metrics: corpus size mismatch")
    pairs = [(h, r) for h, r in zip(hypotheses, references) if len(r) > 0]
    skipped = len(hypotheses) - len(pairs)
    if not pairs:
        raise ValueError("text_metrics: every reference is empty")
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    return {
        f"bleu{bleu_n}": bleu(hyps, refs, max_n=bleu_n),
        "rouge1": float(np.mean([rouge_n(h, r, 1) for h, r in pairs])),
        "rouge2": float(np.mean([rouge_n(h, r, 2) for h, r in pairs])),
        "skipped_pairs": float(skipped),
    }
