"""Training objectives: generation, ID/text matching, instruction contrast.

All functions are pure over tensors; batching and representation
construction live in the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_TAU = 0.07


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3_init: float = 0.0  # starting weight of the instruction-contrast term
    total_steps: int = 1

    def lambda3(self, step: int) -> float:
        return lambda3_schedule(step, self.total_steps, self.lambda3_init)


def lambda3_schedule(t: int, total_steps: int, lambda3_init: float) -> float:
    """Linear ramp from ``lambda3_init`` at t=0 to 1 at t=total_steps."""
    if total_steps < 1:
        raise ValueError("lambda3_schedule: total_steps must be >= 1")
    if not 0.0 <= lambda3_init <= 1.0:
        raise ValueError("lambda3_schedule: lambda3_init must lie in [0, 1]")
    if t < 0 or t > total_steps:
        raise ValueError(f"lambda3_schedule: step {t} outside [0, {total_steps}]")
    frac = t / total_steps
    # convex combination so both endpoints are hit exactly
    return lambda3_init * (1.0 - frac) + frac


def gen_loss(logits: Tensor, targets: Sequence[int], pad_id: int = 0) -> Tensor:
    """Mean token-level negative log-likelihood; padding positions excluded."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("gen_loss: empty target")
    if logits.shape[0] != targets.size:
        raise ValueError(
            f"gen_loss: logits rows {logits.shape[0]} != target length {targets.size}"
        )
    return ad.cross_entropy(logits, targets, ignore_index=pad_id)


def hfm_score(id_cls: Tensor, nl_cls: Tensor) -> Tensor:
    """Unnormalized dot product of the two <cls> representations."""
    a = _flat(id_cls)
    b = _flat(nl_cls)
    if a.shape != b.shape:
        raise ValueError(f"hfm_score: length mismatch {a.shape} vs {b.shape}")
    return ad.sum_all(ad.mul(a, b))


def _flat(t: Tensor) -> Tensor:
    # accept (d,) or (1, d) cls vectors
    if t.data.ndim == 2:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single vector, got shape {t.shape}")
        return ad.mean(t, axis=0)
    return t


def hfm_pair_loss(
    id_anchor: Tensor,
    nl_candidates: Sequence[Tensor],
    nl_anchor: Tensor,
    id_candidates: Sequence[Tensor],
    positive_i2n: int,
    positive_n2i: int,
    tau: float = DEFAULT_TAU,
) -> Tensor:
    """Bidirectional contrastive matching loss for one ID/text pair.

    Both directions run a softmax over K+1 scaled scores against a one-hot
    label; the two picked terms are summed and divided by K+1.
    """
    if tau <= 0:
        raise ValueError("hfm_pair_loss: tau must be positive")
    k_plus_1 = len(nl_candidates)
    if k_plus_1 != len(id_candidates):
        raise ValueError("hfm_pair_loss: candidate sets must have equal size")
    if k_plus_1 < 2:
        raise ValueError("hfm_pair_loss: need at least one negative candidate")
    if not (0 <= positive_i2n < k_plus_1 and 0 <= positive_n2i < k_plus_1):
        raise ValueError("hfm_pair_loss: positive index outside candidate set")
    s_i2n = [hfm_score(id_anchor, n) for n in nl_candidates]
    s_n2i = [hfm_score(i, nl_anchor) for i in id_candidates]
    nll = ad.add(
        softmax_nll(s_i2n, positive_i2n, tau),
        softmax_nll(s_n2i, positive_n2i, tau),
    )
    return ad.scale(nll, 1.0 / k_plus_1)


def softmax_nll(scores: List[Tensor], positive_index: int, tau: float) -> Tensor:
    """-log softmax(scores/tau)[positive_index] over a scalar-score list."""
    if tau <= 0:
        raise ValueError("softmax_nll: tau must be positive")
    if not 0 <= positive_index < len(scores):
        raise ValueError("softmax_nll: positive index outside candidate set")
    row = ad.scale(ad.stack_scalars(scores), 1.0 / tau)
    return ad.cross_entropy(ad.as_row(row), np.asarray([positive_index]))


def hfm_batch_loss(pair_losses: Sequence[Tensor]) -> Tensor:
    """Mean over pair losses within one sub-task batch."""
    if not pair_losses:
        raise ValueError("hfm_batch_loss: empty batch")
    return ad.scale(_sum(pair_losses), 1.0 / len(pair_losses))


def _sum(ts: Sequence[Tensor]) -> Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = ad.add(acc, t)
    return acc


def hfm_task_loss(sub_task_1: Tensor, sub_task_2: Tensor) -> Tensor:
    """Combined matching loss: item-description plus sequential-prediction."""
    return ad.add(sub_task_1, sub_task_2)


def mean_pool(states: Tensor) -> Tensor:
    """Arithmetic mean over the sequence axis: (len, d) -> (d,)."""
    if states.data.ndim != 2 or states.shape[0] < 1:
        raise ValueError(f"mean_pool: expected non-empty (len, d) tensor, got {states.shape}")
    return ad.mean(states, axis=0)


def icl_loss(
    u_target: Tensor,
    u_candidates: Sequence[Tensor],
    positive_index: int,
    tau: float = DEFAULT_TAU,
) -> Tensor:
    """Instruction-contrast loss over pooled generation representations.

    Softmax over dot(u_target, u_i)/tau across the M+1 candidates, one-hot
    cross entropy, divided by M+1.
    """
    if tau <= 0:
        raise ValueError("icl_loss: tau must be positive")
    m_plus_1 = len(u_candidates)
    if m_plus_1 < 2:
        raise ValueError("icl_loss: need at least one negative candidate")
    if not 0 <= positive_index < m_plus_1:
        raise ValueError("icl_loss: positive index outside candidate set")
    scores = [hfm_score(u_target, u) for u in u_candidates]
    return ad.scale(softmax_nll(scores, positive_index, tau), 1.0 / m_plus_1)


def total_loss(
    gen: Tensor,
    hfm: Tensor,
    icl: Tensor,
    weights: LossWeights,
    step: int,
) -> Tensor:
    """Weighted sum of the three objectives at the given training step."""
    lam3 = weights.lambda3(step)
    out = ad.add(
        ad.add(ad.scale(gen, weights.lambda1), ad.scale(hfm, weights.lambda2)),
        ad.scale(icl, lam3),
    )
    return out
