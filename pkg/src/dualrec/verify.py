"""Self-contained invariant checks behind the ``verify`` CLI command.

Each check is named; the runner prints one PASS/FAIL line per check and
returns the list of failures.  These are the fast oracles (gradients,
masking, closed forms, metrics); the long training-dynamics experiments
live in the test suite.
"""

from __future__ import annotations

import math
import time
from typing import Callable, List, Tuple

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor, finite_diff_check
from .catalog import generate_catalog
from .metrics import ranking_metrics, rating_metrics, text_metrics
from .model import Model, ModelConfig, Span, build_visible_matrix
from .train import TrainConfig, lr_at


def _check_primitive_gradients() -> None:
    rng = np.random.default_rng(0)

    def p(shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    cases: List[Tuple[str, Callable, List[Tensor]]] = [
        ("add", lambda ps: ad.sum_all(ad.add(ps[0], ps[1])), [p((3, 4)), p((3, 4))]),
        ("sub", lambda ps: ad.sum_all(ad.mul(ad.sub(ps[0], ps[1]), ps[0])), [p((3, 4)), p((3, 4))]),
        ("mul", lambda ps: ad.sum_all(ad.mul(ps[0], ps[1])), [p((3, 4)), p((3, 4))]),
        ("scale", lambda ps: ad.sum_all(ad.scale(ps[0], 2.5)), [p((5,))]),
        ("matmul", lambda ps: ad.sum_all(ad.matmul(ps[0], ps[1])), [p((3, 4)), p((4, 2))]),
        ("exp", lambda ps: ad.sum_all(ad.exp(ps[0])), [p((4,))]),
        ("log", lambda ps: ad.sum_all(ad.log(ad.exp(ps[0]))), [p((4,))]),
        ("tanh", lambda ps: ad.sum_all(ad.tanh(ps[0])), [p((4,))]),
        ("relu", lambda ps: ad.sum_all(ad.relu(ps[0])), [p((7,))]),
        ("transpose", lambda ps: ad.sum_all(ad.mul(ad.transpose(ps[0]), ps[1])), [p((3, 4)), p((4, 3))]),
        ("concat", lambda ps: ad.sum_all(ad.mul(ad.concat([ps[0], ps[1]], axis=0), ps[2])), [p((2, 3)), p((1, 3)), p((3, 3))]),
        ("slice_cols", lambda ps: ad.sum_all(ad.slice_cols(ps[0], 1, 3)), [p((3, 4))]),
        ("mean", lambda ps: ad.sum_all(ad.mean(ps[0], axis=1)), [p((3, 4))]),
        ("mean_all", lambda ps: ad.mean_all(ad.mul(ps[0], ps[0])), [p((3, 4))]),
        ("stack_scalars", lambda ps: ad.sum_all(ad.mul(ad.stack_scalars([ad.sum_all(ps[0]), ad.mean_all(ps[0])]), Tensor([2.0, 3.0]))), [p((3,))]),
        ("as_row", lambda ps: ad.sum_all(ad.matmul(ad.as_row(ps[0]), ps[1])), [p((4,)), p((4, 2))]),
        ("embedding", lambda ps: ad.sum_all(ad.mul(ad.embedding(ps[0], np.array([0, 2, 2])), ps[1])), [p((4, 3)), p((3, 3))]),
        ("layer_norm", lambda ps: ad.sum_all(ad.mul(ad.layer_norm(ps[0], ps[1], ps[2]), ps[3])), [p((3, 6)), p((6,)), p((6,)), p((3, 6))]),
        ("masked_softmax", lambda ps: ad.sum_all(ad.mul(ad.masked_softmax(ps[0], np.array([[True, True, False], [True, True, True]])), ps[1])), [p((2, 3)), p((2, 3))]),
        ("cross_entropy", lambda ps: ad.cross_entropy(ps[0], np.array([1, 0, 2])), [p((3, 4))]),
    ]
    for name, f, params in cases:
        err = finite_diff_check(f, params, eps=1e-5, max_coords_per_param=8, seed=1)
        assert err < 1e-4, f"{name}: finite-difference error {err:.2e}"


def _check_masked_softmax_exactness() -> None:
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 8))
    mask = rng.random((6, 8)) < 0.6
    mask[:, 0] = True
    out = ad.masked_softmax(Tensor(logits), mask).data
    assert np.all(out[~mask] == 0.0), "masked entries must be exactly zero"
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6), "rows must sum to 1"
    bumped = logits.copy()
    bumped[~mask] += rng.normal(size=(~mask).sum()) * 10
    out2 = ad.masked_softmax(Tensor(bumped), mask).data
    assert np.array_equal(out, out2), "masked logits must not influence the output"


def _check_visible_matrix_and_encoder() -> None:
    config = ModelConfig(n_layers=1, d_m=16, n_heads=2, vocab_size=32,
                         max_id_len=16, max_nl_len=16, max_target_len=8, ff_mult=2)
    model = Model.create(config, seed=3)
    spans = [Span("cls", 0, 1), Span("user", 1, 2), Span("item_0", 2, 4), Span("item_1", 4, 6)]
    vm = build_visible_matrix(spans, 6)
    assert not vm[2, 4] and not vm[5, 3], "distinct item spans must be invisible"
    assert vm[0].all() and vm[:, 1].all(), "cls and user bridge everything"
    tokens = [1, 4, 5, 6, 7, 8]
    base = model.encode(tokens, vm).states.data.copy()
    model.params["tok_emb"].data[7] += 0.5  # token at position 4 (item_1)
    after = model.encode(tokens, vm).states.data
    assert np.array_equal(base[2], after[2]) and np.array_equal(base[3], after[3]), (
        "perturbing an invisible token changed a masked row"
    )
    # shared weights: full-visibility run equals the plain text-encoder run
    a = model.encode(tokens).states.data
    b = model.encode(tokens, np.ones((6, 6), dtype=bool)).states.data
    assert np.array_equal(a, b), "shared-encoder identity violated"


def _check_contrastive_closed_forms() -> None:
    for k in (2, 5, 10):
        v = Tensor(np.ones(4))
        cands = [v for _ in range(k + 1)]
        loss = losses.hfm_pair_loss(v, cands, v, cands, 0, 0, tau=1.0)
        want = 2.0 * math.log(k + 1) / (k + 1)
        assert abs(float(loss.data) - want) < 1e-9, f"uniform HFM, K={k}"
    for m in (2, 5):
        u = Tensor(np.ones(4))
        loss = losses.icl_loss(u, [u for _ in range(m + 1)], 0, tau=1.0)
        want = math.log(m + 1) / (m + 1)
        assert abs(float(loss.data) - want) < 1e-9, f"uniform ICL, M={m}"


def _check_schedules() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        l0 = float(rng.random())
        total = int(rng.integers(1, 1000))
        assert losses.lambda3_schedule(0, total, l0) == l0
        assert losses.lambda3_schedule(total, total, l0) == 1.0
    cfg = TrainConfig(total_steps=200)
    warm = math.ceil(cfg.warmup_fraction * cfg.total_steps)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(warm, cfg) == cfg.peak_lr
    assert lr_at(cfg.total_steps, cfg) == cfg.floor_lr


def _check_metric_oracles() -> None:
    out = ranking_metrics([["a", "b", "c", "d", "e", "f"]], ["c"], ks=(5,))
    assert out["hr@5"] == 1.0 and abs(out["ndcg@5"] - 0.5) < 1e-12
    out = rating_metrics([4.0, 2.0], [5.0, 2.0])
    assert abs(out["rmse"] - math.sqrt(0.5)) < 1e-12 and out["mae"] == 0.5
    tm = text_metrics([["a", "b", "c"]], [["a", "b", "d"]], bleu_n=2)
    assert abs(tm["rouge1"] - 2.0 / 3.0) < 1e-12 and abs(tm["rouge2"] - 0.5) < 1e-12


def _check_total_loss_gradient() -> None:
    # tiny end-to-end gradient probe through encoder + matching loss
    config = ModelConfig(n_layers=1, d_m=8, n_heads=2, vocab_size=24,
                         max_id_len=8, max_nl_len=8, max_target_len=4, ff_mult=2)
    model = Model.create(config, seed=7)
    params = [model.params["tok_emb"], model.params["out_proj"]]

    def f(_):
        enc_a = model.encode([1, 4, 5])
        enc_b = model.encode([1, 6, 7])
        logits = model.decode_teacher_forced(enc_a, enc_b, [4, 2])
        g = losses.gen_loss(logits, [4, 2])
        c = losses.hfm_pair_loss(
            enc_a.cls, [enc_b.cls, enc_a.cls], enc_b.cls, [enc_a.cls, enc_b.cls],
            0, 1, tau=0.5,
        )
        return ad.add(g, c)

    err = finite_diff_check(f, params, eps=1e-5, max_coords_per_param=4, seed=11)
    assert err < 1e-4, f"composite gradient error {err:.2e}"


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("primitive-gradients", _check_primitive_gradients),
    ("masked-softmax-exactness", _check_masked_softmax_exactness),
    ("visible-matrix-and-shared-encoder", _check_visible_matrix_and_encoder),
    ("contrastive-closed-forms", _check_contrastive_closed_forms),
    ("schedule-endpoints", _check_schedules),
    ("metric-oracles", _check_metric_oracles),
    ("composite-loss-gradient", _check_total_loss_gradient),
]


def run_verification(verbose: bool = True) -> List[str]:
    """Run all named checks; returns the names of any failures."""
    failures = []
    for name, fn in CHECKS:
        start = time.time()
        try:
            fn()
        except AssertionError as exc:
            failures.append(name)
            if verbose:
                print(f"FAIL {name}: {exc}")
            continue
        if verbose:
            print(f"PASS {name} ({time.time() - start:.2f}s)")
    return failures
