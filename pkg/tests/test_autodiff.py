"""Gradient substrate: forward values, backward rules, finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualrec import autodiff as ad
from dualrec.autodiff import NonFiniteError, Tensor, backward, finite_diff_check, no_grad


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=float), requires_grad=rg)


class TestForwardValues:
    def test_add(self):
        out = ad.add(t([1.0, 2.0]), t([3.0, 4.0]))
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_matmul_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        out = ad.matmul(t(np.eye(3)), t(a))
        assert np.array_equal(out.data, a)

    def test_mean_axis(self):
        out = ad.mean(t([[1.0, 3.0], [5.0, 7.0]]), axis=1)
        assert np.array_equal(out.data, [2.0, 6.0])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(2,\).*\(3,\)"):
            ad.add(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            ad.exp(t([1.0, np.inf]))
        with pytest.raises(NonFiniteError):
            ad.log(t([-1.0]))

    def test_primitive_set_is_complete(self):
        cat = ad.primitive_set()
        for name in (
            "matmul", "add", "sub", "mul", "scale", "exp", "log", "tanh",
            "layer_norm", "embedding", "concat", "mean", "transpose",
            "masked_softmax", "cross_entropy",
        ):
            assert name in cat


class TestBackward:
    def test_square_sum(self):
        x = t([1.0, 2.0])
        loss = ad.sum_all(ad.mul(x, x))
        backward(loss)
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_log_exp_identity(self):
        x = t(np.asarray(3.0).reshape(1))
        loss = ad.sum_all(ad.log(ad.exp(x)))
        backward(loss)
        assert np.allclose(x.grad, [1.0])

    def test_accumulation_across_calls(self):
        x = t([1.0, 1.0])
        for _ in range(2):
            backward(ad.sum_all(ad.mul(x, x)))
        assert np.allclose(x.grad, [4.0, 4.0])  # 2x, twice

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            backward(t([1.0, 2.0]))

    def test_no_grad_blocks_graph(self):
        x = t([1.0, 2.0])
        with no_grad():
            out = ad.sum_all(ad.mul(x, x))
        assert out._parents == ()

    def test_embedding_repeated_ids_accumulate(self):
        table = t(np.ones((4, 2)))
        out = ad.embedding(table, np.array([2, 2, 0]))
        backward(ad.sum_all(out))
        assert np.array_equal(table.grad[2], [2.0, 2.0])
        assert np.array_equal(table.grad[0], [1.0, 1.0])
        assert np.array_equal(table.grad[1], [0.0, 0.0])


class TestMaskedSoftmax:
    def test_symmetric(self):
        out = ad.masked_softmax(t([0.0, 0.0]), np.array([True, True]))
        assert np.allclose(out.data, [0.5, 0.5])

    def test_two_way_closed_form(self):
        out = ad.masked_softmax(t([1.0, 2.0, 3.0]), np.array([True, True, False]))
        # softmax over the first two entries only: 1/(1+e), e/(1+e)
        assert np.allclose(out.data, [1 / (1 + np.e), np.e / (1 + np.e), 0.0], atol=1e-4)
        assert out.data[2] == 0.0

    def test_fully_masked_row_rejected(self):
        with pytest.raises(ValueError, match="row 1"):
            ad.masked_softmax(
                t([[0.0, 1.0], [0.0, 1.0]]),
                np.array([[True, True], [False, False]]),
            )

    def test_masked_logit_perturbation_bit_identical(self, rng):
        logits = rng.normal(size=(5, 7))
        mask = rng.random((5, 7)) < 0.5
        mask[:, 0] = True
        base = ad.masked_softmax(t(logits), mask).data
        bumped = logits.copy()
        bumped[~mask] = rng.normal(size=(~mask).sum()) * 100
        again = ad.masked_softmax(t(bumped), mask).data
        assert np.array_equal(base, again)

    def test_rows_sum_to_one(self, rng):
        logits = rng.normal(size=(6, 9))
        mask = rng.random((6, 9)) < 0.7
        mask[:, 3] = True
        out = ad.masked_softmax(t(logits), mask).data
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


class TestCrossEntropy:
    def test_uniform(self):
        logits = t(np.zeros((1, 8)))
        loss = ad.cross_entropy(logits, np.array([3]))
        assert np.isclose(float(loss.data), np.log(8))

    def test_ignore_index(self):
        logits = t(np.zeros((3, 4)))
        full = ad.cross_entropy(logits, np.array([1, 2, 0]))
        partial = ad.cross_entropy(logits, np.array([1, 2, 0]), ignore_index=0)
        assert np.isclose(float(full.data), float(partial.data))  # uniform either way
        with pytest.raises(ValueError, match="no valid"):
            ad.cross_entropy(logits, np.array([0, 0, 0]), ignore_index=0)


class TestFiniteDiff:
    def test_quadratic_tight(self):
        x = t([1.0, 2.0, 3.0])
        err = finite_diff_check(lambda ps: ad.sum_all(ad.mul(ps[0], ps[0])), [x], eps=1e-4)
        assert err < 1e-8

    def test_constant_function(self):
        x = t([1.0, 2.0])
        err = finite_diff_check(lambda ps: ad.sum_all(ad.mul(ps[0], Tensor([0.0, 0.0]))), [x])
        assert err == 0.0

    def test_masked_softmax_cross_entropy_composite(self, rng):
        x = t(rng.normal(size=(3, 5)))
        mask = np.ones((3, 5), dtype=bool)
        mask[:, 4] = False

        def f(ps):
            probs = ad.masked_softmax(ps[0], mask)
            return ad.cross_entropy(ad.log(ad.add(probs, Tensor(np.full((3, 5), 1e-9)))),
                                    np.array([0, 1, 2]))

        assert finite_diff_check(f, [x], eps=1e-5) < 1e-4

    def test_nondeterministic_f_rejected(self):
        x = t([1.0])
        calls = []

        def f(ps):
            calls.append(1)
            return ad.sum_all(ad.scale(ps[0], float(len(calls))))

        with pytest.raises(ValueError, match="deterministic"):
            finite_diff_check(f, [x])

    def test_layer_norm_gradient(self, rng):
        x = t(rng.normal(size=(4, 8)))
        g = t(rng.normal(size=8))
        b = t(rng.normal(size=8))

        def f(ps):
            return ad.sum_all(ad.mul(ad.layer_norm(ps[0], ps[1], ps[2]), Tensor(rng_fixed)))

        rng_fixed = np.random.default_rng(7).normal(size=(4, 8))
        assert finite_diff_check(f, [x, g, b], eps=1e-5) < 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_masked_softmax_is_distribution(vals):
    out = ad.masked_softmax(Tensor(np.array(vals)), np.ones(len(vals), dtype=bool))
    assert np.isclose(out.data.sum(), 1.0, atol=1e-6)
    assert np.all(out.data >= 0)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
)
def test_add_mul_agree_with_numpy(a, b):
    a_, b_ = np.array(a), np.array(b)
    assert np.array_equal(ad.add(Tensor(a_), Tensor(b_)).data, a_ + b_)
    assert np.array_equal(ad.mul(Tensor(a_), Tensor(b_)).data, a_ * b_)


def test_forward_determinism(rng):
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    y1 = ad.tanh(ad.matmul(x, x))
    y2 = ad.tanh(ad.matmul(x, x))
    assert np.array_equal(y1.data, y2.data)
    backward(ad.sum_all(y1))
    g1 = x.grad.copy()
    x.zero_grad()
    backward(ad.sum_all(y2))
    assert np.array_equal(g1, x.grad)
