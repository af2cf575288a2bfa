import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acnet import autodiff as ad
from acnet.errors import ContractError, DimensionError, NumericDomainError


def param(x):
    return ad.Variable(x, requires_grad=True)


def central_diff(f, x, eps=1e-5):
    """Independent oracle: numerical gradient of a scalar numpy function."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


class TestMatmul:
    def test_identity(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(ad.matmul(np.eye(2), m).value, m)

    def test_hand_arithmetic(self):
        out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        np.testing.assert_array_equal(out.value, [[3.0], [7.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a0, b0 = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
        w = rng.normal(size=(5, 3))
        a, b = param(a0), param(b0)
        ad.backward(ad.sum_all(ad.mul(ad.matmul(a, b), w)))
        assert rel_err(a.grad, central_diff(lambda x: np.sum((x @ b0) * w), a0)) < 1e-6
        assert rel_err(b.grad, central_diff(lambda x: np.sum((a0 @ x) * w), b0)) < 1e-6

    def test_associativity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
            lhs = ad.matmul(ad.matmul(a, b), c).value
            rhs = ad.matmul(a, ad.matmul(b, c)).value
            assert rel_err(lhs, rhs) < 1e-9


class TestSoftmax:
    def test_uniform_row(self):
        np.testing.assert_allclose(ad.softmax_rows([[0.0, 0.0, 0.0]]).value, [[1 / 3] * 3], atol=1e-15)

    def test_no_overflow(self):
        out = ad.softmax_rows([[1000.0, 0.0]]).value
        assert abs(out[0, 0] - 1.0) < 1e-12 and abs(out[0, 1]) < 1e-12

    def test_jacobian(self):
        rng = np.random.default_rng(2)
        x0 = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 4))

        def f(x):
            z = np.exp(x - x.max(axis=1, keepdims=True))
            return np.sum(w * z / z.sum(axis=1, keepdims=True))

        x = param(x0)
        ad.backward(ad.sum_all(ad.mul(ad.softmax_rows(x), w)))
        assert rel_err(x.grad, central_diff(f, x0)) < 1e-6

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-1e3, 1e3)))
    def test_rows_sum_to_one(self, x):
        s = ad.softmax_rows(x).value
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(ad.elementwise("relu", [-1.0, 0.0, 2.0]).value, [0, 0, 2])

    def test_sigmoid_zero(self):
        assert ad.elementwise("sigmoid", 0.0).item() == 0.5

    def test_power(self):
        assert ad.elementwise("power", 0.25, 0.5).item() == 0.5

    def test_log_domain(self):
        with pytest.raises(NumericDomainError):
            ad.log([1.0, 0.0])

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            ad.elementwise("tanh", 1.0)

    def test_nonfinite_is_error(self):
        with pytest.raises(NumericDomainError):
            ad.exp([1000.0])

    @pytest.mark.parametrize("op,fn,np_fn", [
        ("relu", ad.relu, lambda x: np.maximum(x, 0)),
        ("sigmoid", ad.sigmoid, lambda x: 1 / (1 + np.exp(-x))),
        ("exp", ad.exp, np.exp),
        ("log", lambda v: ad.log(v), np.log),
        ("power", lambda v: ad.power(v, 1.5), lambda x: x ** 1.5),
    ])
    def test_unary_gradients(self, op, fn, np_fn):
        rng = np.random.default_rng(3)
        x0 = rng.uniform(0.2, 2.0, size=(3, 3)) * rng.choice([-1, 1], size=(3, 3))
        if op in ("log", "power"):
            x0 = np.abs(x0)
        w = rng.normal(size=x0.shape)
        x = param(x0)
        ad.backward(ad.sum_all(ad.mul(fn(x), w)))
        assert rel_err(x.grad, central_diff(lambda v: np.sum(np_fn(v) * w), x0)) < 1e-6

    def test_broadcast_add_gradient(self):
        rng = np.random.default_rng(4)
        x0, b0 = rng.normal(size=(4, 3)), rng.normal(size=(1, 3))
        x, b = param(x0), param(b0)
        ad.backward(ad.sum_all(ad.mul(ad.add(x, b), x0)))
        np.testing.assert_allclose(b.grad, x0.sum(axis=0, keepdims=True))


class TestNormalize:
    def test_three_four(self):
        np.testing.assert_allclose(ad.l2_normalize_rows([[3.0, 4.0]]).value, [[0.6, 0.8]], atol=1e-15)

    def test_unit_row_unchanged(self):
        row = np.array([[0.6, 0.8]])
        np.testing.assert_allclose(ad.l2_normalize_rows(row).value, row, atol=1e-15)

    def test_zero_row(self):
        with pytest.raises(NumericDomainError):
            ad.l2_normalize_rows([[0.0, 0.0], [1.0, 0.0]])

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-100, 100)).filter(
                      lambda x: np.all(np.linalg.norm(x, axis=1) > 1e-3)))
    def test_unit_norm_and_idempotent(self, x):
        y = ad.l2_normalize_rows(x).value
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(ad.l2_normalize_rows(y).value, y, atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x0, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        x = param(x0)
        ad.backward(ad.sum_all(ad.mul(ad.l2_normalize_rows(x), w)))
        f = lambda v: np.sum(w * v / np.linalg.norm(v, axis=1, keepdims=True))  # noqa: E731
        assert rel_err(x.grad, central_diff(f, x0)) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        w = param(np.arange(4.0).reshape(2, 2))
        ad.backward(ad.sum_all(w))
        np.testing.assert_array_equal(w.grad, np.ones((2, 2)))

    def test_square_norm(self):
        w0 = np.array([[1.0, -2.0], [0.5, 3.0]])
        w = param(w0)
        ad.backward(ad.sum_all(ad.mul(w, w)))
        np.testing.assert_array_equal(w.grad, 2 * w0)

    def test_accumulates_without_reset(self):
        w = param(np.ones((2, 2)))
        loss = ad.sum_all(ad.mul(w, w))
        ad.backward(loss)
        ad.backward(loss)
        np.testing.assert_array_equal(w.grad, 4 * np.ones((2, 2)))
        ad.zero_grad([w])
        assert w.grad is None

    def test_non_scalar_seed(self):
        with pytest.raises(ContractError):
            ad.backward(param(np.ones((2, 2))))

    def test_shared_subexpression(self):
        x = param([[2.0]])
        y = ad.mul(x, x)
        ad.backward(ad.add(y, y))
        assert x.grad[0, 0] == 8.0

    def test_gather_rows_padding_and_gradient(self):
        x = param(np.arange(6.0).reshape(3, 2))
        out = ad.gather_rows(x, [2, -1, 2, 0])
        np.testing.assert_array_equal(out.value, [[4, 5], [0, 0], [4, 5], [0, 1]])
        ad.backward(ad.sum_all(out))
        np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [2, 2]])

    def test_concat_gradients(self):
        a, b = param(np.ones((2, 1))), param(np.ones((2, 2)))
        w = np.arange(6.0).reshape(2, 3)
        ad.backward(ad.sum_all(ad.mul(ad.concat_cols([a, b]), w)))
        np.testing.assert_array_equal(a.grad, w[:, :1])
        np.testing.assert_array_equal(b.grad, w[:, 1:])


class TestFiniteDiffCheck:
    def test_quadratic(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(3, 3))
        x = param(rng.normal(size=(3, 1)))
        f = lambda p: ad.sum_all(ad.mul(p["x"], ad.matmul(a, p["x"])))  # noqa: E731
        assert ad.finite_diff_check(f, {"x": x}) < 1e-8

    def test_dead_relu_entries(self):
        x = param([[-1.0, -2.0, 3.0]])
        errs = ad.gradient_errors(lambda p: ad.sum_all(ad.relu(p["x"])), {"x": x})
        assert errs["x"] < 1e-8

    def test_log_softmax_and_clip(self):
        rng = np.random.default_rng(7)
        x = param(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        f = lambda p: ad.sum_all(ad.mul(ad.log_softmax_rows(p["x"]), w))  # noqa: E731
        assert ad.finite_diff_check(f, {"x": x}) < 1e-6

    def test_sequence_params(self):
        x = param([[1.0, 2.0]])
        assert ad.finite_diff_check(lambda p: ad.sum_all(ad.mul(p["0"], p["0"])), [x]) < 1e-8
