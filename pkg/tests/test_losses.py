import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnet import autodiff as ad
from acnet.config import LossWeights
from acnet.errors import ContractError
from acnet.losses import (ContrastiveBatch, accl, accl_s2v, accl_v2s, info_nce, regression_loss,
                          total_loss)


def unit_rows(rng, n, d=6):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def leaf(x):
    return ad.Variable(x, requires_grad=True)


def make_batch(rng, pairs, n_aux, d=6):
    aux = leaf(unit_rows(rng, n_aux, d)) if n_aux else None
    owner = rng.integers(0, pairs, size=n_aux) if n_aux else None
    return ContrastiveBatch(leaf(unit_rows(rng, pairs, d)), leaf(unit_rows(rng, pairs, d)), aux, owner)


def scalar_nce(anchors, candidates, tau):
    """Per-anchor softmax cross-entropy written with scalar loops."""
    total = 0.0
    for i, a in enumerate(anchors):
        logits = [float(np.dot(a, c)) / tau for c in candidates]
        top = max(logits)
        lse = top + math.log(sum(math.exp(v - top) for v in logits))
        total += lse - logits[i]
    return total / len(anchors)


def symmetric_nce(v, s, tau_v, tau_s, lam_v, lam_s):
    return lam_v * scalar_nce(v, s, tau_v) + lam_s * scalar_nce(s, v, tau_s)


class TestV2S:
    def test_single_pair(self):
        rng = np.random.default_rng(0)
        assert accl_v2s(make_batch(rng, 1, 0), 0.1).item() == 0.0

    def test_symmetric_aux(self):
        v = np.array([[1.0, 0.0]])
        s = np.array([[0.6, 0.8]])
        twin = np.array([[0.6, -0.8]])
        for tau in (0.05, 0.1, 1.0):
            out = accl_v2s(ContrastiveBatch(ad.Variable(v), ad.Variable(s), ad.Variable(twin)), tau).item()
            assert abs(out - math.log(2)) < 1e-12

    def test_three_pairs_two_aux(self):
        rng = np.random.default_rng(1)
        b = make_batch(rng, 3, 2)
        cands = np.vstack([b.gt_sentences.value, b.aux_sentences.value])
        expect = scalar_nce(b.gt_moments.value, cands, 0.1)
        assert abs(accl_v2s(b, 0.1).item() - expect) < 1e-12

    def test_empty_batch(self):
        with pytest.raises(ContractError):
            ContrastiveBatch(ad.Variable(np.zeros((0, 3))), ad.Variable(np.zeros((0, 3))))

    def test_mismatched_pairs(self):
        with pytest.raises(ContractError):
            ContrastiveBatch(ad.Variable(np.ones((2, 3))), ad.Variable(np.ones((1, 3))))


class TestS2V:
    def test_single_pair(self):
        assert accl_s2v(make_batch(np.random.default_rng(2), 1, 3), 0.1).item() == 0.0

    def test_aux_invariance(self):
        rng = np.random.default_rng(3)
        b = make_batch(rng, 4, 3)
        plain = ContrastiveBatch(b.gt_moments, b.gt_sentences)
        assert accl_s2v(b, 0.1).item() == accl_s2v(plain, 0.1).item()

    def test_four_pairs(self):
        rng = np.random.default_rng(4)
        b = make_batch(rng, 4, 0)
        expect = scalar_nce(b.gt_sentences.value, b.gt_moments.value, 0.1)
        assert abs(accl_s2v(b, 0.1).item() - expect) < 1e-12


class TestACCL:
    def test_zero_weights(self):
        b = make_batch(np.random.default_rng(5), 3, 2)
        assert accl(b, LossWeights(lambda_v=0, lambda_s=0)).item() == 0.0

    def test_v2s_only(self):
        b = make_batch(np.random.default_rng(6), 3, 2)
        assert accl(b, LossWeights(lambda_v=1, lambda_s=0)).item() == accl_v2s(b, 0.1).item()

    def test_weighted_sum(self):
        rng = np.random.default_rng(7)
        b = make_batch(rng, 5, 3)
        w = LossWeights(lambda_v=0.7, lambda_s=1.3, tau_v=0.2, tau_s=0.05)
        v, s = b.gt_moments.value, b.gt_sentences.value
        expect = 0.7 * scalar_nce(v, np.vstack([s, b.aux_sentences.value]), 0.2) + 1.3 * scalar_nce(s, v, 0.05)
        assert abs(accl(b, w).item() - expect) < 1e-12

    def test_aux_moments_get_zero_gradient(self):
        rng = np.random.default_rng(8)
        b = make_batch(rng, 3, 2)
        b.aux_moments = leaf(unit_rows(rng, 2))
        ad.backward(accl(b, LossWeights()))
        assert b.aux_moments.grad is None or np.all(b.aux_moments.grad == 0)
        assert np.any(b.aux_sentences.grad != 0)

    def test_aux_raises_v2s(self):
        rng = np.random.default_rng(9)
        b = make_batch(rng, 3, 0)
        base = accl_v2s(b, 0.1).item()
        extra = ContrastiveBatch(b.gt_moments, b.gt_sentences, ad.Variable(b.gt_moments.value[:1]))
        assert accl_v2s(extra, 0.1).item() > base

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2 ** 31))
    def test_no_aux_is_symmetric_infonce(self, pairs, seed):
        b = make_batch(np.random.default_rng(seed), pairs, 0)
        w = LossWeights()
        expect = symmetric_nce(b.gt_moments.value, b.gt_sentences.value, w.tau_v, w.tau_s, w.lambda_v, w.lambda_s)
        assert abs(accl(b, w).item() - expect) < 1e-12

    def test_vanilla_ignores_aux(self):
        rng = np.random.default_rng(10)
        b = make_batch(rng, 3, 2)
        plain = ContrastiveBatch(b.gt_moments, b.gt_sentences)
        assert accl(b, LossWeights(), "vanilla").item() == accl(plain, LossWeights()).item()

    def test_no_apn_pulls_aux_moments(self):
        rng = np.random.default_rng(11)
        b = make_batch(rng, 3, 2)
        b.aux_moments = leaf(unit_rows(rng, 2))
        ad.backward(accl(b, LossWeights(), "no_apn"))
        assert np.any(b.aux_moments.grad != 0)

    def test_no_andm_adds_aux_moments_to_s2v(self):
        rng = np.random.default_rng(12)
        b = make_batch(rng, 3, 2)
        b.aux_moments = leaf(unit_rows(rng, 2))
        w = LossWeights(lambda_v=0, lambda_s=1)
        v, s = b.gt_moments.value, b.gt_sentences.value
        expect = scalar_nce(s, np.vstack([v, b.aux_moments.value]), 0.1)
        assert abs(accl(b, w, "no_andm").item() - expect) < 1e-12

    def test_unknown_mode(self):
        b = make_batch(np.random.default_rng(13), 2, 1)
        b.aux_moments = leaf(unit_rows(np.random.default_rng(0), 1))
        with pytest.raises(ContractError):
            accl(b, LossWeights(), "other")

    def test_info_nce_nonnegative(self):
        rng = np.random.default_rng(14)
        for n in range(1, 6):
            assert info_nce(ad.Variable(unit_rows(rng, n)), ad.Variable(unit_rows(rng, n + 2)), 0.1).item() >= 0


def scalar_bce(p, y):
    out = 0.0
    for pi, yi in zip(p, y):
        pi = min(max(pi, 1e-7), 1 - 1e-7)
        out -= yi * math.log(pi) + (1 - yi) * math.log(1 - pi)
    return out / len(p)


class TestRegression:
    def test_perfect(self):
        y = np.array([0.0, 1.0, 1.0, 0.0])
        assert regression_loss(ad.Variable(y.reshape(-1, 1)), y).item() <= 1e-6

    def test_half(self):
        assert abs(regression_loss(ad.Variable([[0.5]]), [1.0]).item() - math.log(2)) < 1e-12

    def test_map_oracle(self):
        rng = np.random.default_rng(15)
        p = rng.uniform(0.01, 0.99, size=64)
        y = np.clip(rng.uniform(-0.5, 1.5, size=64), 0, 1)
        valid = np.triu(np.ones((8, 8), dtype=bool)).reshape(-1)
        got = regression_loss(ad.Variable(p.reshape(-1, 1)), y, valid).item()
        assert abs(got - scalar_bce(p[valid], y[valid])) < 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(16)
        p, y = rng.uniform(0.05, 0.95, size=20), rng.uniform(size=20)
        perm = rng.permutation(20)
        a = regression_loss(ad.Variable(p.reshape(-1, 1)), y).item()
        b = regression_loss(ad.Variable(p[perm].reshape(-1, 1)), y[perm]).item()
        assert abs(a - b) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(17)
        x = leaf(rng.normal(size=(10, 1)))
        y = rng.uniform(size=10)
        f = lambda p: regression_loss(ad.sigmoid(p["x"]), y)  # noqa: E731
        assert ad.finite_diff_check(f, {"x": x}) < 1e-6

    def test_no_valid_cells(self):
        with pytest.raises(ContractError):
            regression_loss(ad.Variable([[0.5]]), [1.0], [False])


class TestTotal:
    def test_weighted_sum(self):
        l_c, l_r = ad.Variable([[2.0]]), ad.Variable([[3.0]])
        assert total_loss(l_c, l_r, LossWeights()).item() == 0.05 * 2.0 + 3.0

    def test_pure_branches(self):
        l_c, l_r = ad.Variable([[2.0]]), ad.Variable([[3.0]])
        assert total_loss(l_c, l_r, LossWeights(lambda_c=0)).item() == 3.0
        assert total_loss(l_c, l_r, LossWeights(lambda_r=0)).item() == 2.0 * 0.05

    def test_zero_weight_term_not_in_graph(self):
        l_c = leaf([[2.0]])
        ad.backward(total_loss(l_c, leaf([[3.0]]), LossWeights(lambda_c=0)))
        assert l_c.grad is None
