import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnet import _pykernels, kernels

_kernels = kernels._impl

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not in use")


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_fallback_span_pool():
    clips = np.array([[1.0, 5.0], [3.0, 2.0], [0.0, 4.0]])
    out = _pykernels.span_max_pool(clips)
    np.testing.assert_array_equal(out[0, 2], [3.0, 5.0])
    np.testing.assert_array_equal(out[2, 0], [0.0, 0.0])


@needs_ext
@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_span_pool_agrees(n, d, seed):
    clips = np.random.default_rng(seed).normal(size=(n, d))
    np.testing.assert_array_equal(_kernels.span_max_pool(clips), _pykernels.span_max_pool(clips))


@needs_ext
@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.floats(0, 19.9), st.floats(0.01, 20), st.floats(1, 40))
def test_iou_map_agrees(n, s, length, duration):
    a = _kernels.iou_map(s, s + length, n, duration)
    b = _pykernels.iou_map(s, s + length, n, duration)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@needs_ext
@settings(max_examples=200, deadline=None)
@given(st.integers(0, 30), st.floats(0, 1), st.integers(0, 2 ** 31))
def test_nms_agrees(n, threshold, seed):
    rng = np.random.default_rng(seed)
    starts = rng.uniform(0, 10, size=n)
    ends = starts + rng.uniform(0.1, 5, size=n)
    assert _kernels.greedy_nms(starts, ends, threshold).tolist() == \
        _pykernels.greedy_nms(starts, ends, threshold).tolist()


@needs_ext
@settings(max_examples=200, deadline=None)
@given(st.integers(0, 5), st.floats(0, 50), st.floats(0.1, 30), st.integers(0, 2 ** 31))
def test_region_iou_agrees(k, s, length, seed):
    rng = np.random.default_rng(seed)
    edges = np.sort(rng.uniform(0, 60, size=2 * k))
    starts, ends = edges[0::2], edges[1::2]
    a = kernels.region_iou(starts, ends, s, s + length)
    b = _pykernels.region_iou(starts, ends, s, s + length)
    assert abs(a - b) < 1e-12
