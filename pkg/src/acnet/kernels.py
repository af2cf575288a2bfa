"""Kernel dispatch: the Cython extension when importable, else the numpy fallback.

Set ``ACNET_BACKEND=python`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("ACNET_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        pass


def _f64(x):
    # compiled kernels take C-contiguous float64 buffers
    return np.ascontiguousarray(x, dtype=np.float64)


def span_max_pool(clips):
    return _impl.span_max_pool(_f64(clips))


def iou_map(start, end, n, duration):
    return _impl.iou_map(float(start), float(end), int(n), float(duration))


def greedy_nms(starts, ends, threshold):
    return _impl.greedy_nms(_f64(starts), _f64(ends), float(threshold))


def region_iou(starts, ends, s, e):
    return _impl.region_iou(_f64(starts), _f64(ends), float(s), float(e))


__all__ = ["BACKEND", "span_max_pool", "iou_map", "greedy_nms", "region_iou"]
