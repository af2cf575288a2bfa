# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; ``_pykernels`` holds the reference versions."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _iou(double s1, double e1, double s2, double e2) nogil:
    cdef double inter = (e1 if e1 < e2 else e2) - (s1 if s1 > s2 else s2)
    if inter <= 0:
        return 0.0
    cdef double union = (e1 if e1 > e2 else e2) - (s1 if s1 < s2 else s2)
    return inter / union


def span_max_pool(double[:, ::1] clips):
    cdef Py_ssize_t n = clips.shape[0], d = clips.shape[1]
    out_arr = np.zeros((n, n, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, c
    cdef double a, b
    with nogil:
        for i in range(n):
            for c in range(d):
                out[i, i, c] = clips[i, c]
            for j in range(i + 1, n):
                for c in range(d):
                    a = out[i, j - 1, c]
                    b = clips[j, c]
                    out[i, j, c] = a if a > b else b
    return out_arr


def iou_map(double start, double end, Py_ssize_t n, double duration):
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double step = duration / n
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            for j in range(i, n):
                out[i, j] = _iou(i * step, (j + 1) * step, start, end)
    return out_arr


def greedy_nms(double[::1] starts, double[::1] ends, double threshold):
    cdef Py_ssize_t n = starts.shape[0], k, q, nkept = 0
    kept_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] kept = kept_arr
    cdef bint drop
    with nogil:
        for k in range(n):
            drop = False
            for q in range(nkept):
                if _iou(starts[k], ends[k], starts[kept[q]], ends[kept[q]]) > threshold:
                    drop = True
                    break
            if not drop:
                kept[nkept] = k
                nkept += 1
    return kept_arr[:nkept].copy()


def region_iou(double[::1] starts, double[::1] ends, double s, double e):
    cdef Py_ssize_t n = starts.shape[0], k
    cdef double inter = 0.0, covered = 0.0, lo, hi
    with nogil:
        for k in range(n):
            covered += ends[k] - starts[k]
            lo = starts[k] if starts[k] > s else s
            hi = ends[k] if ends[k] < e else e
            if hi > lo:
                inter += hi - lo
    cdef double union = covered + (e - s) - inter
    if union <= 0:
        return 0.0
    return inter / union
