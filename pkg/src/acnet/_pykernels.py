"""Pure-Python/numpy versions of the compiled kernels.

Used when the extension is not built, or when ``ACNET_BACKEND=python``.
"""

import numpy as np


def _iou(s1, e1, s2, e2):
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0:
        return 0.0
    return inter / (max(e1, e2) - min(s1, s2))


def span_max_pool(clips):
    clips = np.asarray(clips, dtype=np.float64)
    n, d = clips.shape
    out = np.zeros((n, n, d))
    for i in range(n):
        out[i, i:] = np.maximum.accumulate(clips[i:], axis=0)
    return out


def iou_map(start, end, n, duration):
    edges = np.arange(n + 1) * (duration / n)
    s = edges[:-1][:, None]
    e = edges[1:][None, :]
    inter = np.minimum(e, end) - np.maximum(s, start)
    union = np.maximum(e, end) - np.minimum(s, start)
    out = np.where(inter > 0, inter / union, 0.0)
    return np.triu(out)


def greedy_nms(starts, ends, threshold):
    kept = []
    for k in range(len(starts)):
        if all(_iou(starts[k], ends[k], starts[q], ends[q]) <= threshold for q in kept):
            kept.append(k)
    return np.array(kept, dtype=np.intp)


def region_iou(starts, ends, s, e):
    covered = float(np.sum(np.asarray(ends) - np.asarray(starts)))
    inter = 0.0
    for lo, hi in zip(starts, ends):
        inter += max(0.0, min(hi, e) - max(lo, s))
    union = covered + (e - s) - inter
    return inter / union if union > 0 else 0.0
