"""Moment scoring, score fusion, ranking and NMS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .temporal import MomentInterval, cell_bounds


@dataclass(frozen=True)
class RankedPrediction:
    interval: MomentInterval
    score: float


def score_regression(q_r: ad.Variable, cells: ad.Variable) -> ad.Variable:
    """sigmoid(cos(query, cell)) for each row of ``cells``; returns (n, 1)."""
    return ad.sigmoid(score_contrastive(q_r, cells))


def score_contrastive(q_c: ad.Variable, cells: ad.Variable) -> ad.Variable:
    """Cosine similarity between the query row and each cell row; returns (n, 1)."""
    return ad.l2_normalize_rows(cells) @ ad.transpose(ad.l2_normalize_rows(q_c))


def fuse_scores(s_r, s_c, gamma: float = 1.0) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    s_r = np.asarray(s_r, dtype=np.float64)
    s_c = np.clip(np.asarray(s_c, dtype=np.float64), -1.0, 1.0)
    return s_r * ((s_c + 1.0) / 2.0) ** gamma


def rank_cells(scores: np.ndarray, n_clips: int, duration: float) -> list[RankedPrediction]:
    """All valid cells as predictions, best first (stable for equal scores)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    starts, ends = cell_bounds(n_clips, float(duration))
    order = np.argsort(-scores, kind="stable")
    return [RankedPrediction(MomentInterval(float(starts[k]), float(ends[k])), float(scores[k]))
            for k in order]


def nms(preds: Sequence[RankedPrediction], threshold: float) -> list[RankedPrediction]:
    """Greedy suppression; ``preds`` must already be sorted best first."""
    if not preds:
        return []
    starts = np.array([p.interval.start for p in preds], dtype=np.float64)
    ends = np.array([p.interval.end for p in preds], dtype=np.float64)
    keep = kernels.greedy_nms(starts, ends, float(threshold))
    return [preds[k] for k in keep]
