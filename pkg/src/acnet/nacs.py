"""Non-auxiliary caption suppression.

Greedy selection of dense captions: repeatedly take the highest-confidence
caption, add its interval to the annotated region, and decay every remaining
confidence by a Gaussian of its overlap with that region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError
from .temporal import MomentInterval


@dataclass
class CaptionCandidate:
    sentence_embedding: np.ndarray
    interval: MomentInterval
    sentence_conf: float
    proposal_conf: float

    def __post_init__(self):
        self.sentence_embedding = np.asarray(self.sentence_embedding, dtype=np.float64).reshape(-1)
        if not (math.isfinite(self.sentence_conf) and math.isfinite(self.proposal_conf)):
            raise ContractError("caption confidences must be finite")


class AnnotatedRegion:
    """Union of intervals kept as sorted, disjoint, merged spans."""

    def __init__(self, intervals: Iterable[MomentInterval] = ()):
        self._spans: list[tuple[float, float]] = []
        for t in intervals:
            self.add(t)

    @property
    def spans(self) -> list[tuple[float, float]]:
        return list(self._spans)

    def add(self, t: MomentInterval) -> None:
        lo, hi = t.start, t.end
        merged = []
        for s, e in self._spans:
            if e < lo or s > hi:
                merged.append((s, e))
            else:
                lo, hi = min(lo, s), max(hi, e)
        merged.append((lo, hi))
        merged.sort()
        self._spans = merged

    def copy(self) -> "AnnotatedRegion":
        out = AnnotatedRegion()
        out._spans = list(self._spans)
        return out

    def covered(self) -> float:
        return sum(e - s for s, e in self._spans)

    def __len__(self) -> int:
        return len(self._spans)

    def __repr__(self) -> str:
        return f"AnnotatedRegion({self._spans})"


@dataclass
class SelectionStep:
    picked: int
    score: float
    remaining: dict[int, float]


@dataclass
class AuxiliarySet:
    selected: list[CaptionCandidate] = field(default_factory=list)
    scores_at_selection: list[float] = field(default_factory=list)
    indices: list[int] = field(default_factory=list)
    trace: list[SelectionStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.selected)


def confidence(e: CaptionCandidate, duration: float) -> float:
    """Caption confidence: summed sentence/proposal scores weighted by relative length."""
    if duration <= 0:
        raise ContractError("duration must be positive")
    return (e.sentence_conf + e.proposal_conf) * (e.interval.end - e.interval.start) / duration


def region_iou(region: AnnotatedRegion, t: MomentInterval) -> float:
    """IoU between ``t`` and the union of the region's spans."""
    if not len(region):
        return 0.0
    spans = region.spans
    starts = np.array([s for s, _ in spans], dtype=np.float64)
    ends = np.array([e for _, e in spans], dtype=np.float64)
    return kernels.region_iou(starts, ends, float(t.start), float(t.end))


def nacs_select(candidates: Sequence[CaptionCandidate], l_c: int, theta: float,
                region: AnnotatedRegion | None = None, duration: float | None = None,
                confidences: Sequence[float] | None = None) -> AuxiliarySet:
    """Select at most ``l_c`` auxiliary captions.

    ``region`` starts as the ground-truth intervals and is extended with each
    pick (a copy is used; the caller's region is untouched).  Confidences are
    computed from the candidates unless given explicitly.  Ties go to the
    lowest original index.
    """
    if theta <= 0:
        raise ContractError("theta must be positive")
    if l_c < 0:
        raise ContractError("l_c must be non-negative")
    if confidences is None:
        if duration is None:
            raise ContractError("duration is required to compute confidences")
        scores = [confidence(e, duration) for e in candidates]
    else:
        if len(confidences) != len(candidates):
            raise ContractError("one confidence per candidate is required")
        scores = [float(c) for c in confidences]

    covered = region.copy() if region is not None else AnnotatedRegion()
    remaining = dict(enumerate(scores))
    out = AuxiliarySet()
    while remaining and len(out) < l_c:
        best = max(remaining, key=lambda k: (remaining[k], -k))
        score = remaining.pop(best)
        out.selected.append(candidates[best])
        out.scores_at_selection.append(score)
        out.indices.append(best)
        covered.add(candidates[best].interval)
        for k in remaining:
            iou = region_iou(covered, candidates[k].interval)
            remaining[k] = math.exp(-(iou * iou) / theta) * remaining[k]
        out.trace.append(SelectionStep(best, score, dict(remaining)))
    return out


def top_confidence_select(candidates: Sequence[CaptionCandidate], l_c: int, duration: float) -> AuxiliarySet:
    """Baseline without suppression: the ``l_c`` highest initial confidences."""
    scores = [confidence(e, duration) for e in candidates]
    order = sorted(range(len(candidates)), key=lambda k: (-scores[k], k))[:max(l_c, 0)]
    out = AuxiliarySet()
    for k in order:
        out.selected.append(candidates[k])
        out.scores_at_selection.append(scores[k])
        out.indices.append(k)
    return out
