"""Intervals, the 2D candidate-moment map, and map construction.

Cell ``(i, j)`` with ``i <= j`` is the span from the start of clip ``i`` to the
end of clip ``j``.  Maps are stored flattened, one row per cell in row-major
order (``N_v * N_v`` rows), so they plug directly into the matrix ops of
:mod:`acnet.autodiff`.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ContractError, InvalidCellError


@dataclass(frozen=True, order=True)
class MomentInterval:
    start: float
    end: float

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ContractError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    def as_list(self) -> list[float]:
        return [self.start, self.end]


@dataclass
class ClipSequence:
    features: np.ndarray
    duration: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ContractError("clip features must be a non-empty (N_v, d_v) matrix")
        if self.duration <= 0:
            raise ContractError("duration must be positive")

    @property
    def n_clips(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class TemporalMap2D:
    """``values`` holds one row per cell: an ndarray or a differentiable Variable."""

    n_clips: int
    values: np.ndarray | ad.Variable
    valid: np.ndarray = field(init=False)

    def __post_init__(self):
        self.valid = valid_mask(self.n_clips)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def grid(self) -> np.ndarray:
        raw = self.values.value if isinstance(self.values, ad.Variable) else self.values
        return raw.reshape(self.n_clips, self.n_clips, -1)


@functools.lru_cache(maxsize=None)
def valid_mask(n_clips: int) -> np.ndarray:
    mask = np.triu(np.ones((n_clips, n_clips), dtype=bool))
    mask.setflags(write=False)
    return mask


@functools.lru_cache(maxsize=None)
def valid_cells(n_clips: int) -> np.ndarray:
    """Flat indices of the valid cells, row-major (so sorted by start, then end)."""
    idx = np.flatnonzero(valid_mask(n_clips).reshape(-1))
    idx.setflags(write=False)
    return idx


@functools.lru_cache(maxsize=None)
def cell_bounds(n_clips: int, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Start and end times of every valid cell, aligned with :func:`valid_cells`."""
    i, j = np.divmod(valid_cells(n_clips), n_clips)
    step = duration / n_clips
    return i * step, (j + 1) * step


def sample_clips(frame_features, n_clips: int, duration: float) -> ClipSequence:
    """Average frames into ``n_clips`` fixed-stride windows.

    Window ``i`` covers frames ``[floor(i*T/N), floor((i+1)*T/N))``; an empty
    window copies the frame nearest to its position.
    """
    frames = np.asarray(frame_features, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None]
    t = frames.shape[0]
    if t < 1 or n_clips < 1:
        raise ContractError("need at least one frame and one clip")
    out = np.empty((n_clips, frames.shape[1]))
    for i in range(n_clips):
        lo, hi = (i * t) // n_clips, ((i + 1) * t) // n_clips
        if hi > lo:
            out[i] = frames[lo:hi].mean(axis=0)
        else:
            out[i] = frames[min(lo, t - 1)]
    return ClipSequence(out, duration)


def candidate_interval(i: int, j: int, n_clips: int, duration: float) -> MomentInterval:
    if not (0 <= i <= j < n_clips):
        raise InvalidCellError(f"cell ({i}, {j}) is not a valid candidate for N_v={n_clips}")
    step = duration / n_clips
    return MomentInterval(i * step, (j + 1) * step)


def temporal_iou(a: MomentInterval, b: MomentInterval) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    return inter / (max(a.end, b.end) - min(a.start, b.start))


def encode_interval_map(t: MomentInterval, n_clips: int, duration: float) -> TemporalMap2D:
    if t.end > duration + 1e-9:
        raise ContractError(f"interval {t.as_list()} exceeds duration {duration}")
    grid = kernels.iou_map(float(t.start), float(t.end), int(n_clips), float(duration))
    return TemporalMap2D(n_clips, grid.reshape(-1, 1))


def iou_label_map(gt: MomentInterval, n_clips: int, duration: float,
                  t_min: float = 0.5, t_max: float = 1.0) -> TemporalMap2D:
    if not t_min < t_max:
        raise ContractError("t_min must be below t_max")
    iou = kernels.iou_map(float(gt.start), float(gt.end), int(n_clips), float(duration))
    y = np.clip((iou - t_min) / (t_max - t_min), 0.0, 1.0)
    y[~valid_mask(n_clips)] = 0.0
    return TemporalMap2D(n_clips, y.reshape(-1, 1))


def best_cell(gt: MomentInterval, n_clips: int, duration: float) -> int:
    """Flat index of the valid cell with maximal IoU against ``gt``.

    Ties go to the earlier start (then the earlier end), i.e. the first in
    row-major order.
    """
    iou = kernels.iou_map(float(gt.start), float(gt.end), int(n_clips), float(duration)).reshape(-1)
    cells = valid_cells(n_clips)
    return int(cells[np.argmax(iou[cells])])


# ---------------------------------------------------------------------------
# feature map


@dataclass
class ConvLayer:
    """2D convolution over the map: ``weight`` is (K*K*C_in, C_out), ``bias`` is (1, C_out)."""

    weight: ad.Variable
    bias: ad.Variable
    kernel: int


@functools.lru_cache(maxsize=None)
def _conv_index(n_clips: int, kernel: int) -> np.ndarray:
    """Im2col gather indices for 'same' padding; -1 marks padding."""
    pad_lo = (kernel - 1) // 2
    i, j = np.divmod(np.arange(n_clips * n_clips), n_clips)
    cols = []
    for a in range(kernel):
        for b in range(kernel):
            ii, jj = i + a - pad_lo, j + b - pad_lo
            inside = (ii >= 0) & (ii < n_clips) & (jj >= 0) & (jj < n_clips)
            cols.append(np.where(inside, ii * n_clips + jj, -1))
    idx = np.stack(cols, axis=1)
    idx.setflags(write=False)
    return idx


def conv_map(x: ad.Variable, layer: ConvLayer, n_clips: int) -> ad.Variable:
    """One masked convolution + ReLU over a flattened (N*N, C) map whose invalid rows are 0."""
    idx = _conv_index(n_clips, layer.kernel)
    c_in = x.shape[1]
    patches = ad.gather_rows(x, idx.reshape(-1))
    patches = ad.reshape(patches, (n_clips * n_clips, layer.kernel * layer.kernel * c_in))
    out = ad.relu(patches @ layer.weight + layer.bias)
    return ad.mul(out, valid_mask(n_clips).reshape(-1, 1).astype(np.float64))


def pooled_map(clips: ClipSequence) -> np.ndarray:
    """Span max-pooling: row (i, j) is the elementwise max of clips i..j; invalid rows 0."""
    n = clips.n_clips
    return kernels.span_max_pool(np.ascontiguousarray(clips.features)).reshape(n * n, clips.dim)


def build_feature_map(clips: ClipSequence, layers: Sequence[ConvLayer] = ()) -> TemporalMap2D:
    n = clips.n_clips
    x = ad.Variable(pooled_map(clips))
    for layer in layers:
        if layer.weight.shape[0] != layer.kernel ** 2 * x.shape[1]:
            raise ContractError("conv weight does not match the map channels")
        x = conv_map(x, layer, n)
    return TemporalMap2D(n, x)
