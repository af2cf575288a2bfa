"""Turning a dataset manifest into model-ready samples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .io import DatasetManifest, load_manifest, read_matrix
from .nacs import AnnotatedRegion, AuxiliarySet, CaptionCandidate, nacs_select, top_confidence_select
from .temporal import (ClipSequence, MomentInterval, best_cell, encode_interval_map, iou_label_map,
                       pooled_map, sample_clips)

log = logging.getLogger(__name__)


@dataclass
class GroundingSample:
    sample_id: str
    video_id: str
    clips: ClipSequence
    query: np.ndarray
    gt: MomentInterval
    aux: list[CaptionCandidate] = field(default_factory=list)


@dataclass
class PreparedSample:
    """A sample with every input-only quantity precomputed."""

    sample_id: str
    video_id: str
    n_clips: int
    duration: float
    gt: MomentInterval
    gt_cell: int
    pooled: np.ndarray          # (N*N, d_v) span max-pooled clip features
    query: np.ndarray           # (1, d_s)
    labels: np.ndarray          # (N*N,) scaled IoU labels
    aux_embs: np.ndarray        # (l, d_s)
    aux_maps: np.ndarray        # (l, N*N) IoU encodings of the auxiliary intervals
    aux_cells: np.ndarray       # (l,) best cell of each auxiliary interval
    aux_intervals: list[MomentInterval] = field(default_factory=list)

    @property
    def n_aux(self) -> int:
        return self.aux_embs.shape[0]


def prepare(sample: GroundingSample, config: TrainConfig, pooled: np.ndarray | None = None) -> PreparedSample:
    n, dur = sample.clips.n_clips, sample.clips.duration
    if pooled is None:
        pooled = pooled_map(sample.clips)
    d_s = sample.query.reshape(-1).shape[0]
    aux = sample.aux
    return PreparedSample(
        sample_id=sample.sample_id,
        video_id=sample.video_id,
        n_clips=n,
        duration=dur,
        gt=sample.gt,
        gt_cell=best_cell(sample.gt, n, dur),
        pooled=pooled,
        query=sample.query.reshape(1, -1),
        labels=iou_label_map(sample.gt, n, dur, config.t_min, config.t_max).values.reshape(-1),
        aux_embs=np.array([a.sentence_embedding for a in aux]).reshape(len(aux), d_s),
        aux_maps=np.array([encode_interval_map(a.interval, n, dur).values.reshape(-1) for a in aux]
                          ).reshape(len(aux), n * n),
        aux_cells=np.array([best_cell(a.interval, n, dur) for a in aux], dtype=np.intp),
        aux_intervals=[a.interval for a in aux],
    )


def select_auxiliary(candidates: list[CaptionCandidate], gt_intervals: list[MomentInterval],
                     duration: float, config: TrainConfig) -> AuxiliarySet:
    if config.selection == "top_confidence":
        return top_confidence_select(candidates, config.l_c, duration)
    return nacs_select(candidates, config.l_c, config.theta, AnnotatedRegion(gt_intervals), duration)


def _rows(root: Path, cache: dict, ref) -> np.ndarray:
    if ref.file not in cache:
        cache[ref.file] = np.atleast_2d(read_matrix(root / ref.file))
    return cache[ref.file][ref.row]


def load_samples(manifest: DatasetManifest | str | Path, config: TrainConfig,
                 known_annotations: bool = True) -> list[GroundingSample]:
    """One sample per annotation, with auxiliary captions chosen per video.

    With ``known_annotations`` the selection starts from all of the video's
    ground-truth intervals (training); otherwise from an empty region, as at
    inference time where annotations are unknown.
    """
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    root = manifest.root or Path(".")
    cache: dict[str, np.ndarray] = {}
    by_video: dict[str, list] = {}
    for a in manifest.annotations:
        by_video.setdefault(a.video_id, []).append(a)
    caps = {c.video_id: c.candidates for c in manifest.captions}
    samples = []
    for video in manifest.videos:
        anns = by_video.get(video.id, [])
        if not anns:
            continue
        frames = read_matrix(root / video.features)
        clips = sample_clips(frames, config.n_clips, video.duration)
        candidates = [CaptionCandidate(_rows(root, cache, e.embedding), MomentInterval(*e.interval),
                                       e.sentence_conf, e.proposal_conf) for e in caps.get(video.id, [])]
        gts = [MomentInterval(*a.interval) for a in anns]
        aux = select_auxiliary(candidates, gts if known_annotations else [], video.duration, config)
        for a, gt in zip(anns, gts):
            samples.append(GroundingSample(a.id, video.id, clips, _rows(root, cache, a.query), gt,
                                           list(aux.selected)))
    log.debug("loaded %d samples from %d videos", len(samples), len(manifest.videos))
    return samples


def load_dataset(path, config: TrainConfig, known_annotations: bool = True) -> list[PreparedSample]:
    samples = load_samples(path, config, known_annotations)
    pooled_cache: dict[str, np.ndarray] = {}
    out = []
    for s in samples:
        if s.video_id not in pooled_cache:
            pooled_cache[s.video_id] = pooled_map(s.clips)
        out.append(prepare(s, config, pooled_cache[s.video_id]))
    return out
