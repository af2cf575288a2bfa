"""Synthetic sparse-annotation grounding data.

Each video holds a few latent events on disjoint spans.  Frames inside an
event carry the event's vector plus noise, frames outside carry noise only.
A fraction of the events is annotated with a query (the event vector plus
noise); the rest only show up as dense-caption candidates with jittered
boundaries, which is the situation auxiliary captions are meant to exploit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .io import (AnnotationRecord, CandidateRecord, CaptionRecord, DatasetManifest, EmbeddingRef,
                 VideoRecord, save_manifest, write_matrix)


@dataclass
class SynthConfig:
    n_videos: int = 16
    events_per_video: int = 4
    annotated_fraction: float = 0.5
    dim: int = 32
    jitter: float = 2.0
    noise: float = 0.3
    seed: int = 0
    duration: float = 64.0
    n_frames: int = 64
    # event boundaries snap to this many equal slots
    grid: int = 16
    min_event_slots: int = 2
    max_event_slots: int = 6
    # share of each event vector common to its whole video (0 = independent events)
    topic_weight: float = 0.5
    id_prefix: str = "v"

    def validate(self) -> "SynthConfig":
        if not 0 < self.annotated_fraction <= 1:
            raise ConfigError("annotated_fraction must lie in (0, 1]")
        if self.jitter < 0 or self.noise < 0:
            raise ConfigError("jitter and noise must be non-negative")
        if min(self.n_videos, self.events_per_video, self.dim, self.n_frames, self.grid) < 1:
            raise ConfigError("counts must be positive")
        if not 1 <= self.min_event_slots <= self.max_event_slots:
            raise ConfigError("need 1 <= min_event_slots <= max_event_slots")
        if self.events_per_video * self.min_event_slots > self.grid:
            raise ConfigError(f"{self.events_per_video} events of at least {self.min_event_slots} slots "
                              f"do not fit into {self.grid} slots")
        if not 0 <= self.topic_weight < 1:
            raise ConfigError("topic_weight must lie in [0, 1)")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        if set(data) - known:
            raise ConfigError(f"unknown synth keys: {sorted(set(data) - known)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path | None) -> "SynthConfig":
        if path is None:
            return cls().validate()
        return cls.from_dict(json.loads(Path(path).read_text()))


def _place_events(rng: np.random.Generator, cfg: SynthConfig) -> list[tuple[int, int]]:
    """Disjoint [start_slot, end_slot) spans in random order of appearance."""
    k = cfg.events_per_video
    lengths = rng.integers(cfg.min_event_slots, cfg.max_event_slots + 1, size=k)
    while lengths.sum() > cfg.grid:
        lengths[np.argmax(lengths)] -= 1
    free = cfg.grid - int(lengths.sum())
    gaps = rng.multinomial(free, np.full(k + 1, 1.0 / (k + 1)))
    spans, pos = [], 0
    for length, gap in zip(lengths, gaps):
        pos += int(gap)
        spans.append((pos, pos + int(length)))
        pos += int(length)
    return spans


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def synth_generate(config: SynthConfig, out_dir: str | Path | None = None) -> DatasetManifest:
    """Generate the dataset; with ``out_dir`` the manifest and matrices are written there."""
    cfg = config.validate()
    rng = np.random.default_rng(cfg.seed)
    slot = cfg.duration / cfg.grid
    videos, annotations, captions = [], [], []
    frame_mats: dict[str, np.ndarray] = {}
    queries, cap_embs = [], []
    n_annotated = max(1, int(round(cfg.annotated_fraction * cfg.events_per_video)))
    times = (np.arange(cfg.n_frames) + 0.5) * (cfg.duration / cfg.n_frames)

    for v in range(cfg.n_videos):
        vid = f"{cfg.id_prefix}{v:04d}"
        topic = _unit(rng.standard_normal(cfg.dim))
        spans = _place_events(rng, cfg)
        events = [_unit(math.sqrt(1 - cfg.topic_weight) * _unit(rng.standard_normal(cfg.dim))
                        + math.sqrt(cfg.topic_weight) * topic) for _ in spans]
        noise = cfg.noise / math.sqrt(cfg.dim)
        frames = noise * rng.standard_normal((cfg.n_frames, cfg.dim))
        for (s, e), vec in zip(spans, events):
            inside = (times >= s * slot) & (times < e * slot)
            frames[inside] += vec
        frame_mats[vid] = frames
        videos.append(VideoRecord(vid, cfg.duration, cfg.n_frames, f"features/{vid}.bin"))

        order = rng.permutation(len(spans))
        record = CaptionRecord(vid)
        for rank, k in enumerate(order):
            s, e = spans[k]
            interval = (s * slot, e * slot)
            emb = events[k] + noise * rng.standard_normal(cfg.dim)
            if rank < n_annotated:
                annotations.append(AnnotationRecord(f"{vid}_q{k}", vid, interval,
                                                    EmbeddingRef("queries.bin", len(queries))))
                queries.append(emb)
                continue
            ds, de = (rng.normal(0.0, cfg.jitter, size=2) if cfg.jitter > 0 else (0.0, 0.0))
            cs = min(max(interval[0] + ds, 0.0), cfg.duration)
            ce = min(max(interval[1] + de, 0.0), cfg.duration)
            if ce - cs < slot / 2:
                cs, ce = interval
            applied = math.sqrt(((cs - interval[0]) ** 2 + (ce - interval[1]) ** 2) / 2)
            record.candidates.append(CandidateRecord(
                (float(cs), float(ce)),
                float(rng.uniform(0.85, 1.0)),
                float(math.exp(-applied ** 2 / cfg.duration)),
                EmbeddingRef("captions.bin", len(cap_embs)),
            ))
            cap_embs.append(emb)
        captions.append(record)

    manifest = DatasetManifest(videos, annotations, captions, cfg.dim)
    if out_dir is not None:
        root = Path(out_dir)
        for vid, frames in frame_mats.items():
            write_matrix(root / "features" / f"{vid}.bin", frames)
        write_matrix(root / "queries.bin", np.array(queries).reshape(len(queries), cfg.dim))
        write_matrix(root / "captions.bin", np.array(cap_embs).reshape(len(cap_embs), cfg.dim))
        save_manifest(root / "manifest.json", manifest)
        manifest.root = root
    return manifest
