"""On-disk formats: binary matrices, dataset manifests, caption files, checkpoints.

Every write goes to a temporary file in the target directory and is renamed
into place, so a reader never sees a truncated file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .errors import CheckpointError, IntegrityError, ParseError

SCHEMA_VERSION = 1
MATRIX_MAGIC = b"ACMX"
_HEADER = struct.Struct("<4sHcB")


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"


def atomic_write_json(path: str | Path, obj: Any) -> None:
    atomic_write_bytes(path, dump_json(obj).encode())


def write_matrix(path: str | Path, matrix) -> None:
    """Raw little-endian float64 with a small header: magic, version, dtype tag, dims."""
    arr = np.ascontiguousarray(matrix, dtype="<f8")
    header = _HEADER.pack(MATRIX_MAGIC, 1, b"d", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    atomic_write_bytes(path, header + arr.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError("truncated matrix header", str(path))
    magic, version, dtype, ndim = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC or version != 1 or dtype != b"d":
        raise ParseError("not a float64 matrix file", str(path))
    dims = struct.unpack_from(f"<{ndim}Q", raw, _HEADER.size)
    offset = _HEADER.size + 8 * ndim
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - offset != 8 * count:
        raise ParseError("matrix payload size does not match its header", str(path))
    return np.frombuffer(raw, dtype="<f8", offset=offset).reshape(dims).astype(np.float64)


# ---------------------------------------------------------------------------
# manifest


@dataclass
class EmbeddingRef:
    file: str
    row: int

    def to_json(self) -> dict:
        return {"file": self.file, "row": self.row}


@dataclass
class VideoRecord:
    id: str
    duration: float
    n_frames: int
    features: str


@dataclass
class AnnotationRecord:
    id: str
    video_id: str
    interval: tuple[float, float]
    query: EmbeddingRef


@dataclass
class CandidateRecord:
    interval: tuple[float, float]
    sentence_conf: float
    proposal_conf: float
    embedding: EmbeddingRef


@dataclass
class CaptionRecord:
    video_id: str
    candidates: list[CandidateRecord] = field(default_factory=list)


@dataclass
class DatasetManifest:
    videos: list[VideoRecord]
    annotations: list[AnnotationRecord]
    captions: list[CaptionRecord]
    embedding_dim: int
    root: Path | None = None

    def video(self, video_id: str) -> VideoRecord:
        for v in self.videos:
            if v.id == video_id:
                return v
        raise KeyError(video_id)

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "embedding_dim": self.embedding_dim,
            "videos": [{"id": v.id, "duration": v.duration, "n_frames": v.n_frames, "features": v.features}
                       for v in self.videos],
            "annotations": [{"id": a.id, "video_id": a.video_id, "interval": list(a.interval),
                             "query": a.query.to_json()} for a in self.annotations],
            "captions": [{"video_id": c.video_id, "candidates": [
                {"interval": list(e.interval), "sentence_conf": e.sentence_conf,
                 "proposal_conf": e.proposal_conf, "embedding": e.embedding.to_json()}
                for e in c.candidates]} for c in self.captions],
        }


class _Reader:
    """Typed field access that reports failures as JSON pointers."""

    @staticmethod
    def obj(node, where):
        if not isinstance(node, dict):
            raise ParseError("expected an object", where)
        return node

    @staticmethod
    def field(node, key, kind, where):
        if key not in node:
            raise ParseError(f"missing field {key!r}", where)
        value = node[key]
        loc = f"{where}/{key}"
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParseError("expected a number", loc)
            if not np.isfinite(value):
                raise ParseError("expected a finite number", loc)
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError("expected an integer", loc)
            return value
        if not isinstance(value, kind):
            raise ParseError(f"expected {kind.__name__}", loc)
        return value

    @classmethod
    def interval(cls, node, where):
        raw = cls.field(node, "interval", list, where)
        loc = f"{where}/interval"
        if len(raw) != 2 or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in raw):
            raise ParseError("expected [start, end]", loc)
        s, e = float(raw[0]), float(raw[1])
        if not (0 <= s < e):
            raise ParseError("interval must satisfy 0 <= start < end", loc)
        return s, e

    @classmethod
    def ref(cls, node, key, where):
        ref = cls.obj(cls.field(node, key, dict, where), f"{where}/{key}")
        return EmbeddingRef(cls.field(ref, "file", str, f"{where}/{key}"),
                            cls.field(ref, "row", int, f"{where}/{key}"))


def parse_manifest(doc: Any, root: Path | None = None) -> DatasetManifest:
    r = _Reader
    r.obj(doc, "")
    version = r.field(doc, "version", int, "")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version {version}", "/version")
    dim = r.field(doc, "embedding_dim", int, "")
    videos = []
    for k, v in enumerate(r.field(doc, "videos", list, "")):
        w = f"/videos/{k}"
        r.obj(v, w)
        videos.append(VideoRecord(r.field(v, "id", str, w), r.field(v, "duration", float, w),
                                  r.field(v, "n_frames", int, w), r.field(v, "features", str, w)))
        if videos[-1].duration <= 0 or videos[-1].n_frames < 1:
            raise ParseError("duration and n_frames must be positive", w)
    annotations = []
    for k, a in enumerate(r.field(doc, "annotations", list, "")):
        w = f"/annotations/{k}"
        r.obj(a, w)
        annotations.append(AnnotationRecord(r.field(a, "id", str, w), r.field(a, "video_id", str, w),
                                            r.interval(a, w), r.ref(a, "query", w)))
    captions = []
    for k, c in enumerate(r.field(doc, "captions", list, "")):
        w = f"/captions/{k}"
        r.obj(c, w)
        cands = []
        for q, e in enumerate(r.field(c, "candidates", list, w)):
            we = f"{w}/candidates/{q}"
            r.obj(e, we)
            cands.append(CandidateRecord(r.interval(e, we), r.field(e, "sentence_conf", float, we),
                                         r.field(e, "proposal_conf", float, we), r.ref(e, "embedding", we)))
        captions.append(CaptionRecord(r.field(c, "video_id", str, w), cands))
    manifest = DatasetManifest(videos, annotations, captions, dim, root)
    check_integrity(manifest)
    return manifest


def check_integrity(m: DatasetManifest) -> None:
    durations: dict[str, float] = {}
    for k, v in enumerate(m.videos):
        if v.id in durations:
            raise IntegrityError(f"/videos/{k}: duplicate video id {v.id!r}")
        durations[v.id] = v.duration
    seen = set()
    for k, a in enumerate(m.annotations):
        if a.id in seen:
            raise IntegrityError(f"/annotations/{k}: duplicate annotation id {a.id!r}")
        seen.add(a.id)
        if a.video_id not in durations:
            raise IntegrityError(f"/annotations/{k}: unknown video {a.video_id!r}")
        if a.interval[1] > durations[a.video_id]:
            raise IntegrityError(f"/annotations/{k}: interval exceeds the video duration")
    for k, c in enumerate(m.captions):
        if c.video_id not in durations:
            raise IntegrityError(f"/captions/{k}: unknown video {c.video_id!r}")
        for q, e in enumerate(c.candidates):
            if e.interval[1] > durations[c.video_id]:
                raise IntegrityError(f"/captions/{k}/candidates/{q}: interval exceeds the video duration")
    if m.root is not None:
        files = {v.features for v in m.videos} | {a.query.file for a in m.annotations} \
            | {e.embedding.file for c in m.captions for e in c.candidates}
        for f in sorted(files):
            if not (m.root / f).exists():
                raise IntegrityError(f"referenced file {f!r} does not exist")


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path / "manifest.json" if path.is_dir() else path


def load_manifest(path: str | Path) -> DatasetManifest:
    path = manifest_path(path)
    return parse_manifest(read_json(path), path.parent)


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    atomic_write_json(manifest_path(path), manifest.to_json())


# ---------------------------------------------------------------------------
# standalone caption and annotation files (used by ``acnet select``)


@dataclass
class VideoCaptions:
    video_id: str
    duration: float
    candidates: list[tuple[tuple[float, float], float, float]]


def parse_caption_file(doc: Any) -> list[VideoCaptions]:
    """``{"version": 1, "videos": [{"video_id", "duration", "candidates": [...]}]}``.

    Each candidate carries ``interval``, ``sentence_conf`` and ``proposal_conf``.
    """
    r = _Reader
    r.obj(doc, "")
    if r.field(doc, "version", int, "") != SCHEMA_VERSION:
        raise ParseError("unsupported schema version", "/version")
    out = []
    for k, v in enumerate(r.field(doc, "videos", list, "")):
        w = f"/videos/{k}"
        r.obj(v, w)
        duration = r.field(v, "duration", float, w)
        cands = []
        for q, e in enumerate(r.field(v, "candidates", list, w)):
            we = f"{w}/candidates/{q}"
            r.obj(e, we)
            iv = r.interval(e, we)
            if iv[1] > duration:
                raise IntegrityError(f"{we}: interval exceeds the video duration")
            cands.append((iv, r.field(e, "sentence_conf", float, we), r.field(e, "proposal_conf", float, we)))
        out.append(VideoCaptions(r.field(v, "video_id", str, w), duration, cands))
    return out


def parse_annotation_file(doc: Any) -> dict[str, list[tuple[float, float]]]:
    """``{"version": 1, "annotations": [{"video_id", "interval"}]}`` grouped by video."""
    r = _Reader
    r.obj(doc, "")
    if r.field(doc, "version", int, "") != SCHEMA_VERSION:
        raise ParseError("unsupported schema version", "/version")
    out: dict[str, list[tuple[float, float]]] = {}
    for k, a in enumerate(r.field(doc, "annotations", list, "")):
        w = f"/annotations/{k}"
        r.obj(a, w)
        out.setdefault(r.field(a, "video_id", str, w), []).append(r.interval(a, w))
    return out


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}", "") from exc


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_FORMAT = "acnet-checkpoint"


def checkpoint_doc(params, config: TrainConfig, d_v: int, d_s: int, meta: dict | None = None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": SCHEMA_VERSION,
        "d_v": d_v,
        "d_s": d_s,
        "config": config.to_dict(),
        "meta": meta or {},
        "params": {name: {"shape": list(p.value.shape), "data": p.value.reshape(-1).tolist()}
                   for name, p in params.items()},
    }


def save_checkpoint(path: str | Path, params, config: TrainConfig, d_v: int, d_s: int,
                    meta: dict | None = None) -> None:
    atomic_write_json(path, checkpoint_doc(params, config, d_v, d_s, meta))


@dataclass
class Checkpoint:
    params: "OrderedDict[str, ad.Variable]"
    config: TrainConfig
    d_v: int
    d_s: int
    meta: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path} is not a version-{SCHEMA_VERSION} checkpoint")
    try:
        config = TrainConfig.from_dict(doc["config"])
        params = OrderedDict()
        for name, entry in doc["params"].items():
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            params[name] = ad.Variable(arr, requires_grad=True, name=name)
        return Checkpoint(params, config, int(doc["d_v"]), int(doc["d_s"]), doc.get("meta", {}))
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
