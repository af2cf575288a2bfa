"""Training, inference and R@n,IoU=m evaluation."""

from __future__ import annotations

import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import PreparedSample
from .errors import CheckpointError, NumericDomainError, TrainingDivergedError
from .io import Checkpoint, atomic_write_json, load_checkpoint, save_checkpoint
from .losses import ContrastiveBatch, accl, regression_loss, total_loss
from .model import ACNet, init_params
from .optim import AdamW
from .scoring import RankedPrediction, fuse_scores, nms, rank_cells
from .temporal import MomentInterval, temporal_iou, valid_cells

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# losses over a minibatch


@dataclass
class LossParts:
    total: ad.Variable
    regression: float | None
    contrastive: float | None


def _normalized_rows(parts: list[ad.Variable]) -> ad.Variable:
    return ad.l2_normalize_rows(ad.concat_rows(parts))


def batch_loss(model: ACNet, batch: Sequence[PreparedSample]) -> LossParts:
    cfg = model.config
    w = cfg.loss
    outs = [model.forward(s) for s in batch]
    l_r = None
    if w.lambda_r:
        per = [regression_loss(o.s_r, s.labels[_valid_flat(s)]) for o, s in zip(outs, batch)]
        l_r = ad.scale(_sum(per), 1.0 / len(per))
    l_c = None
    if w.lambda_c and (w.lambda_v or w.lambda_s):
        aux_owner = [k for k, s in enumerate(batch) for _ in range(s.n_aux)]
        with_aux = [o for o in outs if o.q_c_aux is not None]
        cb = ContrastiveBatch(
            gt_moments=_normalized_rows([o.gt_moment for o in outs]),
            gt_sentences=_normalized_rows([o.q_c for o in outs]),
            aux_sentences=_normalized_rows([o.q_c_aux for o in with_aux]) if with_aux else None,
            aux_owner=np.array(aux_owner, dtype=np.intp),
            aux_moments=(_normalized_rows([o.aux_moments for o in with_aux])
                         if with_aux and cfg.contrastive in ("no_apn", "no_andm") else None),
        )
        l_c = accl(cb, w, cfg.contrastive)
    total = total_loss(l_c, l_r, w)
    return LossParts(total, None if l_r is None else l_r.item(), None if l_c is None else l_c.item())


def _valid_flat(s: PreparedSample) -> np.ndarray:
    return valid_cells(s.n_clips)


def _sum(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: ACNet
    loss_curve: list[float]
    seconds: float = 0.0
    checkpoint: Path | None = None


def _snapshot(params) -> dict[str, np.ndarray]:
    return {k: p.value.copy() for k, p in params.items()}


def _restore(params, snap) -> None:
    for k, p in params.items():
        p.value[...] = snap[k]


def train(samples: Sequence[PreparedSample], config: TrainConfig, out_dir: str | Path | None = None,
          model: ACNet | None = None, progress: bool = False, meta: dict | None = None) -> TrainResult:
    """Minibatch AdamW training; fully determined by ``config.seed``.

    Writes ``checkpoint.json`` and ``loss_curve.json`` into ``out_dir`` when
    given.  A non-finite loss restores the last good parameters, writes them
    out, and raises :class:`TrainingDivergedError`.  ``meta`` is stored in
    the checkpoint as is.
    """
    if not samples:
        raise ValueError("cannot train on an empty dataset")
    config.validate()
    d_v, d_s = samples[0].pooled.shape[1], samples[0].query.shape[1]
    model = model or ACNet(config, d_v, d_s)
    opt = AdamW(model.params, lr=config.lr, betas=config.betas, eps=config.eps,
                weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 1])
    out_dir = Path(out_dir) if out_dir is not None else None
    curve: list[float] = []
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            batch = [samples[k] for k in order[lo:lo + config.batch_size]]
            good = _snapshot(model.params)
            opt.zero_grad()
            try:
                parts = batch_loss(model, batch)
                value = parts.total.item()
                if not np.isfinite(value):
                    raise NumericDomainError("non-finite loss")
                ad.backward(parts.total)
                for p in model.params.values():
                    if p.grad is not None and not np.all(np.isfinite(p.grad)):
                        raise NumericDomainError(f"non-finite gradient for {p.name}")
                opt.step()
                if not all(np.all(np.isfinite(p.value)) for p in model.params.values()):
                    raise NumericDomainError("non-finite parameters after the update")
            except NumericDomainError as exc:
                _restore(model.params, good)
                if out_dir is not None:
                    _write_outputs(out_dir, model, curve, meta)
                ids = ", ".join(s.sample_id for s in batch)
                raise TrainingDivergedError(
                    f"training diverged at epoch {epoch}, batch starting {lo} ({ids}): {exc}; "
                    f"last good parameters kept") from exc
            losses.append(value)
        curve.append(float(np.mean(losses)))
        if progress or log.isEnabledFor(logging.DEBUG):
            log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, curve[-1])
    result = TrainResult(model, curve, time.perf_counter() - t0)
    if out_dir is not None:
        result.checkpoint = _write_outputs(out_dir, model, curve, meta)
    return result


def _write_outputs(out_dir: Path, model: ACNet, curve: list[float], meta: dict | None = None) -> Path:
    path = out_dir / "checkpoint.json"
    save_checkpoint(path, model.params, model.config, model.d_v, model.d_s, meta)
    atomic_write_json(out_dir / "loss_curve.json", {"version": 1, "epoch_mean_loss": curve})
    return path


def model_from_checkpoint(ckpt: Checkpoint | str | Path, config: TrainConfig | None = None) -> ACNet:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    config = config or ckpt.config
    expected = init_params(config, ckpt.d_v, ckpt.d_s)
    if list(expected) != list(ckpt.params):
        raise CheckpointError("checkpoint parameters do not match the configuration")
    for name, p in expected.items():
        if p.shape != ckpt.params[name].shape:
            raise CheckpointError(f"parameter {name}: checkpoint shape {ckpt.params[name].shape}, "
                                  f"configuration expects {p.shape}")
    return ACNet(config, ckpt.d_v, ckpt.d_s, OrderedDict(ckpt.params))


# ---------------------------------------------------------------------------
# inference and evaluation


def score_map(model: ACNet, sample: PreparedSample) -> np.ndarray:
    """Fused score of every valid cell (row-major order)."""
    if sample.pooled.shape[1] != model.d_v or sample.query.shape[1] != model.d_s:
        raise CheckpointError("sample feature sizes do not match the model")
    with ad.no_grad():
        out = model.forward(sample)
    return fuse_scores(out.s_r.value.reshape(-1), out.s_c.value.reshape(-1), model.config.gamma)


def infer(sample: PreparedSample, model: ACNet) -> list[RankedPrediction]:
    """Score, rank every valid cell, then suppress overlaps."""
    ranked = rank_cells(score_map(model, sample), sample.n_clips, sample.duration)
    return nms(ranked, model.config.nms_threshold)


def recall_at(predictions: Sequence[Sequence[RankedPrediction | MomentInterval]],
              gts: Sequence[MomentInterval], n: int, m: float) -> float:
    """Share of samples with a top-``n`` prediction at IoU >= ``m`` with the ground truth."""
    if n < 1 or not 0 < m <= 1:
        raise ValueError("need n >= 1 and m in (0, 1]")
    if len(predictions) != len(gts):
        raise ValueError("one prediction list per ground truth is required")
    if not gts:
        return 0.0
    hits = 0
    for preds, gt in zip(predictions, gts):
        top = [p.interval if isinstance(p, RankedPrediction) else p for p in list(preds)[:n]]
        if any(temporal_iou(t, gt) >= m for t in top):
            hits += 1
    return hits / len(gts)


@dataclass
class MetricTable:
    entries: dict[tuple[int, float], float] = field(default_factory=dict)
    n_samples: int = 0

    def __getitem__(self, key: tuple[int, float]) -> float:
        return self.entries[key]

    def to_json(self) -> dict:
        return {
            "version": 1,
            "n_samples": self.n_samples,
            "recall": [{"n": n, "m": m, "value": v} for (n, m), v in sorted(self.entries.items())],
        }

    def to_text(self) -> str:
        ns = sorted({n for n, _ in self.entries})
        ms = sorted({m for _, m in self.entries})
        head = ["R@n \\ IoU"] + [f"{m:g}" for m in ms]
        rows = [[f"R@{n}"] + [f"{100 * self.entries[(n, m)]:.2f}" for m in ms] for n in ns]
        widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]
        fmt = lambda r: "  ".join(x.rjust(w) for x, w in zip(r, widths))  # noqa: E731
        return "\n".join([fmt(head)] + [fmt(r) for r in rows])


def evaluate(model: ACNet, samples: Sequence[PreparedSample], ns: Iterable[int] = (1, 5),
             ms: Iterable[float] = (0.3, 0.5, 0.7)) -> MetricTable:
    preds = [infer(s, model) for s in samples]
    gts = [s.gt for s in samples]
    table = MetricTable(n_samples=len(samples))
    for n in ns:
        for m in ms:
            table.entries[(int(n), float(m))] = recall_at(preds, gts, int(n), float(m))
    return table
