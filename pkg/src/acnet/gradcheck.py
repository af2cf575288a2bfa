"""Finite-difference check of every model gradient on a small random batch."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import GroundingSample, PreparedSample, prepare
from .model import ACNet
from .nacs import CaptionCandidate
from .pipeline import batch_loss
from .temporal import ClipSequence, candidate_interval


@dataclass
class GradcheckReport:
    max_error: float
    per_param: dict[str, float]
    n_values: int
    seconds: float

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_param.items(), key=lambda kv: -kv[1])[:k]


def random_batch(config: TrainConfig, batch: int = 2, n_aux: int = 2, d_v: int = 8, d_s: int = 8,
                 seed: int = 0) -> list[PreparedSample]:
    """Random clips, queries and auxiliary captions on a unit-length clip grid."""
    rng = np.random.default_rng(seed)
    n = config.n_clips
    duration = float(n)

    def interval():
        i = int(rng.integers(0, n))
        return candidate_interval(i, int(rng.integers(i, n)), n, duration)

    out = []
    for b in range(batch):
        aux = [CaptionCandidate(rng.normal(size=d_s), interval(), 1.0, 1.0) for _ in range(n_aux)]
        sample = GroundingSample(f"g{b}", f"g{b}", ClipSequence(rng.normal(size=(n, d_v)), duration),
                                 rng.normal(size=d_s), interval(), aux)
        out.append(prepare(sample, config))
    return out


def gradcheck(config: TrainConfig, eps: float = 1e-5, seed: int | None = None) -> GradcheckReport:
    """Compare backward against central differences for the full training loss."""
    config.validate()
    seed = config.seed if seed is None else seed
    samples = random_batch(config, seed=seed)
    model = ACNet(config, samples[0].pooled.shape[1], samples[0].query.shape[1])
    t0 = time.perf_counter()
    errs = ad.gradient_errors(lambda _: batch_loss(model, samples).total, model.params, eps)
    return GradcheckReport(max(errs.values()), errs, sum(p.value.size for p in model.params.values()),
                           time.perf_counter() - t0)
