"""Component ablations: train each variant of a fixed grid over several seeds and compare."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .config import TrainConfig, load_config
from .data import PreparedSample, load_dataset
from .errors import ConfigError
from .pipeline import evaluate, train

log = logging.getLogger(__name__)

DEFAULT_VARIANTS: dict[str, dict[str, Any]] = {
    "full": {},
    "no_cga": {"use_cga": False},
    "vanilla_nce": {"contrastive": "vanilla"},
    "no_apn": {"contrastive": "no_apn"},
    "no_andm": {"contrastive": "no_andm"},
    "top_confidence": {"selection": "top_confidence"},
}

# config fields that change how a dataset is turned into samples
_DATA_KEYS = ("n_clips", "l_c", "theta", "selection", "t_min", "t_max")


@dataclass
class AblationGrid:
    variants: dict[str, dict[str, Any]] = field(default_factory=lambda: dict(DEFAULT_VARIANTS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    base: str | dict[str, Any] | None = None
    ns: list[int] = field(default_factory=lambda: [1, 5])
    ms: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    primary: tuple[int, float] = (1, 0.5)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "AblationGrid":
        allowed = {"version", "variants", "seeds", "base", "n", "m", "primary"}
        if set(doc) - allowed:
            raise ConfigError(f"unknown grid keys: {sorted(set(doc) - allowed)}")
        if doc.get("version", 1) != 1:
            raise ConfigError("unsupported grid version")
        grid = cls()
        if "variants" in doc:
            if not isinstance(doc["variants"], dict) or not doc["variants"]:
                raise ConfigError("variants must be a non-empty object")
            grid.variants = {str(k): dict(v) for k, v in doc["variants"].items()}
        grid.seeds = [int(s) for s in doc.get("seeds", grid.seeds)]
        grid.base = doc.get("base")
        grid.ns = [int(n) for n in doc.get("n", grid.ns)]
        grid.ms = [float(m) for m in doc.get("m", grid.ms)]
        if "primary" in doc:
            n, m = doc["primary"]
            grid.primary = (int(n), float(m))
        if not grid.seeds:
            raise ConfigError("at least one seed is required")
        grid.ns = sorted(set(grid.ns) | {grid.primary[0]})
        grid.ms = sorted(set(grid.ms) | {grid.primary[1]})
        return grid

    @classmethod
    def load(cls, path: str | Path | None) -> "AblationGrid":
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def base_config(self) -> TrainConfig:
        if isinstance(self.base, dict):
            return TrainConfig.from_dict(self.base)
        return load_config(self.base)

    def config_for(self, variant: str, seed: int) -> TrainConfig:
        base = self.base_config().to_dict()
        changes = self.variants[variant]
        loss = {**base.pop("loss"), **changes.get("loss", {})}
        merged = {**base, **{k: v for k, v in changes.items() if k != "loss"}, "seed": seed, "loss": loss}
        return TrainConfig.from_dict(merged)


@dataclass
class VariantResult:
    name: str
    config: TrainConfig
    per_seed: list[dict[tuple[int, float], float]] = field(default_factory=list)

    def mean(self, key: tuple[int, float]) -> float:
        return float(np.mean([r[key] for r in self.per_seed]))

    def std(self, key: tuple[int, float]) -> float:
        return float(np.std([r[key] for r in self.per_seed]))


@dataclass
class AblationReport:
    grid: AblationGrid
    results: list[VariantResult]
    n_train: int
    n_eval: int
    held_out: bool

    def result(self, name: str) -> VariantResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> dict[str, Any]:
        keys = [(n, m) for n in self.grid.ns for m in self.grid.ms]
        return {
            "version": 1,
            "n_train": self.n_train,
            "n_eval": self.n_eval,
            "held_out": self.held_out,
            "seeds": self.grid.seeds,
            "primary": {"n": self.grid.primary[0], "m": self.grid.primary[1]},
            "variants": [{
                "name": r.name,
                "cga": r.config.use_cga,
                "contrastive": r.config.contrastive,
                "selection": r.config.selection,
                "mean": [{"n": n, "m": m, "value": r.mean((n, m))} for n, m in keys],
                "std": [{"n": n, "m": m, "value": r.std((n, m))} for n, m in keys],
                "per_seed_primary": [s[self.grid.primary] for s in r.per_seed],
            } for r in self.results],
        }

    def to_text(self) -> str:
        """Component flags, then mean recall (in %) per (n, m) over seeds."""
        keys = [(n, m) for n in self.grid.ns for m in self.grid.ms]
        head = ["variant", "CGA", "contrastive", "selection"] + [f"R@{n},{m:g}" for n, m in keys]
        rows = [[r.name, "yes" if r.config.use_cga else "no", r.config.contrastive, r.config.selection]
                + [f"{100 * r.mean(k):.2f}" for k in keys] for r in self.results]
        widths = [max(len(row[c]) for row in [head] + rows) for c in range(len(head))]
        lines = ["  ".join(x.ljust(w) if c < 4 else x.rjust(w) for c, (x, w) in enumerate(zip(row, widths)))
                 for row in [head] + rows]
        split = "held-out" if self.held_out else "training"
        lines.append(f"{len(self.grid.seeds)} seeds; {self.n_train} training samples; "
                     f"{self.n_eval} {split} samples")
        return "\n".join(lines)


def run_ablation(train_data: str | Path, grid: AblationGrid, eval_data: str | Path | None = None,
                 seed_override: int | None = None) -> AblationReport:
    """Train every (variant, seed) pair on ``train_data`` and evaluate it.

    Evaluation samples see no ground-truth annotations during caption
    selection.  Without ``eval_data`` the training set is reused.
    """
    if seed_override is not None:
        grid.seeds = [seed_override]
    cache: dict[tuple, tuple[list[PreparedSample], list[PreparedSample]]] = {}
    results = []
    n_train = n_eval = 0
    for name in grid.variants:
        res = VariantResult(name, grid.config_for(name, grid.seeds[0]))
        for seed in grid.seeds:
            cfg = grid.config_for(name, seed)
            key = tuple(getattr(cfg, k) for k in _DATA_KEYS)
            if key not in cache:
                tr = load_dataset(train_data, cfg)
                ev = load_dataset(eval_data if eval_data is not None else train_data, cfg,
                                  known_annotations=False)
                cache[key] = (tr, ev)
            tr, ev = cache[key]
            n_train, n_eval = len(tr), len(ev)
            model = train(tr, cfg).model
            table = evaluate(model, ev, grid.ns, grid.ms)
            res.per_seed.append(dict(table.entries))
            log.info("%s seed %d: R@%d,IoU=%g = %.4f", name, seed, *grid.primary, table[grid.primary])
        results.append(res)
    return AblationReport(grid, results, n_train, n_eval, eval_data is not None)
