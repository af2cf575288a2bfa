"""Configuration dataclasses and named presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CONTRASTIVE_MODES = ("accl", "vanilla", "no_apn", "no_andm")
SELECTION_MODES = ("nacs", "top_confidence")


@dataclass
class LossWeights:
    lambda_v: float = 1.0
    lambda_s: float = 1.0
    tau_v: float = 0.1
    tau_s: float = 0.1
    lambda_c: float = 0.05
    lambda_r: float = 1.0

    def validate(self) -> None:
        if self.tau_v <= 0 or self.tau_s <= 0:
            raise ConfigError("temperatures must be positive")
        for name in ("lambda_v", "lambda_s", "lambda_c", "lambda_r"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 8e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 300
    seed: int = 0
    n_clips: int = 16
    d_n: int = 32
    heads: int = 4
    conv_layers: int = 2
    kernel: int = 2
    mlp_depth: int = 1
    nms_threshold: float = 0.5
    gamma: float = 1.0
    theta: float = 0.5
    l_c: int = 5
    t_min: float = 0.5
    t_max: float = 1.0
    loss: LossWeights = field(default_factory=LossWeights)
    use_cga: bool = True
    contrastive: str = "accl"
    selection: str = "nacs"

    def validate(self) -> "TrainConfig":
        positive = ("lr", "batch_size", "n_clips", "d_n", "heads", "kernel", "gamma", "theta")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "conv_layers", "l_c", "weight_decay", "mlp_depth"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.d_n % self.heads:
            raise ConfigError(f"d_n={self.d_n} is not divisible by heads={self.heads}")
        if not 0 <= self.nms_threshold <= 1:
            raise ConfigError("nms_threshold must lie in [0, 1]")
        if not self.t_min < self.t_max:
            raise ConfigError("t_min must be below t_max")
        if self.contrastive not in CONTRASTIVE_MODES:
            raise ConfigError(f"contrastive must be one of {CONTRASTIVE_MODES}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(f"selection must be one of {SELECTION_MODES}")
        self.loss.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        loss = data.pop("loss", {}) or {}
        if isinstance(loss, dict):
            loss_known = {f.name for f in dataclasses.fields(LossWeights)}
            if set(loss) - loss_known:
                raise ConfigError(f"unknown loss keys: {sorted(set(loss) - loss_known)}")
            loss = LossWeights(**loss)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(loss=loss, **data).validate()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes).validate()


PRESETS: dict[str, dict[str, Any]] = {
    "default": {},
    # small enough for an exhaustive finite-difference sweep over every parameter
    "toy": {"n_clips": 8, "d_n": 16, "heads": 2, "conv_layers": 1, "kernel": 2,
            "batch_size": 2, "l_c": 2, "epochs": 1},
    # the two published settings
    "activitynet": {"n_clips": 64, "conv_layers": 3, "kernel": 4, "nms_threshold": 0.5,
                    "batch_size": 48},
    "tacos": {"n_clips": 128, "conv_layers": 4, "kernel": 2, "nms_threshold": 0.4,
              "batch_size": 8},
}


def load_config(spec: str | Path | None) -> TrainConfig:
    """A preset name, a JSON file path, or None for defaults."""
    if spec is None:
        return TrainConfig().validate()
    if str(spec) in PRESETS:
        return TrainConfig.from_dict(PRESETS[str(spec)])
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"no preset or config file named {spec!r}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = PRESETS.get(data.pop("preset", "default"))
    if base is None:
        raise ConfigError("unknown preset in config file")
    merged = {**base, **data}
    if "loss" in base and "loss" in data:
        merged["loss"] = {**base["loss"], **data["loss"]}
    return TrainConfig.from_dict(merged)
