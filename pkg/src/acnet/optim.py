from __future__ import annotations

from typing import Mapping

import numpy as np

from .autodiff import Variable


class AdamW:
    """Adam with decoupled weight decay.

    Parameters whose ``grad`` is None (not reached by the last backward) are
    skipped entirely, weight decay included.
    """

    def __init__(self, params: Mapping[str, Variable], lr: float = 8e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict[str, dict] = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            st = self.state.setdefault(name, {"t": 0, "m": np.zeros_like(p.value), "v": np.zeros_like(p.value)})
            st["t"] += 1
            t = st["t"]
            g = p.grad
            st["m"] = self.beta1 * st["m"] + (1 - self.beta1) * g
            st["v"] = self.beta2 * st["v"] + (1 - self.beta2) * g * g
            m_hat = st["m"] / (1 - self.beta1 ** t)
            v_hat = st["v"] / (1 - self.beta2 ** t)
            if self.weight_decay:
                p.value -= self.lr * self.weight_decay * p.value
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {name: {"t": st["t"], "m": st["m"].copy(), "v": st["v"].copy()} for name, st in self.state.items()}
