"""AdaGrad over a dict of named numpy parameter arrays."""

from __future__ import annotations

import numpy as np


class AdaGrad:
    """Per-coordinate step ``lr * g / (sqrt(G) + eps)`` with ``G`` the running sum of ``g**2``."""

    def __init__(self, lr: float = 0.045, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.eps = eps
        self.accum: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            acc = self.accum.get(name)
            if acc is None:
                acc = self.accum[name] = np.zeros_like(params[name])
            acc += g * g
            if self.lr:
                params[name] -= self.lr * g / (np.sqrt(acc) + self.eps)
