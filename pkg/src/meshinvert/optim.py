"""Adam with optional exponential learning-rate decay.

Parameters live as a name -> float64 ndarray dict owned by the caller;
``step`` updates them in place.  With lr = 0 the update is exactly zero,
so a zero-rate phase reproduces the frozen trajectory bit for bit (moment
buffers still advance, parameters do not move).
"""

from __future__ import annotations

import math

import numpy as np


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def exp_decay(lr0: float, lr1: float, total: int):
    """lr(i) decaying geometrically from lr0 (i=0) to lr1 (i=total-1)."""
    if total <= 1:
        return lambda i: lr0
    ratio = math.log(lr1 / lr0) / (total - 1)
    return lambda i: lr0 * math.exp(ratio * min(i, total - 1))
