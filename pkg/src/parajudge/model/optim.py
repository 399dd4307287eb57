"""Adaptive moment estimation over named float32 parameter dicts.

Moments and the update itself are computed in float64; only the stored
parameters are float32. With lr=0 the update is exactly zero, so parameters
round-trip bit for bit.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        """Update every parameter that has a gradient, in place."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in grads:
            g = np.asarray(grads[name], dtype=np.float64)
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p = params[name]
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)
