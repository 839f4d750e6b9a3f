"""Adam with bias correction, updating parameter buffers in place."""

from __future__ import annotations

from typing import Dict, Sequence

import numpy as np

from .tensor import GradientMap, Tensor


class Adam:
    """Standard Adam. State is keyed by parameter identity.

    A fresh instance starts with zeroed moments and step count, so
    constructing one per training phase resets the optimizer state.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 0.005,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Dict[int, np.ndarray] = {
            id(p): np.zeros(p.shape) for p in self.params}
        self._v: Dict[int, np.ndarray] = {
            id(p): np.zeros(p.shape) for p in self.params}

    def step(self, grads: GradientMap) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = grads[p].data
            m = self._m[id(p)]
            v = self._v[id(p)]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
