"""Rectified Adam.

Implements the variance-rectified update: plain Adam moment estimates, and
per step either the rectified adaptive step (when the rectification term
rho_t exceeds 4) or a bias-corrected momentum-only step during the early
high-variance phase.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError
from .layers import Param


class RAdam:
    def __init__(self, params: list[Param], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]
        self.rho_inf = 2.0 / (1.0 - beta2) - 1.0

    def rho_t(self, t: int) -> float:
        b2t = self.beta2 ** t
        return self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)

    def rectified(self, t: int) -> bool:
        return self.rho_t(t) > 4.0

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        rho = self.rho_t(t)
        use_rect = rho > 4.0
        if use_rect:
            ri = self.rho_inf
            rect = math.sqrt(((rho - 4.0) * (rho - 2.0) * ri)
                             / ((ri - 4.0) * (ri - 2.0) * rho))
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for {p.name}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            if use_rect:
                v_hat = np.sqrt(v / bias2)
                p.value -= self.lr * rect * m_hat / (v_hat + self.eps)
            else:
                p.value -= self.lr * m_hat

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
