from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.parameter = name


class Adam:
    """Adam with bias correction, updating parameters in place."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(p.name)
        self.step_count += 1
        adam_step(self.params, self.m, self.v, self.lr, self.beta1, self.beta2,
                  self.eps, self.step_count)


def adam_step(params, m, v, lr, beta1, beta2, eps, step_count) -> None:
    c1 = 1.0 - beta1 ** step_count
    c2 = 1.0 - beta2 ** step_count
    for p, m_i, v_i in zip(params, m, v):
        g = p.grad
        m_i *= beta1
        m_i += (1.0 - beta1) * g
        v_i *= beta2
        v_i += (1.0 - beta2) * g * g
        p.data -= lr * (m_i / c1) / (np.sqrt(v_i / c2) + eps)
