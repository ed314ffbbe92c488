"""Adam with bias correction, and the warmup-then-exponential-decay LR schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MissingGrad
from .layers import Parameter


@dataclass
class LrSchedule:
    """Constant base_lr for `warmup_epochs`, then base_lr * gamma^(epoch - warmup)."""

    base_lr: float = 1e-4
    gamma: float = 0.9
    warmup_epochs: int = 20

    def lr(self, epoch: int) -> float:
        if epoch < self.warmup_epochs:
            return self.base_lr
        return self.base_lr * self.gamma ** (epoch - self.warmup_epochs)


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGrad("adam step with an unpopulated gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)
