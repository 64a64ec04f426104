from __future__ import annotations

import math

import numpy as np

from .module import Parameter


class Adam:
    """Adaptive-moment gradient descent with optional cosine learning-rate decay
    and global-norm gradient clipping."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        total_steps: int | None = None,
        min_lr_ratio: float = 0.0,
        clip_norm: float | None = None,
    ):
        self.params = [p for p in params if p.trainable]
        self.base_lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.min_lr_ratio = min_lr_ratio
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        if not self.total_steps:
            return self.base_lr
        frac = min(self.t / self.total_steps, 1.0)
        scale = self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac))
        return self.base_lr * scale

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update; returns the pre-clipping global gradient norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
        lr = self.lr
        self.t += 1
        bc1 = 1 - self.b1**self.t
        bc2 = 1 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data = (p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.data.dtype)
        return norm
