"""Adam with bias correction and the Noam learning-rate schedule."""

import math

import numpy as np

from . import backend
from .tensor import NonFiniteError, is_checked


def noam_lr(step, warmup, peak_lr):
    """lr(step) = peak_lr * min(step/warmup, sqrt(warmup/step)).

    Linear warmup to exactly peak_lr at `warmup`, inverse-sqrt decay after.
    """
    if step < 1:
        raise ValueError(f"noam_lr requires step >= 1, got {step}")
    return peak_lr * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9, grad_clip=0.0):
        """params: dict name -> Tensor (requires_grad)."""
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def _clip(self):
        total = math.sqrt(sum(
            float(np.square(p.grad).sum())
            for p in self.params.values() if p.grad is not None))
        if total > self.grad_clip > 0:
            s = self.grad_clip / total
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= s

    def step(self, lr):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if self.grad_clip > 0:
            self._clip()
        self.step_count += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if is_checked() and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            backend.adam_update(
                p.data.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
                self._m[name].reshape(-1), self._v[name].reshape(-1),
                self.step_count, lr, self.beta1, self.beta2, self.eps)
