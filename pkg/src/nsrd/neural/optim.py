"""Bias-corrected Adam and the step-halving learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict, lr: float):
        """Update ``params`` in place from ``grads``."""
        missing = [k for k in params if k not in grads]
        if missing:
            raise KeyError(f"no gradient for parameters: {missing[:5]}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, theta in params.items():
            g = grads[name].astype(theta.dtype, copy=False)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            theta -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(theta.dtype, copy=False)


def adam_step(params, grads, opt: Adam, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    opt.beta1, opt.beta2, opt.eps = beta1, beta2, eps
    opt.step(params, grads, lr)
    return opt


def halving_lr(base_lr, epoch, period):
    """Learning rate halved every ``period`` epochs (epoch counted from 0)."""
    return base_lr * 0.5 ** (epoch // period)
