"""Adam with L2-coupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class OptimizerError(FloatingPointError):
    def __init__(self, message, param=None):
        super().__init__(message)
        self.param = param


@dataclass
class Adam:
    learning_rate: float = 0.002
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scale: dict = field(default_factory=dict)  # parameter name -> learning-rate multiplier
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array)."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient for parameter {name!r}; step aborted", name)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.learning_rate * self.lr_scale.get(name, 1.0) * (m / c1) / (np.sqrt(v / c2) + self.eps)
