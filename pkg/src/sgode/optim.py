"""Adam with an L2 term folded into the gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Update ``params`` (name -> array) in place from ``grads`` (name -> array).

    ``weight_decay * param`` is added to each gradient before the moment
    updates, i.e. the gradient of an L2 penalty ``weight_decay/2 * ||p||^2``.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r} at step {t}")
        if weight_decay:
            g = g + weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class Adam:
    """Optimizer over named :class:`~sgode.tensor.Tensor` parameters."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        adam_step(arrays, grads, self.state, self.lr, self.betas[0], self.betas[1],
                  self.eps, self.weight_decay)
