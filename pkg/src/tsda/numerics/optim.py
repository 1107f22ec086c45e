"""Named parameter containers and the Adam optimizer."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class ParameterSet(OrderedDict):
    """Ordered mapping name -> trainable :class:`Tensor`.

    Gradients live on each tensor's ``.grad`` and always match its shape.
    """

    @classmethod
    def from_arrays(cls, arrays):
        return cls((k, Tensor(np.array(v, dtype=np.float64), requires_grad=True)) for k, v in arrays.items())

    def __setitem__(self, key, value):
        if not isinstance(value, Tensor):
            value = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        super().__setitem__(key, value)

    @property
    def gradients(self):
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.items()}

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def arrays(self):
        return OrderedDict((k, p.data.copy()) for k, p in self.items())

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            if k not in self:
                raise KeyError(f"unknown parameter {k!r}")
            if self[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}: {self[k].shape} vs {np.shape(v)}")
            self[k].data = np.array(v, dtype=np.float64)

    def subset(self, names):
        return ParameterSet((k, self[k]) for k in names)

    def num_values(self):
        return sum(p.size for p in self.values())


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, state: OptimizerState):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Gradients are read but left untouched. Returns ``(params, state)``.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"gradient missing for parameter {name!r}")
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"second-moment overflow in parameter {name!r}")
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter subset."""

    def __init__(self, params: ParameterSet, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        for p in self.params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adam_step(self.params, self.state)
