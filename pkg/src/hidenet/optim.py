"""Adam optimizer over named :class:`~hidenet.autodiff.Tensor` parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Gradients are read from ``param.grad``; a missing gradient counts as zero.
    Non-finite gradients are rejected before anything is modified.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    for name, p in params.items():
        dt = p.dtype.type
        b1, b2 = dt(state.beta1), dt(state.beta2)
        c1 = dt(1.0 - state.beta1 ** state.t)
        c2 = dt(1.0 - state.beta2 ** state.t)
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= dt(state.lr) * (m / c1) / (np.sqrt(v / c2) + dt(state.eps))
    return state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)
