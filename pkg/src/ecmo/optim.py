"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    """Update ``params`` in place; moment buffers are created on first use."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name}: {g.shape} vs parameter {params[name].shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class Adam:
    """Optimizer over named tensors whose ``.grad`` buffers hold the gradient."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, clip: float | None = 5.0):
        self.params = dict(params)
        self.state = AdamState(lr=lr)
        self.clip = clip

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> float:
        grads = {}
        for k, p in self.params.items():
            if p.grad is None:
                p.zero_grad()
            grads[k] = p.grad
        norm = clip_global_norm(grads, self.clip) if self.clip else 0.0
        adam_step({k: p.data for k, p in self.params.items()}, grads, self.state)
        return norm
