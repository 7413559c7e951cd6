"""Optimizers operating in place on a ParameterStore."""
from __future__ import annotations

import numpy as np

from ..tensor import ParameterStore


def global_grad_norm(store: ParameterStore) -> float:
    return float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in store)))


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(store)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for p in store:
            p.grad = p.grad * factor
    return norm


class SGD:
    def __init__(self, store: ParameterStore, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.store, self.lr, self.momentum, self.weight_decay = store, lr, momentum, weight_decay
        self.velocity = {p.name: np.zeros_like(p.data) for p in store}

    def step(self) -> None:
        for p in self.store:
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v = self.velocity[p.name]
            v *= self.momentum
            v += g
            p.data -= (self.lr * v).astype(p.dtype)


class AdamW:
    """Adam with decoupled weight decay; 1-D parameters (norms, biases, scales) are not decayed."""

    def __init__(self, store: ParameterStore, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.05):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.store, self.lr, self.betas, self.eps, self.weight_decay = store, lr, betas, eps, weight_decay
        self.m = {p.name: np.zeros_like(p.data) for p in store}
        self.v = {p.name: np.zeros_like(p.data) for p in store}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p in self.store:
            m, v = self.m[p.name], self.v[p.name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.data.ndim > 1:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.dtype)


def make_optimizer(name: str, store: ParameterStore, lr: float, weight_decay: float = 0.0,
                   betas=(0.9, 0.999), eps: float = 1e-8, momentum: float = 0.9):
    if name == "adamw":
        return AdamW(store, lr=lr, betas=tuple(betas), eps=eps, weight_decay=weight_decay)
    if name == "sgd":
        return SGD(store, lr=lr, momentum=momentum, weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}; choose 'adamw' or 'sgd'")
