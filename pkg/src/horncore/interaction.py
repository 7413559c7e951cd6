"""Interaction-order probes and the reference spatial operators they classify.

Two probes are provided.  :func:`interaction_effect` estimates the mixed
second derivative of one output feature w.r.t. two distinct input locations
by central differences.  :func:`polynomial_degree` finds the degree of an
activation-free operator as a polynomial in its input by repeated divided
differences along a line; the explicit interaction order is that degree
minus one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gnconv import GnConvConfig, gnconv_forward, init_gnconv, zero_biases
from .mixers import depthwise_conv2d, parse_mixer_kind
from .tensor import Tensor, divided_difference, no_grad

REFERENCE_KINDS = ("plain_dwconv", "se_block", "gated_conv", "self_attention_toy", "gnconv")
CLAIMED_ORDER = {"plain_dwconv": 0, "se_block": 1, "gated_conv": 1, "self_attention_toy": 2}


@dataclass
class InteractionReport:
    op_name: str
    ie_magnitude: float
    measured_degree: int | None
    claimed_order: int

    @property
    def consistent(self) -> bool:
        return self.measured_degree is not None and self.measured_degree - 1 == self.claimed_order


@dataclass
class ReferenceOp:
    """Shape-preserving operator on (1, C, H, W) float64 arrays.

    ``receptive_radius`` is the Chebyshev radius of a location's receptive
    field, or None when every location sees the whole map.
    """

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    receptive_radius: int | None = None
    order: int | None = None

    @property
    def name(self) -> str:
        return f"gnconv(n={self.order})" if self.kind == "gnconv" else self.kind

    def __call__(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            out = self.fn(np.asarray(x, dtype=np.float64))
        return out.data if isinstance(out, Tensor) else out

    def sees(self, i, j) -> bool:
        if self.receptive_radius is None:
            return True
        return max(abs(i[0] - j[0]), abs(i[1] - j[1])) <= self.receptive_radius


def _dw(x, kernel):
    return depthwise_conv2d(Tensor(x), Tensor(kernel))


def plain_dwconv(kernel: np.ndarray) -> ReferenceOp:
    return ReferenceOp("plain_dwconv", lambda x: _dw(x, kernel), kernel.shape[-1] // 2)


def gated_conv(kernel: np.ndarray) -> ReferenceOp:
    """``F_i = (sum_j w_{i->j} x_j) * x_i`` per channel."""
    return ReferenceOp("gated_conv", lambda x: _dw(x, kernel).data * x, kernel.shape[-1] // 2)


def se_block(kernel: np.ndarray, w1: np.ndarray, w2: np.ndarray, linearized: bool = False) -> ReferenceOp:
    """Depth-wise conv scaled per channel by a squeeze-excitation gate of the input.

    The gate is ``sigmoid(w2^T relu(w1^T mean(x)))``; ``linearized`` drops both
    activations, leaving a degree-2 operator.
    """
    def fn(x):
        s = x.mean(axis=(2, 3))
        z = s @ w1
        if not linearized:
            z = np.maximum(z, 0.0)
        z = z @ w2
        if not linearized:
            z = 1.0 / (1.0 + np.exp(-z))
        return _dw(x, kernel).data * z[:, :, None, None]
    return ReferenceOp("se_block", fn, None)


def self_attention_toy(wq: np.ndarray, wk: np.ndarray, wv: np.ndarray, softmax: bool = True) -> ReferenceOp:
    """Single-head global attention over all locations of the map."""
    def fn(x):
        b, c, h, w = x.shape
        tokens = x.reshape(b, c, h * w).transpose(0, 2, 1)
        q, k, v = tokens @ wq, tokens @ wk, tokens @ wv
        a = q @ k.transpose(0, 2, 1) / math.sqrt(c)
        if softmax:
            a = np.exp(a - a.max(axis=-1, keepdims=True))
            a = a / a.sum(axis=-1, keepdims=True)
        out = a @ v
        return out.transpose(0, 2, 1).reshape(b, c, h, w)
    return ReferenceOp("self_attention_toy", fn, None)


def gnconv_op(order: int, channels: int, seed: int = 0, kernel_kind: str = "dwconv3",
              biases: bool = False, **cfg_kwargs) -> ReferenceOp:
    cfg = GnConvConfig(order, channels, kernel_kind, **cfg_kwargs)
    params = init_gnconv(cfg, seed=seed)
    if not biases:
        zero_biases(params)
    _, k = parse_mixer_kind(kernel_kind)
    radius = None if k is None else k // 2
    return ReferenceOp("gnconv", lambda x: gnconv_forward(Tensor(x), cfg, params), radius, order)


def build_reference_op(kind: str, channels: int = 4, seed: int = 0, linearized: bool = False,
                       order: int = 2, kernel_size: int = 3) -> ReferenceOp:
    """Reference operator with fixed-seed generic weights.

    ``linearized`` removes the smooth nonlinearities (SE activations, attention
    softmax) so the operator becomes a polynomial in its input.
    """
    rng = np.random.default_rng(seed)
    kernel = rng.uniform(-1, 1, size=(channels, kernel_size, kernel_size))
    if kind == "plain_dwconv":
        return plain_dwconv(kernel)
    if kind == "gated_conv":
        return gated_conv(kernel)
    if kind == "se_block":
        hidden = max(1, channels // 2)
        w1 = rng.standard_normal((channels, hidden))
        w2 = rng.standard_normal((hidden, channels))
        return se_block(kernel, w1, w2, linearized=linearized)
    if kind == "self_attention_toy":
        wq, wk, wv = (rng.standard_normal((channels, channels)) / math.sqrt(channels) for _ in range(3))
        return self_attention_toy(wq, wk, wv, softmax=not linearized)
    if kind == "gnconv":
        return gnconv_op(order, channels, seed=seed, kernel_kind=f"dwconv{kernel_size}")
    raise ValueError(f"unknown reference op {kind!r}; choose from {REFERENCE_KINDS}")


# ---------------------------------------------------------------- probes


def _unit(rng, c):
    v = rng.standard_normal(c)
    return v / np.linalg.norm(v)


def interaction_effect(op: ReferenceOp, x: np.ndarray, i: tuple[int, int], j: tuple[int, int],
                       c: int, h: float = 1e-3, directions: tuple | None = None,
                       seed: int = 0, transposed: bool = False) -> float:
    """Central-difference estimate of ``d^2 F_i^c / (dx_i dx_j)``.

    Location ``i`` is moved along channel direction ``u`` and ``j`` along
    ``v`` (random unit vectors unless ``directions`` is given).  Pairs outside
    the operator's receptive field return exactly 0.  The two locations use
    steps ``h`` and ``h/2``; ``transposed`` exchanges them.
    """
    i, j = tuple(i), tuple(j)
    if i == j:
        raise ValueError("interaction needs two distinct locations")
    if not op.sees(i, j):
        return 0.0
    x = np.asarray(x, dtype=np.float64)
    C = x.shape[1]
    if directions is None:
        rng = np.random.default_rng(seed)
        u, v = _unit(rng, C), _unit(rng, C)
    else:
        u, v = (np.broadcast_to(np.asarray(d, dtype=np.float64), (C,)) for d in directions)

    # exchanging the probes swaps the step sizes of the two locations
    hi, hj = (h / 2.0, h) if transposed else (h, h / 2.0)

    def F(a, b):
        xp = x.copy()
        xp[0, :, i[0], i[1]] += a * u
        xp[0, :, j[0], j[1]] += b * v
        return op(xp)[0, c, i[0], i[1]]

    return (F(hi, hj) - F(hi, -hj) - F(-hi, hj) + F(-hi, -hj)) / (4.0 * hi * hj)


def line_probe(op: Callable, x: np.ndarray, direction: np.ndarray, seed: int = 0) -> Callable[[float], float]:
    """``t -> <r, op(x + t * direction)>`` for a fixed random read-out ``r``."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    r = np.random.default_rng(seed).standard_normal(np.shape(op(x)))
    return lambda t: float((r * op(x + t * d)).sum())


def polynomial_degree(op: Callable, x: np.ndarray, direction: np.ndarray, max_order: int = 8,
                      h: float = 0.5, tol: float = 1e-6, seed: int = 0) -> int | None:
    """Smallest ``m`` whose order ``m+1`` divided difference vanishes along the line.

    A difference counts as vanished when it is below ``tol`` relative to the
    largest probe value on its stencil.  Returns None when no order up to
    ``max_order`` annihilates the probe (inconclusive, e.g. non-polynomial ops).
    """
    f = line_probe(op, x, direction, seed=seed)
    cache: dict[float, float] = {}

    def fc(t):
        if t not in cache:
            cache[t] = f(t)
        return cache[t]

    for m in range(0, max_order + 1):
        q = m + 1
        d = divided_difference(fc, 0.0, q, h)
        scale = max(abs(fc((q / 2.0 - k) * h)) for k in range(q + 1))
        if abs(d) <= tol * max(scale, np.finfo(float).tiny):
            return m
    return None


def classify_all(seed: int = 0, channels: int = 4, size: int = 6,
                 orders: tuple[int, ...] = (1, 2, 3)) -> list[InteractionReport]:
    """Order table for every reference operator under fixed seeds."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, channels, size, size))
    direction = rng.standard_normal(x.shape)
    centre = (size // 2, size // 2)
    pairs = [(centre, (centre[0], centre[1] + 1)), (centre, (centre[0] + 1, centre[1] - 1)),
             ((1, 1), (0, 1)), ((size - 2, 1), (size - 1, 2))]

    jobs = [(k, CLAIMED_ORDER[k], {}) for k in ("plain_dwconv", "se_block", "gated_conv",
                                               "self_attention_toy")]
    jobs += [("gnconv", n, {"order": n}) for n in orders]
    reports = []
    for kind, claimed, extra in jobs:
        ch = channels if kind != "gnconv" else max(channels, 2 ** (extra["order"] - 1))
        xi = x if ch == channels else rng.standard_normal((1, ch, size, size))
        di = direction if ch == channels else rng.standard_normal(xi.shape)
        ie_op = build_reference_op(kind, ch, seed=seed, **extra)
        deg_op = build_reference_op(kind, ch, seed=seed, linearized=True, **extra)
        ie = max(abs(interaction_effect(ie_op, xi, i, j, c, seed=seed + c))
                 for i, j in pairs for c in range(min(ch, 2)))
        degree = polynomial_degree(deg_op, xi, di, seed=seed)
        reports.append(InteractionReport(ie_op.name, ie, degree, claimed))
    return reports
