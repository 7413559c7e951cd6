"""Minimal dense-tensor engine with a recorded tape for reverse-mode gradients.

Every op computes its forward value eagerly with numpy and, unless recording
is disabled with :func:`no_grad`, attaches a closure mapping the output
gradient to one gradient per parent.  Feature maps use the (batch, channel,
height, width) layout throughout.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from collections import OrderedDict
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf

_recording = contextvars.ContextVar("recording", default=True)
_mac_counter = contextvars.ContextVar("mac_counter", default=None)


class Tensor:
    """Dense real array node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        if any(d < 1 for d in arr.shape):
            raise ValueError(f"all extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        """Wrap an op result; ``backward(g)`` must return one gradient (or None) per parent."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        live = _recording.get() and any(p.requires_grad for p in parents)
        out.requires_grad = live
        out._parents = tuple(parents) if live else ()
        out._backward = backward if live else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("only division by a python scalar is supported")


class Parameter(Tensor):
    """Named trainable leaf tensor with a gradient buffer of identical shape."""

    __slots__ = ()

    def __init__(self, name: str, value, dtype=None):
        super().__init__(value, requires_grad=True, dtype=dtype, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class ParameterStore:
    """Insertion-ordered collection of uniquely named parameters."""

    def __init__(self):
        self._params: OrderedDict[str, Parameter] = OrderedDict()

    def add(self, name: str, value, dtype=None) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, value, dtype=dtype)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def num_elements(self) -> int:
        return sum(p.size for p in self)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for k, p in self._params.items():
            v = np.asarray(state[k])
            if v.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {p.shape}")
            p.data = v.astype(p.dtype, copy=True)


# ---------------------------------------------------------------- context


@contextlib.contextmanager
def no_grad():
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


class MacCounter:
    """Tally of multiply-accumulates recorded by ops, keyed by op kind."""

    def __init__(self):
        self.by_kind: dict[str, int] = {}

    def add(self, kind: str, n: int) -> None:
        self.by_kind[kind] = self.by_kind.get(kind, 0) + int(n)

    @property
    def total(self) -> int:
        return sum(self.by_kind.values())


@contextlib.contextmanager
def count_macs():
    """Collect MACs of linear, depth-wise mixing and gating products run inside the block."""
    counter = MacCounter()
    token = _mac_counter.set(counter)
    try:
        yield counter
    finally:
        _mac_counter.reset(token)


def record_macs(kind: str, n: int) -> None:
    counter = _mac_counter.get()
    if counter is not None:
        counter.add(kind, n)


# ---------------------------------------------------------------- helpers


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        return (g * s,)

    return Tensor.from_op(a.data * s, (a,), backward)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of two tensors of identical shape."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in elementwise_mul: {a.shape} vs {b.shape}")
    record_macs("gating", a.size)

    def backward(g):
        return g * b.data, g * a.data

    return Tensor.from_op(a.data * b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Broadcasting product (bias-like scales); not tallied as MACs."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ValueError(f"shape mismatch in mul: {a.shape} vs {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None, axis: int = -1) -> Tensor:
    """Contract ``x`` along ``axis`` with ``w[Cin, Cout]`` and add ``b[Cout]``."""
    if w.data.ndim != 2:
        raise ValueError(f"weight must be rank 2, got shape {w.shape}")
    axis = axis % x.data.ndim
    cin, cout = w.shape
    if x.shape[axis] != cin:
        raise ValueError(f"dimension mismatch: input has {x.shape[axis]} features, weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"bias shape {b.shape} does not match output width {cout}")
    record_macs("linear", x.size // cin * cin * cout)
    y = np.moveaxis(np.tensordot(x.data, w.data, axes=([axis], [0])), -1, axis)
    bshape = [1] * x.data.ndim
    bshape[axis] = cout
    if b is not None:
        y = y + b.data.reshape(bshape)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = np.moveaxis(np.tensordot(g, w.data, axes=([axis], [1])), -1, axis)
        xm = np.moveaxis(x.data, axis, -1).reshape(-1, cin)
        gm = np.moveaxis(g, axis, -1).reshape(-1, cout)
        gw = xm.T @ gm
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    return Tensor.from_op(y, parents, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), backward)


# ---------------------------------------------------------------- shape ops


def channel_split(x: Tensor, widths: Sequence[int], axis: int = 1) -> list[Tensor]:
    """Contiguous slices of ``x`` along ``axis`` with the given widths."""
    widths = [int(w) for w in widths]
    if any(w < 1 for w in widths) or sum(widths) != x.shape[axis]:
        raise ValueError(f"widths {widths} do not sum to {x.shape[axis]}")
    bounds = np.cumsum([0] + widths)
    outs = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = [slice(None)] * x.data.ndim
        idx[axis] = slice(int(lo), int(hi))
        idx = tuple(idx)

        def backward(g, idx=idx):
            full = np.zeros_like(x.data)
            full[idx] = g
            return (full,)

        outs.append(Tensor.from_op(x.data[idx], (x,), backward))
    return outs


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return Tensor.from_op(out, tuple(parts), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor.from_op(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inv),)

    return Tensor.from_op(x.data.transpose(axes), (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        b, c, h, w = x.shape
        return (g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), backward)


# ---------------------------------------------------------------- nonlinearities


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data**2) / math.sqrt(2.0 * math.pi)

    def backward(g):
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(x.data * cdf, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor.from_op(s, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return Tensor.from_op(t, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(x.data * mask, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(s, (x,), backward)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor] | None] = {
    "none": None,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "gelu": gelu,
    "relu": relu,
}


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-6, axis: int = 1) -> Tensor:
    """Normalize over ``axis`` to zero mean / unit variance, then apply the affine."""
    axis = axis % x.data.ndim
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    c = x.shape[axis]
    bshape = [1] * x.data.ndim
    bshape[axis] = c
    gam = gamma.data.reshape(bshape) if gamma is not None else 1.0
    out = xhat * gam
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)
    other_axes = tuple(a for a in range(x.data.ndim) if a != axis)

    def backward(g):
        gh = g * gam
        gx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=other_axes))
        if beta is not None:
            grads.append(g.sum(axis=other_axes))
        return tuple(grads)

    return Tensor.from_op(out, tuple(parents), backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under row-wise softmax of ``logits[N, K]``."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------- differentiation


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(loss: Tensor) -> dict[int, np.ndarray]:
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None) if node._backward is not None else grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def grad(loss: Tensor, inputs: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``inputs`` without touching any ``.grad`` buffer."""
    grads = _propagate(loss)
    return [grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape) for t in inputs]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
    grads = _propagate(loss)
    for node in _topo_order(loss):
        if node._backward is None and node.requires_grad and id(node) in grads:
            g = grads[id(node)].reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g


# ---------------------------------------------------------------- finite differences


def divided_difference(f: Callable[[float], float], t0: float, m: int, h: float) -> float:
    """Central m-th order finite difference of ``f`` at ``t0`` divided by ``h**m``."""
    if m < 1 or h <= 0:
        raise ValueError("need m >= 1 and h > 0")
    total = 0.0
    for k in range(m + 1):
        total += (-1) ** k * math.comb(m, k) * f(t0 + (m / 2.0 - k) * h)
    return total / h**m


def numerical_gradient(fn: Callable[[], float], t: Tensor, h: float = 1e-5,
                       indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``fn()`` w.r.t. entries of ``t.data``.

    Entries not listed in ``indices`` are left as NaN.
    """
    if indices is None:
        indices = list(np.ndindex(*t.shape))
    out = np.full(t.shape, np.nan)
    for idx in indices:
        old = t.data[idx]
        t.data[idx] = old + h
        fp = float(fn())
        t.data[idx] = old - h
        fm = float(fn())
        t.data[idx] = old
        out[idx] = (fp - fm) / (2.0 * h)
    return out


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
              max_entries: int | None = 64, seed: int = 0) -> float:
    """Max relative error between tape and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the current values of ``tensors``.  The
    error of each tensor is ``max|analytic - numeric|`` over the probed entries,
    divided by ``max|numeric|`` over the same entries; the worst tensor is returned.
    """
    rng = np.random.default_rng(seed)
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
    try:
        analytic = grad(fn(), tensors)
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f
    worst = 0.0
    with no_grad():
        for t, a in zip(tensors, analytic):
            all_idx = list(np.ndindex(*t.shape))
            if max_entries is not None and len(all_idx) > max_entries:
                pick = rng.choice(len(all_idx), size=max_entries, replace=False)
                all_idx = [all_idx[i] for i in pick]
            num = numerical_gradient(lambda: fn().data, t, h=h, indices=all_idx)
            sel = tuple(np.array(all_idx).T)
            an, nu = a[sel], num[sel]
            denom = max(np.abs(nu).max(), np.abs(an).max(), 1e-12)
            worst = max(worst, float(np.abs(an - nu).max() / denom))
    return worst
