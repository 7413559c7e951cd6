"""Recursive gated convolution.

``phi_in`` projects the input to ``2C`` channels split as ``[p0, q0, ..., q_{n-1}]``
with widths from :func:`channel_schedule`.  One depth-wise mixer runs over the
concatenated ``q`` channels, then the recursion

    p_{k+1} = f_k(q_k) * g_k(p_k) / alpha,   g_0 = identity,

is unrolled and ``phi_out(p_n)`` is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .mixers import build_mixer, parse_mixer_kind
from .tensor import Parameter, ParameterStore, Tensor

GATING_ACTIVATIONS = ("none", "sigmoid", "tanh", "gelu")


def channel_schedule(n: int, C: int) -> list[int]:
    """Coarse-to-fine widths ``C_k = C / 2**(n - k - 1)`` for ``k = 0..n-1``."""
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    if C < 1 or C % (2 ** (n - 1)):
        raise ValueError(f"channels {C} not divisible by 2**(n-1) = {2 ** (n - 1)}")
    return [C // 2 ** (n - k - 1) for k in range(n)]


def max_order(C: int) -> int:
    """Largest order allowed for ``C`` channels, ``floor(1 + log2 C)``."""
    return 1 + int(math.floor(math.log2(C)))


@dataclass(frozen=True)
class GnConvConfig:
    order: int
    channels: int
    mixer_kind: str = "dwconv7"
    alpha: float = 3.0
    gating_activation: str = "none"
    padding_mode: str = "zero"
    spatial_size: tuple[int, int] | None = None
    bias: bool = True

    def __post_init__(self):
        if self.order < 1 or self.order > 1 + math.log2(self.channels):
            raise ValueError(f"order {self.order} outside [1, 1 + log2({self.channels})]")
        channel_schedule(self.order, self.channels)
        parse_mixer_kind(self.mixer_kind)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.gating_activation not in GATING_ACTIVATIONS:
            raise ValueError(f"unknown gating activation {self.gating_activation!r}")

    @property
    def dims(self) -> list[int]:
        return channel_schedule(self.order, self.channels)

    @property
    def mixer_channels(self) -> int:
        return 2 * self.channels - self.dims[0]


@dataclass
class GnConvParams:
    config: GnConvConfig
    phi_in_w: Parameter
    phi_in_b: Parameter | None
    phi_out_w: Parameter
    phi_out_b: Parameter | None
    g_w: list[Parameter] = field(default_factory=list)
    g_b: list[Parameter | None] = field(default_factory=list)
    mixer: object = None

    def __post_init__(self):
        C = self.config.channels
        if self.phi_in_w.shape != (C, 2 * C):
            raise ValueError(f"phi_in must map {C} -> {2 * C}, got {self.phi_in_w.shape}")
        if self.phi_out_w.shape != (C, C):
            raise ValueError(f"phi_out must map {C} -> {C}, got {self.phi_out_w.shape}")
        dims = self.config.dims
        if len(self.g_w) != len(dims) - 1:
            raise ValueError("need one g_k projection per order above the first")
        for k, w in enumerate(self.g_w, start=1):
            if w.shape != (dims[k - 1], dims[k]):
                raise ValueError(f"g_{k} must map {dims[k - 1]} -> {dims[k]}, got {w.shape}")
        if getattr(self.mixer, "channels", None) != self.config.mixer_channels:
            raise ValueError(f"mixer must cover {self.config.mixer_channels} channels")


def _uniform_linear(rng, cin, cout):
    bound = 1.0 / math.sqrt(cin)
    return rng.uniform(-bound, bound, size=(cin, cout))


def init_gnconv(cfg: GnConvConfig, store: ParameterStore | None = None, prefix: str = "gnconv",
                seed: int | np.random.Generator = 0, dtype=np.float64) -> GnConvParams:
    """Allocate and initialize every weight of one gnConv into ``store``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParameterStore() if store is None else store
    C, dims = cfg.channels, cfg.dims

    def lin(name, cin, cout):
        w = store.add(f"{prefix}.{name}.weight", _uniform_linear(rng, cin, cout), dtype=dtype)
        b = store.add(f"{prefix}.{name}.bias", np.zeros(cout), dtype=dtype) if cfg.bias else None
        return w, b

    in_w, in_b = lin("phi_in", C, 2 * C)
    mixer = build_mixer(cfg.mixer_kind, cfg.mixer_channels, store, f"{prefix}.mixer", rng,
                        spatial_size=cfg.spatial_size, padding_mode=cfg.padding_mode,
                        bias=cfg.bias, dtype=dtype)
    g_w, g_b = [], []
    for k in range(1, cfg.order):
        w, b = lin(f"g{k}", dims[k - 1], dims[k])
        g_w.append(w)
        g_b.append(b)
    out_w, out_b = lin("phi_out", C, C)
    return GnConvParams(cfg, in_w, in_b, out_w, out_b, g_w, g_b, mixer)


def _gates(abc: Tensor, cfg: GnConvConfig, params: GnConvParams, per_step: bool) -> list[Tensor]:
    dims = cfg.dims
    if not per_step:
        return T.channel_split(params.mixer(abc), dims)
    if not hasattr(params.mixer, "subset"):
        raise ValueError(f"per-step mixing is not available for {cfg.mixer_kind!r}")
    qs = T.channel_split(abc, dims)
    out, lo = [], 0
    for q, d in zip(qs, dims):
        out.append(params.mixer.subset(lo, lo + d)(q))
        lo += d
    return out


def _project_in(x: Tensor, cfg: GnConvConfig, params: GnConvParams):
    if x.data.ndim != 4 or x.shape[1] != cfg.channels:
        raise ValueError(f"expected input with {cfg.channels} channels, got shape {x.shape}")
    fused = T.linear(x, params.phi_in_w, params.phi_in_b, axis=1)
    return T.channel_split(fused, [cfg.dims[0], cfg.mixer_channels])


def _recursion(p: Tensor, gates: list[Tensor], cfg: GnConvConfig, params: GnConvParams,
               steps: int) -> Tensor:
    act = T.ACTIVATIONS[cfg.gating_activation]
    for k in range(steps):
        if k > 0:
            p = T.linear(p, params.g_w[k - 1], params.g_b[k - 1], axis=1)
        gate = gates[k] if act is None else act(gates[k])
        p = T.scale(T.elementwise_mul(gate, p), 1.0 / cfg.alpha)
    return p


def gnconv_forward(x: Tensor, cfg: GnConvConfig | None = None, params: GnConvParams | None = None,
                   per_step: bool = False) -> Tensor:
    """Order-n recursive gated convolution of a (B, C, H, W) feature map.

    With ``per_step=True`` the mixer is applied to each ``q_k`` separately
    instead of once to their concatenation.
    """
    cfg = params.config if cfg is None else cfg
    p0, abc = _project_in(x, cfg, params)
    gates = _gates(abc, cfg, params, per_step)
    p = _recursion(p0, gates, cfg, params, cfg.order)
    return T.linear(p, params.phi_out_w, params.phi_out_b, axis=1)


def gconv_forward(x: Tensor, params: GnConvParams) -> Tensor:
    """First-order gated convolution ``phi_out(f(q0) * p0 / alpha)``."""
    if params.config.order != 1:
        raise ValueError(f"gated convolution is order 1, params are order {params.config.order}")
    return gnconv_forward(x, params.config, params)


# ---------------------------------------------------------------- input-adaptive weights


@dataclass
class MixingWeights:
    """Per-location spatial mixing weights of the last recursion step.

    ``h[b, c, y, x, u, v]`` weighs ``q_{n-1}`` at location ``(y + u - r, x + v - r)``
    for output location ``(y, x)``; ``offset`` carries the mixer-bias contribution.
    """

    h: np.ndarray
    offset: np.ndarray
    padding_mode: str

    @property
    def kernel_size(self) -> int:
        return self.h.shape[-1]

    def channel_mean(self) -> np.ndarray:
        return self.h.mean(axis=1)


def _valid_mask(h: int, w: int, k: int) -> np.ndarray:
    r = k // 2
    ys = np.arange(h)[:, None] + np.arange(k)[None, :] - r
    xs = np.arange(w)[:, None] + np.arange(k)[None, :] - r
    vy = (ys >= 0) & (ys < h)
    vx = (xs >= 0) & (xs < w)
    return vy[:, None, :, None] & vx[None, :, None, :]


def extract_mixing_weights(x: Tensor, cfg: GnConvConfig | None = None,
                           params: GnConvParams | None = None) -> MixingWeights:
    """Weights ``h_ij^c = w_{n-1, i->j}^c * g_{n-1}(p_{n-1})^{(i,c)} / alpha``."""
    cfg = params.config if cfg is None else cfg
    if cfg.gating_activation != "none":
        raise ValueError("mixing weights are linear in q only without a gating activation")
    kernel, bias, padding = params.mixer.explicit()
    n, C = cfg.order, cfg.channels
    last = kernel[cfg.mixer_channels - C:]
    last_bias = None if bias is None else bias[cfg.mixer_channels - C:]
    with T.no_grad():
        p0, abc = _project_in(x, cfg, params)
        gates = T.channel_split(params.mixer(abc), cfg.dims)
        p = _recursion(p0, gates, cfg, params, n - 1)
        if n > 1:
            p = T.linear(p, params.g_w[n - 2], params.g_b[n - 2], axis=1)
    g = p.data / cfg.alpha
    h = last[None, :, None, None, :, :] * g[:, :, :, :, None, None]
    if padding == "zero":
        h = h * _valid_mask(x.shape[2], x.shape[3], last.shape[-1])[None, None]
    offset = np.zeros_like(g) if last_bias is None else last_bias[None, :, None, None] * g
    return MixingWeights(h, offset, padding)


def reconstruct_from_weights(x: Tensor, weights: MixingWeights, params: GnConvParams) -> Tensor:
    """Rebuild the gnConv output as input-adaptive mixing of the projected input."""
    cfg = params.config
    C = cfg.channels
    h = weights.h
    k = h.shape[-1]
    r = k // 2
    w_q = params.phi_in_w.data[:, C:]
    q = np.einsum("bchw,cd->bdhw", x.data, w_q)
    if params.phi_in_b is not None:
        q = q + params.phi_in_b.data[C:][None, :, None, None]
    H, W = q.shape[2:]
    mixed = np.array(weights.offset, copy=True)
    if weights.padding_mode == "circular":
        for u in range(k):
            for v in range(k):
                mixed += h[..., u, v] * np.roll(q, (r - u, r - v), axis=(2, 3))
    else:
        qp = np.pad(q, ((0, 0), (0, 0), (r, r), (r, r)))
        for u in range(k):
            for v in range(k):
                mixed += h[..., u, v] * qp[:, :, u:u + H, v:v + W]
    y = np.einsum("bchw,cd->bdhw", mixed, params.phi_out_w.data)
    if params.phi_out_b is not None:
        y = y + params.phi_out_b.data[None, :, None, None]
    return Tensor(y)


def zero_biases(params: GnConvParams) -> None:
    """Set every bias of a gnConv (projections and mixer) to zero in place."""
    biases = [params.phi_in_b, params.phi_out_b, *params.g_b]
    mixer = params.mixer
    if getattr(mixer, "bias", None) is not None:
        biases.append(mixer.bias)
    if hasattr(mixer, "dw3") and mixer.dw3.bias is not None:
        biases.append(mixer.dw3.bias)
    for b in biases:
        if b is not None:
            b.data[...] = 0.0
