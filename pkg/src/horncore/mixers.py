"""Depth-wise spatial mixers: KxK depth-wise conv, FFT global filter, mixed GF, 3x3 pooling.

All mixers act per channel on (B, C, H, W) feature maps and preserve the
spatial size.  Convolutions are cross-correlations,
``y[b, c, i] = sum_{j in window(i)} w[c, j - i] * x[b, c, j]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, ParameterStore, channel_split, concat, record_macs

PADDING_MODES = ("zero", "circular")


def _check_feature_map(x: Tensor) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) feature map, got shape {x.shape}")


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     padding_mode: str = "zero") -> Tensor:
    """Same-size depth-wise convolution by direct accumulation over kernel offsets."""
    _check_feature_map(x)
    if weight.data.ndim != 3 or weight.shape[1] != weight.shape[2]:
        raise ValueError(f"kernel must be (C, K, K), got {weight.shape}")
    c, k = weight.shape[0], weight.shape[1]
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if x.shape[1] != c:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, kernel has {c}")
    if padding_mode not in PADDING_MODES:
        raise ValueError(f"unknown padding mode {padding_mode!r}")
    b, _, h, wd = x.shape
    r = k // 2
    w = weight.data
    record_macs("dwconv", b * c * h * wd * k * k)

    if padding_mode == "circular":
        out = np.zeros_like(x.data)
        for u in range(k):
            for v in range(k):
                out += w[None, :, u, v, None, None] * np.roll(x.data, (r - u, r - v), axis=(2, 3))
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (r, r), (r, r)))
        out = np.zeros_like(x.data)
        for u in range(k):
            for v in range(k):
                out += w[None, :, u, v, None, None] * xp[:, :, u:u + h, v:v + wd]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gw = np.zeros_like(w)
        if padding_mode == "circular":
            gx = np.zeros_like(x.data)
            for u in range(k):
                for v in range(k):
                    gx += w[None, :, u, v, None, None] * np.roll(g, (u - r, v - r), axis=(2, 3))
                    gw[:, u, v] = (g * np.roll(x.data, (r - u, r - v), axis=(2, 3))).sum(axis=(0, 2, 3))
        else:
            gxp = np.zeros_like(xp)
            for u in range(k):
                for v in range(k):
                    gxp[:, :, u:u + h, v:v + wd] += w[None, :, u, v, None, None] * g
                    gw[:, u, v] = (g * xp[:, :, u:u + h, v:v + wd]).sum(axis=(0, 2, 3))
            gx = gxp[:, :, r:r + h, r:r + wd]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, backward)


def global_filter2d(x: Tensor, weight: Tensor) -> Tensor:
    """Multiply the real 2-D spectrum of each channel by a learnable complex filter.

    ``weight`` holds the filter as (C, H, W//2 + 1, 2) real/imaginary pairs.
    Equivalent to a circular convolution with the kernel ``irfft2(filter)``.
    """
    _check_feature_map(x)
    b, c, h, w = x.shape
    wf = w // 2 + 1
    if weight.shape != (c, h, wf, 2):
        raise ValueError(
            f"global filter of shape {weight.shape} does not match input {x.shape}; "
            f"expected {(c, h, wf, 2)}"
        )
    record_macs("global_filter", 4 * b * c * h * wf)
    filt = weight.data[..., 0] + 1j * weight.data[..., 1]
    spec = np.fft.rfft2(x.data, axes=(2, 3))
    out = np.fft.irfft2(spec * filt[None], s=(h, w), axes=(2, 3)).astype(x.dtype)

    def backward(g):
        gspec = np.fft.rfft2(g, axes=(2, 3))
        # conj of the Hermitian-consistent part of the filter is the adjoint kernel
        proj = np.fft.rfft2(np.fft.irfft2(filt, s=(h, w), axes=(1, 2)), axes=(1, 2))
        gx = np.fft.irfft2(gspec * np.conj(proj)[None], s=(h, w), axes=(2, 3)).astype(x.dtype)
        wts = np.full(wf, 2.0)
        wts[0] = 1.0
        if w % 2 == 0:
            wts[-1] = 1.0
        gz = gspec * wts / (h * w)
        gf = (np.conj(spec) * gz).sum(axis=0)
        gw = np.stack([gf.real, gf.imag], axis=-1).astype(weight.dtype)
        return gx, gw

    return Tensor.from_op(out, (x, weight), backward)


def pool3x3(x: Tensor) -> Tensor:
    """3x3 mean pooling, stride 1, zero padding; always divides by 9."""
    _check_feature_map(x)
    b, c, h, w = x.shape
    record_macs("dwconv", b * c * h * w * 9)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(x.data)
    for u in range(3):
        for v in range(3):
            out += xp[:, :, u:u + h, v:v + w]
    out /= 9.0

    def backward(g):
        gxp = np.zeros_like(xp)
        for u in range(3):
            for v in range(3):
                gxp[:, :, u:u + h, v:v + w] += g
        return (gxp[:, :, 1:1 + h, 1:1 + w] / 9.0,)

    return Tensor.from_op(out, (x,), backward)


def kernel_from_filter(weight: np.ndarray, spatial_size: tuple[int, int]) -> np.ndarray:
    """Spatial-domain (C, H, W) circular kernel equivalent to a global filter."""
    filt = weight[..., 0] + 1j * weight[..., 1]
    return np.fft.irfft2(filt, s=spatial_size, axes=(1, 2))


def circular_conv_direct(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Reference circular convolution ``y[i] = sum_j kernel[c, j] * x[c, i - j]`` by brute force."""
    b, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for dy in range(h):
        for dx in range(w):
            out += kernel[None, :, dy, dx, None, None] * np.roll(x, (dy, dx), axis=(2, 3))
    return out


# ---------------------------------------------------------------- parameter holders


@dataclass
class DepthwiseKernel:
    weight: Tensor
    bias: Tensor | None = None
    padding_mode: str = "zero"

    def __post_init__(self):
        k = self.weight.shape[-1]
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        if self.padding_mode not in PADDING_MODES:
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[-1]

    def __call__(self, x: Tensor) -> Tensor:
        return depthwise_conv2d(x, self.weight, self.bias, self.padding_mode)

    def subset(self, lo: int, hi: int) -> "DepthwiseKernel":
        """Kernel restricted to channels ``[lo, hi)``, sharing gradients with this one."""
        def cut(t):
            if t is None:
                return None
            c = t.shape[0]
            widths = [w for w in (lo, hi - lo, c - hi) if w > 0]
            parts = channel_split(t, widths, axis=0)
            return parts[1] if lo > 0 else parts[0]
        return DepthwiseKernel(cut(self.weight), cut(self.bias), self.padding_mode)

    def explicit(self):
        bias = None if self.bias is None else self.bias.data
        return self.weight.data, bias, self.padding_mode


@dataclass
class GlobalFilterWeights:
    weight: Tensor
    spatial_size: tuple[int, int]

    def __post_init__(self):
        h, w = self.spatial_size
        if self.weight.shape[1:] != (h, w // 2 + 1, 2):
            raise ValueError(
                f"filter shape {self.weight.shape} is not the half spectrum of {self.spatial_size}"
            )

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if tuple(x.shape[2:]) != tuple(self.spatial_size):
            raise ValueError(
                f"global filter built for {self.spatial_size} but input is {x.shape[2:]}; "
                "resampling is not supported"
            )
        return global_filter2d(x, self.weight)

    def materialize(self) -> np.ndarray:
        return kernel_from_filter(self.weight.data, self.spatial_size)

    def explicit(self):
        raise ValueError("global filter has no explicit local kernel; materialize it first")


@dataclass
class MixedGFParams:
    """Global filter on the first half of the channels, 3x3 depth-wise conv on the rest."""

    gf: GlobalFilterWeights
    dw3: DepthwiseKernel

    def __post_init__(self):
        if self.gf.channels != self.dw3.channels:
            raise ValueError("mixed GF halves must have equal channel counts")
        if self.dw3.kernel_size != 3:
            raise ValueError("mixed GF local half uses a 3x3 kernel")

    @property
    def channels(self) -> int:
        return self.gf.channels + self.dw3.channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2:
            raise ValueError(f"mixed GF needs an even channel count, got {x.shape[1]}")
        half = x.shape[1] // 2
        if half != self.gf.channels:
            raise ValueError(f"channel mismatch: input {x.shape[1]}, mixer {self.channels}")
        a, b = channel_split(x, [half, half])
        return concat([self.gf(a), self.dw3(b)])

    def explicit(self):
        raise ValueError("mixed GF includes a global filter without an explicit local kernel")


@dataclass
class Pool3x3:
    channels: int

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"channel mismatch: input {x.shape[1]}, mixer {self.channels}")
        return pool3x3(x)

    def subset(self, lo: int, hi: int) -> "Pool3x3":
        return Pool3x3(hi - lo)

    def explicit(self):
        return np.full((self.channels, 3, 3), 1.0 / 9.0), None, "zero"


# ---------------------------------------------------------------- construction


def init_depthwise(store: ParameterStore, name: str, channels: int, kernel_size: int,
                   rng: np.random.Generator, bias: bool = True, padding_mode: str = "zero",
                   dtype=np.float64) -> DepthwiseKernel:
    bound = 1.0 / kernel_size
    w = store.add(f"{name}.weight",
                  rng.uniform(-bound, bound, size=(channels, kernel_size, kernel_size)), dtype=dtype)
    b = store.add(f"{name}.bias", np.zeros(channels), dtype=dtype) if bias else None
    return DepthwiseKernel(w, b, padding_mode)


def init_global_filter(store: ParameterStore, name: str, channels: int,
                       spatial_size: tuple[int, int], rng: np.random.Generator,
                       dtype=np.float64) -> GlobalFilterWeights:
    h, w = spatial_size
    value = 0.02 * rng.standard_normal((channels, h, w // 2 + 1, 2))
    return GlobalFilterWeights(store.add(f"{name}.filter", value, dtype=dtype), (h, w))


def parse_mixer_kind(kind: str) -> tuple[str, int | None]:
    """Split a mixer kind into its family and kernel size (``dwconv7`` -> ("dwconv", 7))."""
    if kind.startswith("dwconv"):
        try:
            k = int(kind[len("dwconv"):])
        except ValueError as exc:
            raise ValueError(f"unknown mixer kind {kind!r}") from exc
        if k < 1 or k % 2 == 0:
            raise ValueError(f"depth-wise kernel size must be odd and positive, got {k}")
        return "dwconv", k
    if kind in ("global_filter", "mixed_gf"):
        return kind, None
    if kind == "pool3":
        return "pool", 3
    raise ValueError(f"unknown mixer kind {kind!r}")


def build_mixer(kind: str, channels: int, store: ParameterStore, name: str,
                rng: np.random.Generator, spatial_size: tuple[int, int] | None = None,
                padding_mode: str = "zero", bias: bool = True, dtype=np.float64):
    family, k = parse_mixer_kind(kind)
    if family == "dwconv":
        return init_depthwise(store, name, channels, k, rng, bias=bias,
                              padding_mode=padding_mode, dtype=dtype)
    if family == "pool":
        return Pool3x3(channels)
    if spatial_size is None:
        raise ValueError(f"mixer {kind!r} needs the spatial size it is built for")
    if family == "global_filter":
        return init_global_filter(store, name, channels, spatial_size, rng, dtype=dtype)
    if channels % 2:
        raise ValueError(f"mixed GF needs an even channel count, got {channels}")
    half = channels // 2
    gf = init_global_filter(store, f"{name}.gf", half, spatial_size, rng, dtype=dtype)
    dw3 = init_depthwise(store, f"{name}.dw3", half, 3, rng, bias=bias, padding_mode=padding_mode,
                         dtype=dtype)
    return MixedGFParams(gf, dw3)


def depthwise_conv(x: Tensor, k: DepthwiseKernel) -> Tensor:
    return k(x)


def global_filter_apply(x: Tensor, g: GlobalFilterWeights) -> Tensor:
    return g(x)


def mixed_gf(x: Tensor, p: MixedGFParams) -> Tensor:
    return p(x)
