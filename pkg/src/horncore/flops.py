"""Analytic FLOPs / parameter model for gnConv and HorNet backbones.

Counts follow the usual vision-backbone convention in which one
multiply-accumulate is one "FLOP": a ``Cin -> Cout`` projection over ``N``
positions costs ``N * Cin * Cout`` and a depth-wise ``K x K`` conv over ``C``
channels costs ``H * W * C * K**2``.  Exact arithmetic uses
:class:`fractions.Fraction`; every closed form below is an integer for valid
``(n, C)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .gnconv import GnConvConfig, channel_schedule, gnconv_forward, init_gnconv
from .hornet import ModelSpec
from .mixers import parse_mixer_kind
from .tensor import Tensor, count_macs, no_grad


def _exact(value: Fraction) -> int:
    if value.denominator != 1:
        raise ArithmeticError(f"closed form is not an integer: {value}")
    return int(value)


def flops_projection(H: int, W: int, C: int) -> int:
    """``phi_in`` (``2HWC^2``) plus ``phi_out`` (``HWC^2``)."""
    return 3 * H * W * C * C


def flops_dwconv(H: int, W: int, C: int, K: int, n: int) -> int:
    """Closed form ``2HWCK^2 (1 - 1/2^n)`` for the single mixer over all ``q_k``."""
    return _exact(2 * H * W * C * K * K * (1 - Fraction(1, 2**n)))


def flops_dwconv_sum(H: int, W: int, C: int, K: int, n: int) -> int:
    return sum(H * W * K * K * c for c in channel_schedule(n, C))


def flops_recursive_gating(H: int, W: int, C: int, n: int) -> int:
    """Closed form ``HWC [2/3 C (1 - 1/4^(n-1)) + 2 - 1/2^(n-1)]``."""
    channel_schedule(n, C)
    inner = Fraction(2, 3) * C * (1 - Fraction(1, 4 ** (n - 1))) + 2 - Fraction(1, 2 ** (n - 1))
    return _exact(H * W * C * inner)


def flops_recursive_gating_sum(H: int, W: int, C: int, n: int) -> int:
    dims = channel_schedule(n, C)
    total = H * W * dims[0]
    for k in range(1, n):
        total += H * W * dims[k - 1] * dims[k] + H * W * dims[k]
    return total


def flops_gnconv_closed(H: int, W: int, C: int, K: int, n: int) -> int:
    """Single closed form of the whole operator."""
    bracket = (2 * K * K * (1 - Fraction(1, 2**n))
               + (Fraction(11, 3) - Fraction(2, 3 * 4 ** (n - 1))) * C
               + 2 - Fraction(1, 2 ** (n - 1)))
    return _exact(H * W * C * bracket)


def flops_bound(H: int, W: int, C: int, K: int) -> Fraction:
    """Order-independent upper bound ``HWC (2K^2 + 11/3 C + 2)``."""
    return H * W * C * (2 * K * K + Fraction(11, 3) * C + 2)


@dataclass
class FlopsReport:
    projection: int
    dwconv: int
    recursive_gating: int
    total: int
    bound: Fraction
    empirical_macs: int | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["bound"] = float(self.bound)
        return d


def empirical_gnconv_macs(H: int, W: int, C: int, K: int, n: int) -> int:
    """Run one gnConv forward under the MAC counter and return the tally."""
    cfg = GnConvConfig(n, C, f"dwconv{K}")
    params = init_gnconv(cfg, seed=0)
    with no_grad(), count_macs() as counter:
        gnconv_forward(Tensor(np.zeros((1, C, H, W))), cfg, params)
    return counter.total


def flops_gnconv_total(H: int, W: int, C: int, K: int, n: int, empirical: bool = False) -> FlopsReport:
    proj = flops_projection(H, W, C)
    dw = flops_dwconv(H, W, C, K, n)
    gating = flops_recursive_gating(H, W, C, n)
    report = FlopsReport(proj, dw, gating, proj + dw + gating, flops_bound(H, W, C, K))
    if empirical:
        report.empirical_macs = empirical_gnconv_macs(H, W, C, K, n)
    return report


# ---------------------------------------------------------------- whole models


def _mixer_cost(kind: str, H: int, W: int, channels: int) -> int:
    family, k = parse_mixer_kind(kind)
    if family in ("dwconv", "pool"):
        return H * W * channels * k * k
    wf = W // 2 + 1
    if family == "global_filter":
        return 4 * H * wf * channels
    half = channels // 2
    return 4 * H * wf * half + H * W * half * 9


def _mixer_params(kind: str, H: int, W: int, channels: int, bias: bool) -> int:
    family, k = parse_mixer_kind(kind)
    if family == "dwconv":
        return channels * k * k + (channels if bias else 0)
    if family == "pool":
        return 0
    wf = W // 2 + 1
    if family == "global_filter":
        return channels * H * wf * 2
    half = channels // 2
    return half * H * wf * 2 + half * 9 + (half if bias else 0)


def model_breakdown(spec: ModelSpec, input_size: int | None = None) -> dict[str, int]:
    """MACs per model part.

    ``stem``, ``downsample``, ``gnconv``, ``ffn`` and ``head`` are exactly the
    multiply-accumulates executed by the implementation; ``extras`` adds one
    operation per element for each bias add, norm affine and LayerScale.
    """
    size = spec.image_size if input_size is None else input_size
    if size % spec.reduction():
        raise ValueError(f"input size {size} not divisible by {spec.reduction()}")
    widths = spec.stage_widths()
    res = spec.stage_resolutions(size)
    parts = dict(stem=0, downsample=0, gnconv=0, ffn=0, head=0, extras=0)
    p = spec.stem_patch
    hw = res[0] ** 2
    parts["stem"] = hw * spec.in_chans * p * p * widths[0]
    parts["extras"] += hw * widths[0] * (1 + 2 * spec.use_norm)
    for s, (C, n, mix, depth) in enumerate(zip(widths, spec.orders, spec.mixers, spec.depths)):
        hw = res[s] ** 2
        if s > 0 and not spec.isotropic:
            cin = widths[s - 1]
            parts["downsample"] += hw * cin * 4 * C
            parts["extras"] += 4 * hw * cin * 2 * spec.use_norm + hw * C
        dims = channel_schedule(n, C)
        mixer_ch = 2 * C - dims[0]
        gn = 3 * hw * C * C + _mixer_cost(mix, res[s], res[s], mixer_ch)
        gn += flops_recursive_gating(res[s], res[s], C, n)
        ffn = 2 * hw * C * C * spec.ffn_expansion if spec.use_ffn else 0
        # biases: phi_in, mixer, g_k, phi_out, fc1, fc2; norms; LayerScale
        extra = hw * (2 * C + mixer_ch + sum(dims[1:]) + C) * spec.bias + hw * C
        extra += 2 * hw * C * spec.use_norm
        if spec.use_ffn:
            extra += hw * (C * spec.ffn_expansion + C) * spec.bias + hw * C + 2 * hw * C * spec.use_norm
        parts["gnconv"] += depth * gn
        parts["ffn"] += depth * ffn
        parts["extras"] += depth * extra
    parts["head"] = widths[-1] * spec.num_classes
    parts["extras"] += res[-1] ** 2 * widths[-1] + 2 * widths[-1] * spec.use_norm + spec.num_classes
    return parts


def model_flops(spec: ModelSpec, input_size: int | None = None) -> int:
    return sum(model_breakdown(spec, input_size).values())


def model_params(spec: ModelSpec) -> int:
    """Exact parameter count from the shapes a built model allocates."""
    widths = spec.stage_widths()
    res = spec.stage_resolutions()
    norm = 2 if spec.use_norm else 0
    p = spec.stem_patch
    total = spec.in_chans * p * p * widths[0] + widths[0] + norm * widths[0]
    for s, (C, n, mix, depth) in enumerate(zip(widths, spec.orders, spec.mixers, spec.depths)):
        if s > 0 and not spec.isotropic:
            cin = widths[s - 1]
            total += norm * cin + cin * 4 * C + C
        dims = channel_schedule(n, C)
        mixer_ch = 2 * C - dims[0]
        b = 1 if spec.bias else 0
        block = norm * C
        block += C * 2 * C + b * 2 * C
        block += _mixer_params(mix, res[s], res[s], mixer_ch, spec.bias)
        block += sum(dims[k - 1] * dims[k] + b * dims[k] for k in range(1, n))
        block += C * C + b * C
        block += C
        if spec.use_ffn:
            hidden = C * spec.ffn_expansion
            block += norm * C + C * hidden + b * hidden + hidden * C + b * C + C
        total += depth * block
    total += norm * widths[-1] + widths[-1] * spec.num_classes + spec.num_classes
    return total
