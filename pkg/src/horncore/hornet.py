"""HorNet blocks, hierarchical and isotropic backbones, and HorFPN fusion."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .gnconv import GnConvConfig, GnConvParams, gnconv_forward, init_gnconv
from .tensor import ParameterStore, Tensor


@dataclass(frozen=True)
class BlockSpec:
    channels: int
    order: int
    mixer_kind: str = "dwconv7"
    ffn_expansion: int = 4
    layerscale_init: float = 1e-6
    alpha: float = 3.0
    gating_activation: str = "none"
    padding_mode: str = "zero"
    spatial_size: tuple[int, int] | None = None
    use_ffn: bool = True
    use_norm: bool = True
    bias: bool = True
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.ffn_expansion < 1:
            raise ValueError("ffn_expansion must be >= 1")
        self.gnconv_config()

    def gnconv_config(self) -> GnConvConfig:
        return GnConvConfig(self.order, self.channels, self.mixer_kind, self.alpha,
                            self.gating_activation, self.padding_mode, self.spatial_size, self.bias)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative backbone: patchify stem, stages of HorNet blocks, pooled linear head.

    Hierarchical models double the width and halve the resolution between
    stages; isotropic models keep both constant after the stem.
    """

    width: int = 64
    depths: tuple[int, ...] = (2, 3, 18, 2)
    orders: tuple[int, ...] = (2, 3, 4, 5)
    mixers: tuple[str, ...] = ("dwconv7",) * 4
    in_chans: int = 3
    num_classes: int = 1000
    image_size: int = 224
    stem_patch: int = 4
    isotropic: bool = False
    ffn_expansion: int = 4
    layerscale_init: float = 1e-6
    alpha: float = 3.0
    gating_activation: str = "none"
    padding_mode: str = "zero"
    use_ffn: bool = True
    use_norm: bool = True
    bias: bool = True

    def __post_init__(self):
        for name in ("depths", "orders", "mixers"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (len(self.depths) == len(self.orders) == len(self.mixers)):
            raise ValueError("depths, orders and mixers need one entry per stage")
        if any(d < 1 for d in self.depths):
            raise ValueError("every stage needs at least one block")
        if self.image_size % self.reduction():
            raise ValueError(f"image size {self.image_size} not divisible by {self.reduction()}")
        for bs in self.block_specs():
            bs.gnconv_config()

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def reduction(self) -> int:
        if self.isotropic:
            return self.stem_patch
        return self.stem_patch * 2 ** (self.num_stages - 1)

    def stage_widths(self) -> list[int]:
        if self.isotropic:
            return [self.width] * self.num_stages
        return [self.width * 2**s for s in range(self.num_stages)]

    def stage_resolutions(self, image_size: int | None = None) -> list[int]:
        size = (self.image_size if image_size is None else image_size) // self.stem_patch
        if self.isotropic:
            return [size] * self.num_stages
        return [size // 2**s for s in range(self.num_stages)]

    def block_specs(self) -> list[BlockSpec]:
        """One spec per stage (blocks within a stage are identical in shape)."""
        out = []
        for c, n, mix, res in zip(self.stage_widths(), self.orders, self.mixers,
                                  self.stage_resolutions()):
            spatial = (res, res) if mix in ("global_filter", "mixed_gf") else None
            out.append(BlockSpec(c, n, mix, self.ffn_expansion, self.layerscale_init, self.alpha,
                                 self.gating_activation, self.padding_mode, spatial,
                                 self.use_ffn, self.use_norm, self.bias))
        return out

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model fields: {sorted(unknown)}")
        return cls(**d)


def _hier(width, mixers=("dwconv7",) * 4):
    return ModelSpec(width=width, mixers=mixers)


_GF = ("dwconv7", "dwconv7", "mixed_gf", "mixed_gf")

PRESETS: dict[str, ModelSpec] = {
    "hornet-t-7x7": _hier(64),
    "hornet-s-7x7": _hier(96),
    "hornet-b-7x7": _hier(128),
    "hornet-l-7x7": _hier(192),
    "hornet-t-gf": _hier(64, _GF),
    "hornet-s-gf": _hier(96, _GF),
    "hornet-b-gf": _hier(128, _GF),
    "hornet-l-gf": _hier(192, _GF),
    "hornet-s-iso-7x7": ModelSpec(width=384, depths=(13,), orders=(3,), mixers=("dwconv7",),
                                  stem_patch=16, isotropic=True),
    "micro": ModelSpec(width=16, depths=(1, 1, 2, 1), num_classes=10, image_size=64),
    "micro-iso": ModelSpec(width=32, depths=(4,), orders=(2,), mixers=("dwconv7",),
                           num_classes=10, image_size=32, stem_patch=4, isotropic=True),
}


def get_preset(name: str) -> ModelSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------- layers


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def patch_conv(x: Tensor, w: Tensor, b: Tensor | None, patch: int) -> Tensor:
    """Non-overlapping ``patch x patch`` stride-``patch`` convolution as a linear map."""
    B, C, H, W = x.shape
    if H % patch or W % patch:
        raise ValueError(f"spatial size {(H, W)} not divisible by patch {patch}")
    h, wd = H // patch, W // patch
    t = T.reshape(x, (B, C, h, patch, wd, patch))
    t = T.transpose(t, (0, 2, 4, 1, 3, 5))
    t = T.reshape(t, (B, h, wd, C * patch * patch))
    t = T.linear(t, w, b, axis=-1)
    return T.transpose(t, (0, 3, 1, 2))


class Block:
    """Pre-norm residual block: gnConv spatial mixing followed by a channel FFN."""

    def __init__(self, spec: BlockSpec, store: ParameterStore, prefix: str,
                 rng: np.random.Generator, dtype=np.float64):
        self.spec = spec
        C = spec.channels
        hidden = C * spec.ffn_expansion

        def norm(name):
            if not spec.use_norm:
                return None
            return (store.add(f"{prefix}.{name}.weight", np.ones(C), dtype=dtype),
                    store.add(f"{prefix}.{name}.bias", np.zeros(C), dtype=dtype))

        self.norm1 = norm("norm1")
        self.gnconv: GnConvParams = init_gnconv(spec.gnconv_config(), store, f"{prefix}.gnconv",
                                                rng, dtype=dtype)
        self.gamma1 = store.add(f"{prefix}.gamma1", np.full(C, spec.layerscale_init), dtype=dtype)
        self.ffn = None
        if spec.use_ffn:
            self.norm2 = norm("norm2")
            fc1_b = store.add(f"{prefix}.fc1.bias", np.zeros(hidden), dtype=dtype) if spec.bias else None
            fc1_w = store.add(f"{prefix}.fc1.weight", _uniform(rng, (C, hidden), C), dtype=dtype)
            fc2_w = store.add(f"{prefix}.fc2.weight", _uniform(rng, (hidden, C), hidden), dtype=dtype)
            fc2_b = store.add(f"{prefix}.fc2.bias", np.zeros(C), dtype=dtype) if spec.bias else None
            self.ffn = (fc1_w, fc1_b, fc2_w, fc2_b)
            self.gamma2 = store.add(f"{prefix}.gamma2", np.full(C, spec.layerscale_init), dtype=dtype)

    def _norm(self, x, params):
        if params is None:
            return x
        return T.layer_norm(x, params[0], params[1], eps=self.spec.norm_eps, axis=1)

    @staticmethod
    def _scale(x, gamma):
        return T.mul(x, T.reshape(gamma, (1, gamma.shape[0], 1, 1)))

    def mixer_input(self, x: Tensor) -> Tensor:
        return self._norm(x, self.norm1)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self._scale(gnconv_forward(self.mixer_input(x), params=self.gnconv), self.gamma1))
        if self.ffn is not None:
            fc1_w, fc1_b, fc2_w, fc2_b = self.ffn
            h = self._norm(x, self.norm2)
            h = T.gelu(T.linear(h, fc1_w, fc1_b, axis=1))
            h = T.linear(h, fc2_w, fc2_b, axis=1)
            x = T.add(x, self._scale(h, self.gamma2))
        return x


def build_block(spec: BlockSpec, seed: int = 0, dtype=np.float64,
                store: ParameterStore | None = None, prefix: str = "block") -> Block:
    store = ParameterStore() if store is None else store
    block = Block(spec, store, prefix, np.random.default_rng(seed), dtype=dtype)
    block.store = store
    return block


class HorNet:
    """A built backbone: parameters in :attr:`store`, forward via :meth:`__call__`."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        store = self.store = ParameterStore()
        widths = spec.stage_widths()
        C0 = widths[0]
        p = spec.stem_patch
        fan = spec.in_chans * p * p
        self.stem = (store.add("stem.weight", _uniform(rng, (fan, C0), fan), dtype=dtype),
                     store.add("stem.bias", np.zeros(C0), dtype=dtype))
        self.stem_norm = self._norm_params("stem.norm", C0)
        self.downsamples = []
        self.stages: list[list[Block]] = []
        for s, bs in enumerate(spec.block_specs()):
            if s > 0 and not spec.isotropic:
                cin, cout = widths[s - 1], widths[s]
                self.downsamples.append((
                    self._norm_params(f"downsample{s}.norm", cin),
                    store.add(f"downsample{s}.weight", _uniform(rng, (cin * 4, cout), cin * 4), dtype=dtype),
                    store.add(f"downsample{s}.bias", np.zeros(cout), dtype=dtype),
                ))
            self.stages.append([Block(bs, store, f"stages.{s}.{b}", rng, dtype=dtype)
                                for b in range(spec.depths[s])])
        Cl = widths[-1]
        self.head_norm = self._norm_params("head.norm", Cl)
        self.head = (store.add("head.weight", _uniform(rng, (Cl, spec.num_classes), Cl), dtype=dtype),
                     store.add("head.bias", np.zeros(spec.num_classes), dtype=dtype))

    def _norm_params(self, name, C):
        if not self.spec.use_norm:
            return None
        return (self.store.add(f"{name}.weight", np.ones(C), dtype=self.dtype),
                self.store.add(f"{name}.bias", np.zeros(C), dtype=self.dtype))

    @staticmethod
    def _norm(x, params, axis=1):
        if params is None:
            return x
        return T.layer_norm(x, params[0], params[1], eps=1e-6, axis=axis)

    @property
    def blocks(self) -> list[Block]:
        return [b for stage in self.stages for b in stage]

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4 or x.shape[1] != self.spec.in_chans:
            raise ValueError(f"expected (B, {self.spec.in_chans}, H, W) images, got {x.shape}")
        H, W = x.shape[2:]
        r = self.spec.reduction()
        if H % r or W % r:
            raise ValueError(f"image size {(H, W)} not divisible by {r}")
        if any(m in ("global_filter", "mixed_gf") for m in self.spec.mixers) and \
                (H, W) != (self.spec.image_size,) * 2:
            raise ValueError("global-filter models only accept the image size they were built for")

    def features(self, x: Tensor, return_block_inputs: bool = False):
        """Backbone features before pooling (and optionally every block's input)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        self._check_input(x)
        x = patch_conv(x, self.stem[0], self.stem[1], self.spec.stem_patch)
        x = self._norm(x, self.stem_norm)
        inputs = []
        for s, stage in enumerate(self.stages):
            if s > 0 and not self.spec.isotropic:
                norm, w, b = self.downsamples[s - 1]
                x = patch_conv(self._norm(x, norm), w, b, 2)
            for block in stage:
                inputs.append(x)
                x = block(x)
        return (x, inputs) if return_block_inputs else x

    def __call__(self, x) -> Tensor:
        x = self.features(x)
        x = T.reduce_mean(x, axis=(2, 3))
        x = self._norm(x, self.head_norm, axis=1)
        return T.linear(x, self.head[0], self.head[1], axis=1)

    def num_parameters(self) -> int:
        return self.store.num_elements()


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> HorNet:
    return HorNet(spec, seed=seed, dtype=dtype)


def forward_classify(model: HorNet, images) -> Tensor:
    return model(images)


def build_isotropic(C: int, blocks: int, order: int, mixer: str = "dwconv7", *,
                    patch: int = 16, image_size: int = 224, num_classes: int = 1000,
                    seed: int = 0, dtype=np.float32, **kwargs) -> HorNet:
    spec = ModelSpec(width=C, depths=(blocks,), orders=(order,), mixers=(mixer,),
                     stem_patch=patch, image_size=image_size, num_classes=num_classes,
                     isotropic=True, **kwargs)
    return HorNet(spec, seed=seed, dtype=dtype)


# ---------------------------------------------------------------- HorFPN


@dataclass(frozen=True)
class HorFPNSpec:
    levels: int
    lateral_channels: int
    order: int = 3
    mixer_kind: str = "dwconv7"
    alpha: float = 3.0
    spatial_sizes: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("need at least one pyramid level")

    def level_config(self, level: int) -> GnConvConfig:
        spatial = None if self.spatial_sizes is None else tuple(self.spatial_sizes[level])
        return GnConvConfig(self.order, self.lateral_channels, self.mixer_kind, self.alpha,
                            spatial_size=spatial)


@dataclass
class HorFPN:
    spec: HorFPNSpec
    store: ParameterStore
    fusions: list[GnConvParams] = field(default_factory=list)


def build_horfpn(spec: HorFPNSpec, seed: int = 0, dtype=np.float64) -> HorFPN:
    store = ParameterStore()
    rng = np.random.default_rng(seed)
    fusions = [init_gnconv(spec.level_config(l), store, f"fpn.{l}", rng, dtype=dtype)
               for l in range(spec.levels)]
    return HorFPN(spec, store, fusions)


def horfpn_fuse(features: Sequence[Tensor], fpn: HorFPN) -> list[Tensor]:
    """Top-down upsample-and-add over fine-to-coarse ``features``, then gnConv per level."""
    spec = fpn.spec
    if len(features) != spec.levels:
        raise ValueError(f"expected {spec.levels} levels, got {len(features)}")
    for l, f in enumerate(features):
        if f.shape[1] != spec.lateral_channels:
            raise ValueError(f"level {l} has {f.shape[1]} channels, laterals are {spec.lateral_channels}")
    merged = [None] * spec.levels
    merged[-1] = features[-1]
    for l in range(spec.levels - 2, -1, -1):
        coarse = merged[l + 1]
        fine = features[l]
        factor = fine.shape[2] // coarse.shape[2]
        if factor < 1 or coarse.shape[2] * factor != fine.shape[2] or coarse.shape[3] * factor != fine.shape[3]:
            raise ValueError(f"level {l} size {fine.shape[2:]} is not an integer upsampling of {coarse.shape[2:]}")
        merged[l] = T.add(fine, T.upsample_nearest(coarse, factor))
    return [gnconv_forward(m, params=p) for m, p in zip(merged, fpn.fusions)]
