"""Mixing-weight dumps and the forward-pass micro-benchmark."""
from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..gnconv import extract_mixing_weights
from ..hornet import HorNet, ModelSpec
from ..mixers import DepthwiseKernel


def _as_batch(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4 or image.shape[0] != 1:
        raise ValueError(f"expected one (C, H, W) image, got shape {image.shape}")
    return image


def weight_maps(model: HorNet, image: np.ndarray, layer: int,
                locations: list[tuple[int, int]]) -> dict[tuple[int, int], np.ndarray]:
    """Channel-averaged ``K x K`` mixing-weight maps of block ``layer`` at feature ``locations``.

    The model is evaluated in 64-bit.  Layers with a global-filter mixer
    have no explicit kernel and raise ``ValueError``.
    """
    blocks = model.blocks
    if not 0 <= layer < len(blocks):
        raise ValueError(f"layer {layer} out of range; model has {len(blocks)} blocks")
    block = blocks[layer]
    kind = block.spec.mixer_kind
    if kind in ("global_filter", "mixed_gf"):
        raise ValueError(f"layer {layer} uses a {kind} mixer without an explicit spatial kernel")
    x = _as_batch(image)
    with T.no_grad():
        _, inputs = model.features(T.Tensor(x.astype(model.dtype)), return_block_inputs=True)
        z = block.mixer_input(T.Tensor(inputs[layer].data.astype(np.float64)))
        params = _params64(block.gnconv)
        mw = extract_mixing_weights(z, params.config, params)
    mean = mw.channel_mean()[0]
    H, W = mean.shape[:2]
    maps = {}
    for (i, j) in locations:
        if not (0 <= i < H and 0 <= j < W):
            raise ValueError(f"location {(i, j)} outside the {H}x{W} feature map of layer {layer}")
        maps[(i, j)] = mean[i, j].copy()
    return maps


def _params64(params):
    """Copy of gnConv params promoted to float64."""
    up = lambda p: None if p is None else T.Tensor(p.data.astype(np.float64))
    mixer = params.mixer
    if isinstance(mixer, DepthwiseKernel):
        mixer = dataclasses.replace(mixer, weight=up(mixer.weight), bias=up(mixer.bias))
    return dataclasses.replace(
        params, phi_in_w=up(params.phi_in_w), phi_in_b=up(params.phi_in_b),
        phi_out_w=up(params.phi_out_w), phi_out_b=up(params.phi_out_b),
        g_w=[up(w) for w in params.g_w], g_b=[up(b) for b in params.g_b], mixer=mixer)


def write_pgm(path: str | os.PathLike, grid: np.ndarray, scale: float | None = None) -> None:
    """8-bit binary graymap; zero maps to mid-gray and ``+-scale`` to white/black."""
    grid = np.asarray(grid, dtype=np.float64)
    s = float(np.max(np.abs(grid))) if scale is None else scale
    pix = np.full(grid.shape, 128.0) if s == 0 else 127.5 + 127.5 * grid / s
    pix = np.clip(np.rint(pix), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def dump_weights(model: HorNet, image: np.ndarray, layer: int, locations: list[tuple[int, int]],
                 out_dir: str | os.PathLike) -> list[str]:
    """Write each map as ``layer{L}_y{i}_x{j}.txt`` and ``.pgm``; returns the paths."""
    maps = weight_maps(model, image, layer, locations)
    os.makedirs(out_dir, exist_ok=True)
    scale = max(float(np.max(np.abs(m))) for m in maps.values()) if maps else 0.0
    written = []
    for (i, j), grid in maps.items():
        stem = os.path.join(out_dir, f"layer{layer}_y{i}_x{j}")
        np.savetxt(stem + ".txt", grid, fmt="%.9e")
        write_pgm(stem + ".pgm", grid, scale)
        written += [stem + ".txt", stem + ".pgm"]
    return written


@dataclass
class BenchResult:
    batch: int
    repeats: int
    seconds: float

    @property
    def images_per_second(self) -> float:
        return self.batch * self.repeats / self.seconds


def bench(spec: ModelSpec, batch: int = 128, repeats: int = 3, warmup: int = 1, seed: int = 0,
          image_size: int | None = None) -> BenchResult:
    """Time inference forward passes of a freshly initialized float32 model."""
    if batch < 1 or repeats < 1:
        raise ValueError("batch and repeats must be >= 1")
    model = HorNet(spec, seed=seed)
    size = spec.image_size if image_size is None else image_size
    x = np.random.default_rng(seed).standard_normal((batch, spec.in_chans, size, size)).astype(np.float32)
    with T.no_grad():
        for _ in range(warmup):
            model(x)
        t0 = time.perf_counter()
        for _ in range(repeats):
            model(x)
        dt = time.perf_counter() - t0
    return BenchResult(batch, repeats, dt)
