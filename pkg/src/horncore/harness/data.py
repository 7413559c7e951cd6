"""Datasets: seeded synthetic geometric shapes and an IDX-format loader."""
from __future__ import annotations

import struct

import numpy as np

SHAPES = ("disc", "square", "triangle", "ring", "plus", "cross", "hbar", "vbar", "frame", "dots")

_IDX_TYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    au, av = np.abs(u), np.abs(v)
    w = 0.3 * r
    if kind == "disc":
        return u * u + v * v <= r * r
    if kind == "square":
        return np.maximum(au, av) <= 0.8 * r
    if kind == "triangle":
        return (v <= 0.7 * r) & (v >= -0.9 * r + 1.6 * au)
    if kind == "ring":
        d = np.sqrt(u * u + v * v)
        return (d <= r) & (d >= 0.55 * r)
    if kind == "plus":
        return ((au <= w) & (av <= r)) | ((av <= w) & (au <= r))
    if kind == "cross":
        return (np.abs(u - v) <= 1.3 * w) & (np.maximum(au, av) <= 0.8 * r) | \
               (np.abs(u + v) <= 1.3 * w) & (np.maximum(au, av) <= 0.8 * r)
    if kind == "hbar":
        return (au <= r) & (av <= w)
    if kind == "vbar":
        return (av <= r) & (au <= w)
    if kind == "frame":
        m = np.maximum(au, av)
        return (m <= 0.85 * r) & (m >= 0.5 * r)
    if kind == "dots":
        return ((u - 0.5 * r) ** 2 + v * v <= (0.35 * r) ** 2) | ((u + 0.5 * r) ** 2 + v * v <= (0.35 * r) ** 2)
    raise ValueError(f"unknown shape {kind!r}")


def synthetic_shapes(n: int = 2000, size: int = 32, num_classes: int = 10, channels: int = 3,
                     seed: int = 0, noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Balanced images of simple shapes with random pose, scale, colour and noise."""
    if not 1 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must be in [1, {len(SHAPES)}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    images = np.empty((n, channels, size, size), dtype=np.float32)
    for k, label in enumerate(labels):
        r = size * rng.uniform(0.22, 0.34)
        cy, cx = size / 2 + rng.uniform(-0.15, 0.15, size=2) * size
        theta = rng.uniform(-0.25, 0.25)
        dy, dx = ys - cy, xs - cx
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        mask = _shape_mask(SHAPES[label], u, v, r).astype(np.float32)
        fg = rng.uniform(0.6, 1.0, size=channels)
        bg = rng.uniform(0.0, 0.3, size=channels)
        img = bg[:, None, None] + (fg - bg)[:, None, None] * mask[None]
        img += noise * rng.standard_normal(img.shape)
        images[k] = img
    images = (images - 0.4) / 0.3
    return images.astype(np.float32), labels.astype(np.int64)


def read_idx(path) -> np.ndarray:
    """Read an IDX file (two zero bytes, type code, rank, big-endian u32 dims, raw data)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[0] != 0 or blob[1] != 0:
        raise ValueError(f"{path}: not an IDX file")
    code, rank = blob[2], blob[3]
    if code not in _IDX_TYPES:
        raise ValueError(f"{path}: unknown IDX type code 0x{code:02x}")
    dims = struct.unpack_from(f">{rank}I", blob, 4)
    dtype = np.dtype(_IDX_TYPES[code])
    offset = 4 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - offset != count * dtype.itemsize:
        raise ValueError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=offset).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(">i2"): 0x0B,
             np.dtype(">i4"): 0x0C, np.dtype(">f4"): 0x0D, np.dtype(">f8"): 0x0E}
    if array.dtype == np.uint8 or array.dtype == np.int8:
        out = array
    elif array.dtype.kind == "f":
        out = array.astype(">f4")
    else:
        out = array.astype(">i4")
    header = bytes([0, 0, codes[out.dtype], out.ndim]) + struct.pack(f">{out.ndim}I", *out.shape)
    with open(path, "wb") as fh:
        fh.write(header + out.tobytes())


def load_idx_dataset(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Images as float32 (N, C, H, W) scaled to [0, 1] for byte data; labels as int64."""
    x = read_idx(images_path)
    y = read_idx(labels_path).astype(np.int64).reshape(-1)
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4:
        raise ValueError(f"expected rank 3 or 4 image data, got shape {x.shape}")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} images but {len(y)} labels")
    x = x.astype(np.float32)
    if x.max() > 1.0:
        x /= 255.0
    return x, y
