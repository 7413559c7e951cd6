"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"HRNC" | version | record count
    per record: name length | UTF-8 name | rank | extents... | float32 LE data
    CRC32 of every preceding byte

Writes go through a temporary file and an atomic rename, so a failed save
never leaves a partial checkpoint behind.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib
from collections import OrderedDict
from typing import Mapping

import numpy as np

MAGIC = b"HRNC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(state: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, value in state.items():
        arr = np.asarray(value, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint CRC32 mismatch")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    state: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            n = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            state[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last record")
    return state


def save(path: str | os.PathLike, state: Mapping[str, np.ndarray]) -> None:
    blob = encode(state)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".hrnc-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode(fh.read())
