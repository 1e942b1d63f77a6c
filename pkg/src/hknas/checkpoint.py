"""Versioned binary checkpoints: a manifest of named float64 tensors.

Layout (all integers little-endian u32): magic ``HKCKPT01``, tensor count,
then per tensor: name length, UTF-8 name, rank, dims, raw float64 values.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"HKCKPT01"


class CheckpointError(Exception):
    """Malformed checkpoint file."""


def save_checkpoint(path, state: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name, array in state.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(array, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0, expected {_MAGIC!r}")
    offset = 8

    def take(count: int) -> bytes:
        nonlocal offset
        if offset + count > len(blob):
            raise CheckpointError(
                f"{path}: truncated at byte {offset}, needed {count} more bytes")
        piece = blob[offset:offset + count]
        offset += count
        return piece

    (n_tensors,) = struct.unpack("<I", take(4))
    state: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        state[name] = data.astype(np.float64)
    if offset != len(blob):
        raise CheckpointError(
            f"{path}: {len(blob) - offset} trailing bytes after tensor {n_tensors}")
    return state
