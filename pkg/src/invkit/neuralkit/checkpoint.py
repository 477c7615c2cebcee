"""Flat binary parameter checkpoints with a text manifest sidecar.

Binary layout: b"IVKW", u32 version, u64 number of scalars, then that many
little-endian float64 values, parameters concatenated in layer order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"IVKW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest")


def encode(params) -> bytes:
    flat = [np.asarray(p.data, dtype="<f8").ravel() for p in params]
    values = np.concatenate(flat) if flat else np.zeros(0, dtype="<f8")
    return MAGIC + struct.pack("<IQ", VERSION, values.size) + values.tobytes()


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not an IVKW checkpoint")
    version, count = struct.unpack("<IQ", blob[4:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(blob) != 16 + 8 * count:
        raise CheckpointError("checkpoint size does not match its parameter count")
    return np.frombuffer(blob, dtype="<f8", offset=16, count=count).astype(np.float64)


def save(model, path, extra_manifest=()):
    """Write ``model.parameters()`` to ``path`` and ``model.manifest()`` to the sidecar."""
    path = Path(path)
    path.write_bytes(encode(model.parameters()))
    lines = list(extra_manifest) + list(model.manifest())
    manifest_path(path).write_text("\n".join(lines) + "\n")


def load_into(model, path):
    """Overwrite the parameters of an architecture-compatible ``model``."""
    values = decode(Path(path).read_bytes())
    params = model.parameters()
    total = sum(p.size for p in params)
    if total != values.size:
        raise CheckpointError(f"checkpoint holds {values.size} values, model needs {total}")
    pos = 0
    for p in params:
        p.data = values[pos : pos + p.size].reshape(p.shape).copy()
        pos += p.size
    return model


def read_manifest(path) -> list[str]:
    return manifest_path(path).read_text().splitlines()
