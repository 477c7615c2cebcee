"""Lossless raw image files and 8-bit PGM previews."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

RAW_MAGIC = b"IVK1"
_HEADER = struct.Struct("<4sII")


class RawFormatError(OSError):
    """A file that is not a well-formed raw image."""


def encode_raw(x) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"raw images are 2-D, got shape {x.shape}")
    h, w = x.shape
    return _HEADER.pack(RAW_MAGIC, h, w) + np.ascontiguousarray(x, dtype="<f8").tobytes()


def decode_raw(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise RawFormatError("file too short for a raw image header")
    magic, h, w = _HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise RawFormatError(f"bad magic {magic!r}")
    if len(blob) != _HEADER.size + 8 * h * w:
        raise RawFormatError(f"expected {_HEADER.size + 8 * h * w} bytes for {h}x{w}, found {len(blob)}")
    return np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).astype(np.float64).reshape(h, w)


def write_raw(path, x):
    Path(path).write_bytes(encode_raw(x))


def read_raw(path) -> np.ndarray:
    return decode_raw(Path(path).read_bytes())


def encode_pgm(x) -> bytes:
    """Binary greymap: values clamped to [0, 1] and scaled to 0..255."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    h, w = x.shape
    pixels = np.rint(np.clip(np.nan_to_num(x), 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, x):
    Path(path).write_bytes(encode_pgm(x))


def side_by_side(images, gap=1, fill=1.0) -> np.ndarray:
    """Equal-height images joined left to right with ``gap`` columns of ``fill``."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    h = images[0].shape[0]
    if any(im.shape[0] != h for im in images):
        raise ValueError("panel images must share a height")
    parts = []
    for i, im in enumerate(images):
        if i and gap:
            parts.append(np.full((h, gap), fill))
        parts.append(im)
    return np.hstack(parts)
