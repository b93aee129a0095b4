"""Shared low-level file helpers: FNV-1a checksums, PGM images, manifests."""

from __future__ import annotations

import os

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class FormatError(ValueError):
    """Raised on malformed or corrupted on-disk artifacts."""


def fnv1a(data: bytes) -> int:
    """64-bit FNV-1a over a byte string."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def write_pgm(path, values, scale=1.0):
    """Write a 2d array as an 8-bit binary PGM.

    Values are mapped via clamp(values/scale, 0, 1)*255.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2d array, got shape {arr.shape}")
    img = np.clip(arr / scale, 0.0, 1.0)
    img = (img * 255.0).round().astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_manifest(path, cube_paths, header=None):
    with open(path, "w") as f:
        if header:
            f.write(f"# {header}\n")
        for p in cube_paths:
            f.write(f"{p}\n")
    return path


def read_manifest(path):
    """Cube paths from a manifest; '#' comments and blank lines ignored.

    Relative entries are resolved against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    paths = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            paths.append(line if os.path.isabs(line) else os.path.join(base, line))
    return paths
