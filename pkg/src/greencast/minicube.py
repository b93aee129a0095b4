"""Minicube data model: NDVI stacks, scalar drivers, topography, landcover
and validity masks, plus the binary on-disk format.

A minicube holds Ttot = n + k frames: the first n are the context fed to
the encoder, the last k are the forecast targets. Invalid pixels (missing
observations or non-vegetation landcover) carry fill value 0 and must
never be read directly; consumers go through the mask.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, fields

import numpy as np

from .configio import ConfigError, apply_overrides, parse_kv_file
from .fileio import FormatError, fnv1a

MAGIC = b"MCB1"
VERSION = 1

# Non-vegetation landcover codes; vegetation classes are >= 10.
LC_WATER, LC_BUILT, LC_BARE, LC_SNOW, LC_CLOUD = 1, 2, 3, 4, 5
NONVEG_CLASSES = frozenset({LC_WATER, LC_BUILT, LC_BARE, LC_SNOW, LC_CLOUD})
VEG_CLASS_BASE = 10

FILL_VALUE = 0.0


@dataclass
class Minicube:
    """One spatio-temporal sample.

    ndvi:       (Ttot, H, W) float32 in [-1, 1], fill 0 where invalid
    drivers:    (Ttot, D) float32, one scalar per timestep per variable
    topography: (1, H, W) float32, normalized to [0, 1]
    landcover:  (H, W) uint16 class codes
    mask:       (Ttot, H, W) bool, True = valid vegetation observation
    """

    ndvi: np.ndarray
    drivers: np.ndarray
    topography: np.ndarray
    landcover: np.ndarray
    mask: np.ndarray
    n: int
    k: int
    sample_id: str = ""
    start_step: int = 0
    step_days: int = 10

    @property
    def ttot(self):
        return self.ndvi.shape[0]

    @property
    def grid(self):
        return self.ndvi.shape[1], self.ndvi.shape[2]

    @property
    def masked_fraction(self):
        return 1.0 - float(self.mask.mean())

    def validate(self):
        t, h, w = self.ndvi.shape
        if t != self.n + self.k:
            raise ValueError(f"Ttot={t} but n+k={self.n + self.k}")
        if self.drivers.shape[0] != t:
            raise ValueError("drivers length differs from frame count")
        if self.topography.shape != (1, h, w):
            raise ValueError("topography shape mismatch")
        if self.landcover.shape != (h, w) or self.mask.shape != (t, h, w):
            raise ValueError("landcover/mask shape mismatch")
        if not np.all(np.isfinite(self.ndvi)):
            raise ValueError("non-finite NDVI values")
        nonveg = np.isin(self.landcover, list(NONVEG_CLASSES))
        if np.any(self.mask & nonveg[None, :, :]):
            raise ValueError("mask marks non-vegetation pixels as valid")
        return self


@dataclass
class ForecastConfig:
    """Geometry, model width and optimizer settings for one run."""

    n: int = 12
    k: int = 4
    H: int = 32
    W: int = 32
    D: int = 3
    hidden_channels: int = 32
    kernel_size: int = 3
    ablate_weather: bool = False
    lr: float = 1e-3
    batch_size: int = 4
    epochs: int = 50
    seed: int = 0
    threads: int = 1

    def validate(self):
        if self.n < 1 or self.k < 1:
            raise ConfigError("n and k must both be >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.H != self.W or self.H < 8:
            raise ConfigError("grid must be square with H = W >= 8")
        return self

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        apply_overrides(cfg, parse_kv_file(path))
        return cfg.validate()

    @classmethod
    def profile(cls, name):
        """Named hyperparameter profiles: 'desk' (default) or 'full'."""
        if name == "desk":
            return cls()
        if name == "full":
            return cls(n=36, k=9, H=128, W=128, D=11,
                       lr=1e-6, batch_size=32, epochs=150)
        raise ConfigError(f"unknown profile {name!r}")

    def echo(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# derived quantities


def compute_ndvi(red, nir):
    """(nir - red) / (nir + red), with a validity mask.

    Where nir + red < 1e-6 the output is 0 and the mask is False.
    Negative reflectances are rejected.
    """
    red = np.asarray(red, dtype=np.float32)
    nir = np.asarray(nir, dtype=np.float32)
    if red.shape != nir.shape:
        raise ValueError(f"shape mismatch {red.shape} vs {nir.shape}")
    if np.any(red < 0) or np.any(nir < 0):
        raise ValueError("reflectances must be non-negative")
    denom = nir + red
    valid = denom >= 1e-6
    ndvi = np.zeros_like(denom)
    np.divide(nir - red, denom, out=ndvi, where=valid)
    return ndvi, valid


def broadcast_drivers(drivers, h, w):
    """Replicate per-timestep scalars onto constant (h, w) planes.

    (Ttot, D) -> (Ttot, D, h, w).
    """
    d = np.asarray(drivers, dtype=np.float32)
    return np.ascontiguousarray(
        np.broadcast_to(d[:, :, None, None], d.shape + (h, w))
    )


def gapfill_linear(series, valid):
    """Linear interpolation over invalid entries of a 1d series.

    Interior gaps interpolate between the nearest valid neighbors;
    leading/trailing gaps copy the nearest valid value. At least one
    entry must be valid.
    """
    series = np.asarray(series, dtype=np.float32)
    valid = np.asarray(valid, dtype=bool)
    if series.shape != valid.shape or series.ndim != 1:
        raise ValueError("series and valid must be equal-length 1d arrays")
    if not valid.any():
        raise ValueError("cannot gap-fill an all-invalid series")
    if valid.all():
        return series.copy()
    t = np.arange(series.size)
    return np.interp(t, t[valid], series[valid]).astype(np.float32)


def gapfill_frames(frames, mask):
    """Per-pixel temporal gap-fill of a (T, H, W) stack.

    Pixels with no valid observation at all stay at the fill value.
    """
    frames = np.asarray(frames, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    t, h, w = frames.shape
    flat = frames.reshape(t, -1).copy()
    mflat = mask.reshape(t, -1)
    counts = mflat.sum(axis=0)
    tt = np.arange(t)
    for px in np.nonzero((counts > 0) & (counts < t))[0]:
        v = mflat[:, px]
        flat[:, px] = np.interp(tt, tt[v], flat[v, px])
    return flat.reshape(t, h, w)


def normalize_topography(topo):
    """Min-max normalize to [0, 1]; a constant grid maps to zeros."""
    topo = np.asarray(topo, dtype=np.float32)
    lo, hi = float(topo.min()), float(topo.max())
    if hi <= lo:
        return np.zeros_like(topo)
    return (topo - lo) / np.float32(hi - lo)


# ---------------------------------------------------------------------------
# binary persistence
#
# Layout (little-endian): magic "MCB1", u32 version, u32 Ttot, H, W, D,
# u32 n, u32 k, then ndvi f32, drivers f32, topography f32, landcover u16,
# mask u8 (1 = valid), and a trailing u64 FNV-1a checksum over all
# preceding bytes.

_HEADER = struct.Struct("<4sIIIIIII")


def save_minicube(cube, path):
    cube.validate()
    t, h, w = cube.ndvi.shape
    d = cube.drivers.shape[1]
    payload = bytearray()
    payload += _HEADER.pack(MAGIC, VERSION, t, h, w, d, cube.n, cube.k)
    payload += np.ascontiguousarray(cube.ndvi, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(cube.drivers, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(cube.topography, dtype="<f4").tobytes()
    payload += np.ascontiguousarray(cube.landcover, dtype="<u2").tobytes()
    payload += cube.mask.astype("u1").tobytes()
    payload += struct.pack("<Q", fnv1a(bytes(payload)))
    with open(path, "wb") as f:
        f.write(payload)
    return path


def load_minicube(path, sample_id=None):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size + 8:
        raise FormatError(f"{path}: truncated file")
    magic, version, t, h, w, d, n, k = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    sizes = [t * h * w * 4, t * d * 4, h * w * 4, h * w * 2, t * h * w]
    expected = _HEADER.size + sum(sizes) + 8
    if len(raw) != expected:
        raise FormatError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    stored = struct.unpack_from("<Q", raw, expected - 8)[0]
    if fnv1a(raw[: expected - 8]) != stored:
        raise FormatError(f"{path}: checksum failure")

    off = _HEADER.size
    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
        off += count * arr.itemsize
        return arr

    ndvi = take(t * h * w, "<f4").reshape(t, h, w).copy()
    drivers = take(t * d, "<f4").reshape(t, d).copy()
    topo = take(h * w, "<f4").reshape(1, h, w)
    landcover = take(h * w, "<u2").reshape(h, w).copy()
    mask = take(t * h * w, "u1").reshape(t, h, w).astype(bool)
    topo = normalize_topography(topo)
    if sample_id is None:
        # basename, not the full path: the train/val split hashes this id,
        # and relocating a dataset must not reshuffle the split
        sample_id = os.path.basename(str(path))
    return Minicube(ndvi=ndvi, drivers=drivers, topography=topo,
                    landcover=landcover, mask=mask, n=n, k=k,
                    sample_id=sample_id).validate()
