"""Deterministic synthetic minicube generator.

Weather is a seasonal sinusoid precipitation process with multiplicative
noise feeding a single-layer soil bucket; NDVI responds to an
exponentially smoothed soil state, so past weather genuinely matters for
future greenness (the lagged "memory" a recurrent model can exploit).
Optional cloud contamination reproduces the two real-data failure modes:
detected clouds (masked out) and undetected clouds (depressed NDVI that
stays marked valid).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .configio import ConfigError, apply_overrides, parse_kv_file
from .fileio import write_manifest
from .minicube import (Minicube, VEG_CLASS_BASE, LC_WATER, LC_BUILT, LC_BARE,
                       normalize_topography, save_minicube)

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x):
    """Stable 64-bit mix; used to derive independent per-sample seeds."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass
class GeneratorConfig:
    seed: int = 0
    H: int = 32
    W: int = 32
    n: int = 12
    k: int = 4
    season_length: int = 36      # timesteps per seasonal cycle
    precip_amp: float = 1.0      # sinusoid amplitude a
    amp_jitter: float = 0.3      # per-sample relative spread of a
    random_phase: bool = True    # per-sample random phase, else precip_phase
    precip_phase: float = 0.0
    noise_sigma: float = 0.4     # lognormal sigma of multiplicative noise
    c_max: float = 10.0          # bucket capacity
    soil_init: float = 5.0
    et_coeff: float = 2.0        # evapotranspiration per unit temperature
    ndvi_lag: float = 0.5        # lambda of the NDVI response smoothing
    obs_noise: float = 0.02
    p_cloud: float = 0.0
    p_miss: float = 0.0          # P(cloud goes undetected | cloud)
    n_patches: int = 6
    nonveg_fraction: float = 0.1  # P(a patch is non-vegetation)

    def validate(self):
        for name in ("p_cloud", "p_miss", "nonveg_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ConfigError(f"{name} must be in [0, 1)")
        if not (0.0 < self.ndvi_lag < 1.0):
            raise ConfigError("ndvi_lag must be in (0, 1)")
        if self.c_max <= 0:
            raise ConfigError("c_max must be positive")
        if self.n < 1 or self.k < 1 or self.season_length < 1:
            raise ConfigError("n, k and season_length must be >= 1")
        return self

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        apply_overrides(cfg, parse_kv_file(path))
        return cfg.validate()


def _landcover(rng, cfg):
    """Vegetation mosaic with a few rectangular patches."""
    lc = np.full((cfg.H, cfg.W), VEG_CLASS_BASE, dtype=np.uint16)
    veg_classes = np.arange(VEG_CLASS_BASE, VEG_CLASS_BASE + 8)
    nonveg_classes = np.array([LC_WATER, LC_BUILT, LC_BARE])
    for _ in range(cfg.n_patches):
        h = int(rng.integers(cfg.H // 8, cfg.H // 2 + 1))
        w = int(rng.integers(cfg.W // 8, cfg.W // 2 + 1))
        y = int(rng.integers(0, cfg.H - h + 1))
        x = int(rng.integers(0, cfg.W - w + 1))
        if rng.random() < cfg.nonveg_fraction:
            cls = int(rng.choice(nonveg_classes))
        else:
            cls = int(rng.choice(veg_classes))
        lc[y:y + h, x:x + w] = cls
    return lc


def _topography(rng, cfg):
    """Smooth random field: low-res noise, bilinear upsampling, [0,1]."""
    coarse = rng.normal(size=(5, 5))
    ys = np.linspace(0, 4, cfg.H)
    xs = np.linspace(0, 4, cfg.W)
    y0 = np.minimum(ys.astype(int), 3)
    x0 = np.minimum(xs.astype(int), 3)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    field = (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
             + c10 * fy * (1 - fx) + c11 * fy * fx)
    return normalize_topography(field[None, :, :])


# Gains per vegetation class, spread over [0.25, 0.9] so that the
# topographic reduction (up to 20%) keeps the product in [0.2, 0.9].
_VEG_GAINS = np.linspace(0.25, 0.9, 8)


def _gain_grid(landcover, topo):
    gains = np.zeros(landcover.shape, dtype=np.float32)
    veg = landcover >= VEG_CLASS_BASE
    idx = np.clip(landcover[veg].astype(int) - VEG_CLASS_BASE, 0, 7)
    gains[veg] = _VEG_GAINS[idx]
    return gains * (1.0 - 0.2 * topo[0])


def generate_minicube(cfg, sample_index):
    """Deterministic pure function of (cfg, sample_index)."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed ^ splitmix64(sample_index))
    ttot = cfg.n + cfg.k
    length = cfg.season_length

    landcover = _landcover(rng, cfg)
    topo = _topography(rng, cfg)
    gain = _gain_grid(landcover, topo)

    phase = rng.uniform(0, length) if cfg.random_phase else cfg.precip_phase
    amp = cfg.precip_amp * (1.0 + cfg.amp_jitter * rng.uniform(-1.0, 1.0))

    t = np.arange(ttot)
    noise = np.exp(rng.normal(0.0, cfg.noise_sigma, size=ttot))
    precip = np.maximum(
        0.0, amp * (1.0 + np.sin(2.0 * np.pi * (t + phase) / length)) * noise
    )
    temp = np.clip(
        0.5 + 0.3 * np.sin(2.0 * np.pi * (t + phase + length / 4.0) / length)
        + 0.05 * rng.normal(size=ttot),
        0.0, None,
    )

    soil = np.empty(ttot)
    smooth = np.empty(ttot)
    s = cfg.soil_init
    ss = cfg.soil_init / cfg.c_max
    lam = cfg.ndvi_lag
    for i in range(ttot):
        soil[i] = s
        ss = lam * ss + (1.0 - lam) * (s / cfg.c_max)
        smooth[i] = ss
        s = float(np.clip(s + precip[i] - cfg.et_coeff * temp[i], 0.0, cfg.c_max))

    target = gain[None, :, :] * smooth[:, None, None].astype(np.float32)
    observed = target + rng.normal(0.0, cfg.obs_noise, size=target.shape)

    veg = landcover >= VEG_CLASS_BASE
    mask = np.broadcast_to(veg, (ttot,) + veg.shape).copy()
    for i in range(ttot):
        if rng.random() < cfg.p_cloud:
            h = int(rng.integers(cfg.H // 4, 3 * cfg.H // 4 + 1))
            w = int(rng.integers(cfg.W // 4, 3 * cfg.W // 4 + 1))
            y = int(rng.integers(0, cfg.H - h + 1))
            x = int(rng.integers(0, cfg.W - w + 1))
            if rng.random() < cfg.p_miss:
                observed[i, y:y + h, x:x + w] -= 0.3  # undetected: stays valid
            else:
                mask[i, y:y + h, x:x + w] = False

    observed = np.clip(observed, -1.0, 1.0).astype(np.float32)
    observed[~mask] = 0.0

    drivers = np.stack(
        [precip, temp, soil / cfg.c_max], axis=1
    ).astype(np.float32)

    return Minicube(
        ndvi=observed,
        drivers=drivers,
        topography=topo.astype(np.float32),
        landcover=landcover,
        mask=mask,
        n=cfg.n,
        k=cfg.k,
        sample_id=f"sample_{sample_index:05d}",
    ).validate()


def generate_dataset(cfg, count, out_dir):
    """Write `count` cubes plus a manifest; returns the manifest path.

    Per-sample seeds derive from (seed, index) alone, so any subset
    regenerates byte-identically.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i in range(count):
        cube = generate_minicube(cfg, i)
        name = f"cube_{i:05d}.mcb"
        save_minicube(cube, os.path.join(out_dir, name))
        names.append(name)
    return write_manifest(
        os.path.join(out_dir, "manifest.txt"), names,
        header=f"greencast synthetic dataset, seed={cfg.seed}, count={count}",
    )
