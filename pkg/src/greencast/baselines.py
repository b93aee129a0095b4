"""Reference predictors: per-pixel persistence and previous-season copy."""

from __future__ import annotations

import numpy as np

from .minicube import gapfill_frames


def constant_forecast(cube, cfg):
    """Repeat each pixel's most recent valid context value over the horizon.

    Returns (pred (k, H, W) float32, excluded (H, W) bool); pixels with no
    valid context observation emit fill 0 and are flagged excluded.
    """
    ctx = cube.ndvi[:cfg.n]
    mask = cube.mask[:cfg.n]
    valid_any = mask.any(axis=0)
    t_idx = np.where(mask, np.arange(cfg.n)[:, None, None], -1).max(axis=0)
    last = np.zeros(ctx.shape[1:], dtype=np.float32)
    yy, xx = np.nonzero(valid_any)
    last[yy, xx] = ctx[t_idx[yy, xx], yy, xx]
    pred = np.broadcast_to(last, (cfg.k,) + last.shape).copy()
    return pred, ~valid_any


def previous_season_forecast(cube, cfg, steps_per_year=36):
    """Copy gap-filled observations from one season length earlier.

    Prediction at absolute step t is the (temporally gap-filled) context
    observation at step t - steps_per_year.
    """
    lag = steps_per_year
    if lag > cfg.n:
        raise ValueError(
            f"previous-season lag {lag} exceeds context length {cfg.n}"
        )
    filled = gapfill_frames(cube.ndvi[:cfg.n], cube.mask[:cfg.n])
    frames = []
    for t in range(cfg.n, cfg.n + cfg.k):
        src = t - lag
        if src >= cfg.n:
            raise ValueError(
                f"previous-season source index {src} falls in the horizon"
            )
        frames.append(filled[src])
    return np.stack(frames).astype(np.float32)
