"""Pixelwise forecast-skill metrics with full MSE and NSE decompositions.

All statistics use population moments (divide by N) in float64 so the
decomposition identities hold exactly:

    MSE = bias_sq + var_err + phase_err
    NSE = 1 - MSE / sigma_obs^2 = 2*alpha*r - alpha^2 - beta^2

Conventions: r := 0 when either standard deviation vanishes (a constant
prediction therefore reports r = 0 and alpha = 0); a pixel with zero
observed variance (or no valid samples) is flagged excluded, since NSE
is undefined there. NRMSE is defined as RMSE / sigma_obs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("rmse", "nrmse", "nse", "alpha", "beta", "r",
                "bias_sq", "var_err", "phase_err")


@dataclass
class PixelMetrics:
    rmse: float = 0.0
    nrmse: float = 0.0
    nse: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    r: float = 0.0
    bias_sq: float = 0.0
    var_err: float = 0.0
    phase_err: float = 0.0
    valid_count: int = 0
    excluded: bool = False


def pixel_metrics(obs, pred, valid=None):
    """Skill metrics for one pixel's horizon series.

    obs, pred: equal-length series; valid: optional boolean series.
    Only valid entries enter the statistics.
    """
    obs = np.asarray(obs, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if obs.shape != pred.shape:
        raise ValueError(f"shape mismatch {obs.shape} vs {pred.shape}")
    if valid is None:
        valid = np.ones(obs.shape, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != obs.shape:
            raise ValueError("valid mask shape mismatch")
    o = obs[valid]
    p = pred[valid]
    n = o.size
    if n == 0:
        return PixelMetrics(excluded=True, valid_count=0)

    mu_o, mu_p = o.mean(), p.mean()
    sd_o = math.sqrt(((o - mu_o) ** 2).mean())
    sd_p = math.sqrt(((p - mu_p) ** 2).mean())
    mse = ((p - o) ** 2).mean()
    rmse = math.sqrt(mse)

    if sd_o == 0.0 or sd_p == 0.0:
        r = 0.0
    else:
        r = float(((o - mu_o) * (p - mu_p)).mean() / (sd_o * sd_p))

    bias_sq = (mu_o - mu_p) ** 2
    var_err = (sd_o - sd_p) ** 2
    phase_err = 2.0 * sd_o * sd_p * (1.0 - r)

    if sd_o == 0.0:
        return PixelMetrics(rmse=rmse, nrmse=0.0, nse=0.0, alpha=0.0,
                            beta=0.0, r=r, bias_sq=bias_sq, var_err=var_err,
                            phase_err=phase_err, valid_count=n, excluded=True)

    alpha = sd_p / sd_o
    beta = (mu_p - mu_o) / sd_o
    nse = 1.0 - mse / (sd_o * sd_o)
    return PixelMetrics(rmse=rmse, nrmse=rmse / sd_o, nse=nse, alpha=alpha,
                        beta=beta, r=r, bias_sq=bias_sq, var_err=var_err,
                        phase_err=phase_err, valid_count=n, excluded=False)


def cube_pixel_metrics(cube, pred):
    """Per-pixel metrics over a cube's target window.

    pred: (k, H, W) array. Never-valid pixels are skipped; pixels with
    zero observed variance stay in the list carrying their excluded flag.
    """
    obs = cube.ndvi[cube.n:]
    valid = cube.mask[cube.n:]
    if pred.shape != obs.shape:
        raise ValueError(f"prediction shape {pred.shape} != target {obs.shape}")
    out = []
    h, w = cube.grid
    for y in range(h):
        for x in range(w):
            if not valid[:, y, x].any():
                continue
            pm = pixel_metrics(obs[:, y, x], pred[:, y, x], valid[:, y, x])
            if pm.valid_count > 0:
                out.append(pm)
    return out


def trim_outliers(pixels, outlier_fraction=0.05, rank_by="rmse"):
    """Drop the worst floor(fraction*N) pixels.

    rank_by='rmse' drops the highest RMSE; rank_by='nse' drops the lowest
    NSE. Returns the surviving pixels.
    """
    if rank_by not in ("rmse", "nse"):
        raise ValueError(f"unknown ranking {rank_by!r}")
    n_drop = int(outlier_fraction * len(pixels))
    if n_drop == 0:
        return list(pixels)
    if rank_by == "rmse":
        order = sorted(pixels, key=lambda p: p.rmse)   # worst = largest
        return order[: len(pixels) - n_drop]
    order = sorted(pixels, key=lambda p: p.nse)        # worst = smallest
    return order[n_drop:]


def aggregate(per_cube, mask_threshold=0.75, outlier_fraction=0.05,
              rank_by="rmse"):
    """Dataset-level medians per the evaluation protocol.

    per_cube: list of (masked_fraction, [PixelMetrics]) pairs. Cubes with
    masked_fraction >= mask_threshold contribute no pixels; the remaining
    pixels are pooled, the worst outlier_fraction are trimmed, and the
    median of each metric is reported.
    """
    pool, fallback = [], []
    for frac, pixels in per_cube:
        if frac >= mask_threshold:
            continue
        for p in pixels:
            (fallback if p.excluded else pool).append(p)
    if not pool:
        # e.g. constant observations everywhere: NSE is undefined but the
        # RMSE family is still meaningful, so report over excluded pixels
        pool = fallback
    if not pool:
        raise ValueError("no pixels survive the masked-fraction filter")
    kept = trim_outliers(pool, outlier_fraction, rank_by)
    summary = {name: float(np.median([getattr(p, name) for p in kept]))
               for name in METRIC_NAMES}
    summary["n_pixels"] = len(kept)
    return summary


def ecdf(values):
    """Right-continuous empirical CDF support points.

    Returns an (N, 2) array of (sorted value, cumulative fraction).
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("ecdf of empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("ecdf input must be finite")
    s = np.sort(v)
    frac = np.searchsorted(s, s, side="right") / s.size
    return np.column_stack([s, frac])


def error_map(pred, target, mask):
    """Absolute difference |pred - target| where valid; 0 + flag elsewhere.

    Returns (absdiff grid, flagged grid) for one frame.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != np.shape(mask):
        raise ValueError("error_map shape mismatch")
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.abs(pred - target), 0.0)
    return out, ~mask


# ---------------------------------------------------------------------------
# CSV emission


def write_summary_csv(path, rows):
    """rows: list of (model_name, summary dict)."""
    cols = ["model", *METRIC_NAMES, "n_pixels"]
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(cols)
        for model, summary in rows:
            wr.writerow([model] + [summary[c] for c in cols[1:]])
    return path


def read_summary_csv(path):
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        return [(row["model"],
                 {k: (int(v) if k == "n_pixels" else float(v))
                  for k, v in row.items() if k != "model"})
                for row in rd]


def write_ecdf_csv(path, values):
    pts = ecdf(values)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["value", "cumulative_fraction"])
        for v, frac in pts:
            wr.writerow([v, frac])
    return path
