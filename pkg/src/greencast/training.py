"""Masked-L2 training loop with an adaptive-moment optimizer.

Supervision covers the horizon only; the loss averages squared errors
over valid target pixels, so gradients never flow through masked entries.
Runs are deterministic for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .fileio import read_manifest
from .minicube import load_minicube
from .model import (encode, forecast, init_params,
                    params_as_tensors, predict, save_checkpoint)
from .synthgen import splitmix64


class TrainingError(RuntimeError):
    """Raised on non-finite losses/gradients or unusable splits."""


def masked_l2_loss(pred, target, mask):
    """Mean squared error over valid entries only.

    pred: Tensor (k, H, W); target, mask: numpy (k, H, W). Returns
    (loss Tensor, skipped bool); a fully-masked sample yields loss 0 and
    skipped=True.
    """
    target = np.asarray(target)
    mask = np.asarray(mask, dtype=bool)
    if pred.data.shape != target.shape or target.shape != mask.shape:
        raise tn.ShapeError(
            f"loss shape mismatch: pred {pred.data.shape}, "
            f"target {target.shape}, mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        return tn.Tensor(np.zeros((), dtype=pred.data.dtype)), True
    dtype = pred.data.dtype
    # masked entries compare the prediction with itself: they contribute an
    # exact zero to loss and gradients, bit-identical for any masked target
    tgt = np.where(mask, target.astype(dtype, copy=False), pred.data)
    diff = tn.sub(pred, tn.Tensor(tgt, dtype=dtype))
    masked = tn.mul(diff, tn.Tensor(mask.astype(dtype), dtype=dtype))
    return tn.scale(tn.sum_all(tn.mul(masked, masked)), 1.0 / count), False


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls(m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected adaptive-moment update; returns new parameter arrays.

    params/grads: lists of matching numpy arrays; state is mutated.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    t = state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient for parameter {i} at step {t}"
            )
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        out.append((p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype))
    return out


@dataclass
class TrainLog:
    config: dict
    seed: int
    epochs: list = field(default_factory=list)  # (epoch, train_loss, val_rmse, seconds)
    optimizer: str = "adam"

    def append(self, epoch, train_loss, val_rmse, seconds):
        if not (np.isfinite(train_loss) and np.isfinite(val_rmse)):
            raise TrainingError(
                f"non-finite epoch stats at epoch {epoch}: "
                f"loss={train_loss}, val_rmse={val_rmse}"
            )
        self.epochs.append((epoch, float(train_loss), float(val_rmse), seconds))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["epoch", "train_loss", "val_rmse", "seconds"])
            for row in self.epochs:
                wr.writerow(row)
        return path


def split_by_id(cubes, val_fraction=0.1):
    """Deterministic train/val split, disjoint by sample id.

    A single-cube dataset (overfit smoke mode) is used for both splits.
    """
    if len(cubes) == 1:
        return list(cubes), list(cubes)
    train, val = [], []
    mod = max(2, round(1.0 / val_fraction))
    for cube in cubes:
        h = splitmix64(fnv_id(cube.sample_id))
        (val if h % mod == 0 else train).append(cube)
    if not val and train:
        val.append(train.pop())
    if not train:
        raise TrainingError("empty training split")
    return train, val


def fnv_id(text):
    from .fileio import fnv1a
    return fnv1a(text.encode("utf-8"))


def validation_rmse(cubes, params, cfg):
    """Pooled RMSE over valid horizon pixels of the validation cubes."""
    sq_sum, count = 0.0, 0
    for cube in cubes:
        pred = predict(cube, params, cfg)
        valid = cube.mask[cube.n:]
        diff = (pred - cube.ndvi[cube.n:])[valid]
        sq_sum += float((diff.astype(np.float64) ** 2).sum())
        count += diff.size
    if count == 0:
        raise TrainingError("no valid pixels in the validation split")
    return float(np.sqrt(sq_sum / count))


def sample_gradients(cube, params, cfg):
    """One forward/backward pass; returns (loss value, grads or None)."""
    tape = tn.Tape()
    tp = params_as_tensors(params, tape)
    states, _ = encode(cube, tp, cfg)
    preds = forecast(states, cube, tp, cfg)
    loss, skipped = masked_l2_loss(preds, cube.ndvi[cube.n:],
                                   cube.mask[cube.n:])
    if skipped:
        return 0.0, None
    tn.backward(tape, loss)
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
             for t in tp.flat()]
    return float(loss.data), grads


def train(manifest_path, cfg, checkpoint_path=None, log_path=None,
          params=None):
    """Full training run; returns (best params, TrainLog).

    The checkpoint (when a path is given) is written at the best
    validation RMSE seen so far.
    """
    paths = read_manifest(manifest_path)
    if not paths:
        raise TrainingError(f"manifest {manifest_path} lists no cubes")
    cubes = [load_minicube(p) for p in paths]
    train_cubes, val_cubes = split_by_id(cubes)

    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg, rng)
    flat = params.flat()
    state = AdamState.zeros_like(flat)
    log = TrainLog(config=cfg.echo(), seed=cfg.seed)
    best_rmse = np.inf
    best_flat = [a.copy() for a in flat]

    order = np.arange(len(train_cubes))
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad_sum = None
            used = 0
            cur = params.replace_flat(flat)
            for idx in batch:  # fixed order => deterministic reduction
                loss_val, grads = sample_gradients(train_cubes[idx], cur, cfg)
                if grads is None:
                    continue
                losses.append(loss_val)
                used += 1
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for a, g in zip(grad_sum, grads):
                        a += g
            if used == 0:
                continue
            mean_grads = [g / used for g in grad_sum]
            flat = adam_step(flat, mean_grads, state, cfg.lr)

        val_rmse = validation_rmse(val_cubes, params.replace_flat(flat), cfg)
        train_loss = float(np.mean(losses)) if losses else 0.0
        log.append(epoch, train_loss, val_rmse, time.perf_counter() - t0)
        if val_rmse < best_rmse:
            best_rmse = val_rmse
            best_flat = [a.copy() for a in flat]
            if checkpoint_path is not None:
                save_checkpoint(params.replace_flat(best_flat), cfg,
                                checkpoint_path)

    if log_path is not None:
        log.to_csv(log_path)
    return params.replace_flat(best_flat), log
