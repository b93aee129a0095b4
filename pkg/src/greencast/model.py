"""ConvLSTM encoder-forecaster.

Two stacked cells consume the context frames (NDVI + broadcast drivers +
topography); two more cells, initialized from the encoder's final hidden
states, roll out the horizon from drivers + topography alone. Each
forecast frame is the previous frame plus a predicted increment (skip /
difference prediction), starting from the gap-filled last context frame,
and is clamped to [-1, 1].

Gate formulation: standard ConvLSTM without peephole terms, gate order
(input, forget, output, candidate); see tensor.GATE_ORDER.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .fileio import FormatError, fnv1a
from .minicube import broadcast_drivers, gapfill_frames

PEEPHOLE_CONNECTIONS = False  # fixed architecture constant

N_CELLS = 4  # 2 encoder + 2 forecaster


@dataclass
class CellParams:
    w_x: np.ndarray  # (4*C_h, C_in, kH, kW)
    w_h: np.ndarray  # (4*C_h, C_h, kH, kW)
    b: np.ndarray    # (4*C_h,)


@dataclass
class ConvLstmParams:
    cells: list          # [enc1, enc2, fore1, fore2]
    head_w: np.ndarray   # (1, C_h, 1, 1)
    head_b: np.ndarray   # (1,)

    def flat(self):
        """All parameter arrays in declaration order."""
        out = []
        for c in self.cells:
            out.extend([c.w_x, c.w_h, c.b])
        out.extend([self.head_w, self.head_b])
        return out

    def replace_flat(self, arrays):
        it = iter(arrays)
        cells = [CellParams(next(it), next(it), next(it)) for _ in range(N_CELLS)]
        return ConvLstmParams(cells=cells, head_w=next(it), head_b=next(it))


@dataclass
class CellState:
    h: "tn.Tensor"
    c: "tn.Tensor"


def input_channels(cfg):
    """Per-cell input channel counts [enc1, enc2, fore1, fore2]."""
    ch = cfg.hidden_channels
    return [1 + cfg.D + 1, ch, cfg.D + 1, ch]


def init_params(cfg, rng=None):
    """Uniform +-1/sqrt(fan_in) weights, forget-gate bias +1."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    ch, ks = cfg.hidden_channels, cfg.kernel_size
    cells = []
    for c_in in input_channels(cfg):
        bound_x = 1.0 / np.sqrt(c_in * ks * ks)
        bound_h = 1.0 / np.sqrt(ch * ks * ks)
        w_x = rng.uniform(-bound_x, bound_x, (4 * ch, c_in, ks, ks))
        w_h = rng.uniform(-bound_h, bound_h, (4 * ch, ch, ks, ks))
        b = np.zeros(4 * ch)
        b[ch:2 * ch] = 1.0  # forget gate slice in GATE_ORDER
        cells.append(CellParams(w_x.astype(np.float32),
                                w_h.astype(np.float32),
                                b.astype(np.float32)))
    bound = 1.0 / np.sqrt(ch)
    head_w = rng.uniform(-bound, bound, (1, ch, 1, 1)).astype(np.float32)
    head_b = np.zeros(1, dtype=np.float32)
    return ConvLstmParams(cells=cells, head_w=head_w, head_b=head_b)


def zero_state(ch, h, w, dtype=np.float32):
    return CellState(h=tn.Tensor(np.zeros((ch, h, w), dtype=dtype)),
                     c=tn.Tensor(np.zeros((ch, h, w), dtype=dtype)))


def cell_step(x, state, cell):
    """One ConvLSTM cell update.

    x: Tensor (C_in, H, W); state: CellState with (C_h, H, W) tensors;
    cell: CellParams as Tensors. Returns the next CellState.
    """
    xh = tn.concat([x, state.h], axis=0)
    w = tn.concat([cell.w_x, cell.w_h], axis=1)
    gates = tn.conv2d(xh, w, cell.b)
    h_new, c_new = tn.lstm_gate_combine(gates, state.c)
    return CellState(h=h_new, c=c_new)


def params_as_tensors(params, tape):
    cells = [CellParams(tn.Tensor(c.w_x, tape=tape),
                        tn.Tensor(c.w_h, tape=tape),
                        tn.Tensor(c.b, tape=tape)) for c in params.cells]
    return ConvLstmParams(cells=cells,
                          head_w=tn.Tensor(params.head_w, tape=tape),
                          head_b=tn.Tensor(params.head_b, tape=tape))


def _driver_planes(cube, cfg, dtype):
    planes = broadcast_drivers(cube.drivers, *cube.grid)
    if cfg.ablate_weather:
        planes = np.zeros_like(planes)
    return planes.astype(dtype, copy=False)


def encode(cube, params, cfg, tape=None, dtype=None):
    """Run the two encoder cells over the context; returns their states.

    Input at step t concatenates the stored NDVI frame (fill value at
    invalid pixels), broadcast drivers and topography. Encoder states
    start at zero.
    """
    h, w = cube.grid
    if cube.n < cfg.n:
        raise ValueError(f"cube has {cube.n} context frames, config wants {cfg.n}")
    tp = params if isinstance(params.head_w, tn.Tensor) else \
        params_as_tensors(params, tape)
    if dtype is None:
        dtype = tp.head_w.data.dtype
    planes = _driver_planes(cube, cfg, dtype)
    topo = cube.topography.astype(dtype, copy=False)
    states = [zero_state(cfg.hidden_channels, h, w, dtype) for _ in range(2)]
    for t in range(cfg.n):
        frame = np.concatenate(
            [cube.ndvi[t][None].astype(dtype, copy=False), planes[t], topo]
        )
        x = tn.Tensor(frame, dtype=dtype)
        states[0] = cell_step(x, states[0], tp.cells[0])
        states[1] = cell_step(states[0].h, states[1], tp.cells[1])
    return states, tp


def last_context_frame(cube, cfg):
    """Gap-filled last context NDVI frame (per-pixel last valid value).

    Never-valid pixels stay at the fill value.
    """
    filled = gapfill_frames(cube.ndvi[:cfg.n], cube.mask[:cfg.n])
    return filled[cfg.n - 1]


def forecast(states, cube, params, cfg, tape=None, dtype=None):
    """Roll the forecaster cells over the horizon.

    Forecaster states start from the encoder states; inputs are drivers +
    topography only. Prediction at each step is the previous prediction
    plus the 1x1-conv head applied to the top hidden state, clamped to
    [-1, 1]. Returns a (k, H, W) Tensor.
    """
    if cfg.k < 1:
        raise ValueError("forecast horizon must be >= 1")
    tp = params if isinstance(params.head_w, tn.Tensor) else \
        params_as_tensors(params, tape)
    if dtype is None:
        dtype = tp.head_w.data.dtype
    planes = _driver_planes(cube, cfg, dtype)
    topo = cube.topography.astype(dtype, copy=False)
    h, w = cube.grid

    fstates = [CellState(h=states[i].h, c=states[i].c) for i in range(2)]
    prev = tn.Tensor(last_context_frame(cube, cfg).astype(dtype), dtype=dtype)
    preds = []
    for t in range(cfg.n, cfg.n + cfg.k):
        frame = np.concatenate([planes[t], topo])
        x = tn.Tensor(frame, dtype=dtype)
        fstates[0] = cell_step(x, fstates[0], tp.cells[2])
        fstates[1] = cell_step(fstates[0].h, fstates[1], tp.cells[3])
        delta = tn.conv2d(fstates[1].h, tp.head_w, tp.head_b)
        prev = tn.clamp(tn.add(prev, tn.reshape(delta, (h, w))), -1.0, 1.0)
        preds.append(prev)
    return tn.stack(preds)


def predict(cube, params, cfg):
    """Forward-only forecast as a numpy array (k, H, W)."""
    states, tp = encode(cube, params, cfg, tape=None)
    return forecast(states, cube, tp, cfg).data


# ---------------------------------------------------------------------------
# checkpoint persistence
#
# Layout: magic "MCWT", u32 version, u32 n, k, H, W, D, C_h, kernel,
# parameter tensors as f32 LE in declaration order, trailing u64 FNV-1a.

CKPT_MAGIC = b"MCWT"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIIIII")


def save_checkpoint(params, cfg, path):
    payload = bytearray()
    payload += _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, cfg.n, cfg.k,
                                 cfg.H, cfg.W, cfg.D, cfg.hidden_channels,
                                 cfg.kernel_size)
    for arr in params.flat():
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    payload += struct.pack("<Q", fnv1a(bytes(payload)))
    with open(path, "wb") as f:
        f.write(payload)
    return path


def load_checkpoint(path, cfg=None):
    """Load params; returns (params, echo dict). If cfg is given, its
    geometry must match the stored echo."""
    from .minicube import ForecastConfig

    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_HEADER.size + 8:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n, k, h, w, d, ch, ks = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    echo = ForecastConfig(n=n, k=k, H=h, W=w, D=d, hidden_channels=ch,
                          kernel_size=ks)
    if cfg is not None:
        for name in ("n", "k", "H", "W", "D", "hidden_channels", "kernel_size"):
            if getattr(cfg, name) != getattr(echo, name):
                raise FormatError(
                    f"{path}: checkpoint {name}={getattr(echo, name)} does not "
                    f"match config {name}={getattr(cfg, name)}"
                )
    template = init_params(echo, rng=np.random.default_rng(0))
    off = _CKPT_HEADER.size
    arrays = []
    for t in template.flat():
        count = t.size
        if off + count * 4 > len(raw) - 8:
            raise FormatError(f"{path}: truncated parameter data")
        arrays.append(np.frombuffer(raw, dtype="<f4", count=count,
                                    offset=off).reshape(t.shape).copy())
        off += count * 4
    if off != len(raw) - 8:
        raise FormatError(f"{path}: trailing garbage in checkpoint")
    stored = struct.unpack_from("<Q", raw, off)[0]
    if fnv1a(raw[:off]) != stored:
        raise FormatError(f"{path}: checksum failure")
    return template.replace_flat(arrays), echo
