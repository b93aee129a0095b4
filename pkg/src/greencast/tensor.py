"""Minimal dense-tensor library with reverse-mode differentiation.

Covers exactly the operations the ConvLSTM encoder-forecaster needs:
same-padded 2d cross-correlation, elementwise arithmetic and gate
nonlinearities, concatenation/reshape plumbing, clamping, summation and
a fused LSTM gate-combine step. Forward values are float32 by default;
all ops are dtype-generic so the finite-difference checker can re-run
the forward path in float64.

No broadcasting: binary ops require identical shapes. Tensors are
immutable after construction; a Tape is single-owner and records the
backward closures in topological (creation) order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


class TapeError(RuntimeError):
    """Raised on tape misuse (non-scalar loss, double backward, ...)."""


_DEBUG_CHECKS = False


def set_debug_checks(enabled):
    """Toggle finiteness assertions after every forward op (slow)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tape:
    """Append-only record of operations for one reverse pass.

    Nodes are backward closures stored in creation order; every node's
    inputs were created before it, so a single reverse sweep satisfies
    the chain rule. A tape can be consumed by backward() exactly once.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def record(self, backward_fn):
        self.nodes.append(backward_fn)

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """Dense n-d array, optionally tracked on a tape for gradients."""

    __slots__ = ("data", "tape", "grad")

    def __init__(self, data, tape=None, dtype=np.float32):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(dtype)
        self.data = arr
        self.tape = tape
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.tape is not None})"


def _result_tape(*tensors):
    tape = None
    for t in tensors:
        if t is not None and t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise TapeError("operands live on different tapes")
            tape = t.tape
    return tape


def _accumulate(t, g, own=False):
    # own=True hands g over to t; callers must not pass the same array
    # with own=True to two different tensors.
    if t.tape is None:
        return
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def _check_finite(arr, opname):
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {opname}")


def _same_shape(a, b, opname):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{opname}: shape mismatch {a.data.shape} vs {b.data.shape}"
        )


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    _same_shape(a, b, "add")
    tape = _result_tape(a, b)
    out = Tensor(a.data + b.data, tape=tape)
    _check_finite(out.data, "add")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accumulate(b, out.grad)
            _accumulate(a, out.grad, own=True)
        tape.record(bwd)
    return out


def sub(a, b):
    _same_shape(a, b, "sub")
    tape = _result_tape(a, b)
    out = Tensor(a.data - b.data, tape=tape)
    _check_finite(out.data, "sub")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            if b.tape is not None:
                _accumulate(b, -out.grad, own=True)
            _accumulate(a, out.grad, own=True)
        tape.record(bwd)
    return out


def mul(a, b):
    _same_shape(a, b, "mul")
    tape = _result_tape(a, b)
    out = Tensor(a.data * b.data, tape=tape)
    _check_finite(out.data, "mul")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            if a.tape is not None:
                _accumulate(a, out.grad * b.data, own=True)
            if b.tape is not None:
                _accumulate(b, out.grad * a.data, own=True)
        tape.record(bwd)
    return out


def scale(a, s):
    """Multiply by a python scalar constant."""
    s = a.data.dtype.type(s)
    tape = _result_tape(a)
    out = Tensor(a.data * s, tape=tape)
    _check_finite(out.data, "scale")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, out.grad * s, own=True)
        tape.record(bwd)
    return out


def sigmoid(a):
    tape = _result_tape(a)
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    y = y.astype(a.data.dtype, copy=False)
    out = Tensor(y, tape=tape)
    _check_finite(out.data, "sigmoid")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, out.grad * (y * (1.0 - y)), own=True)
        tape.record(bwd)
    return out


def tanh(a):
    tape = _result_tape(a)
    y = np.tanh(a.data)
    out = Tensor(y, tape=tape)
    _check_finite(out.data, "tanh")
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, out.grad * (1.0 - y * y), own=True)
        tape.record(bwd)
    return out


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul,
                "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op, a, b=None):
    """Dispatch an elementwise op by name; binary ops need equal shapes."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ShapeError(f"{op} requires two operands")
        return fn(a, b)
    if b is not None:
        raise ShapeError(f"{op} is unary")
    return fn(a)


# ---------------------------------------------------------------------------
# structural ops


def concat(tensors, axis):
    tape = _result_tape(*tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tape=tape)
    if tape is not None:
        sizes = [t.data.shape[axis] for t in tensors]
        def bwd():
            if out.grad is None:
                return
            start = 0
            for t, size in zip(tensors, sizes):
                if t.tape is not None:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(start, start + size)
                    _accumulate(t, np.ascontiguousarray(out.grad[tuple(idx)]), own=True)
                start += size
        tape.record(bwd)
    return out


def stack(tensors):
    """Stack equal-shape tensors along a new leading axis."""
    tape = _result_tape(*tensors)
    out = Tensor(np.stack([t.data for t in tensors]), tape=tape)
    if tape is not None:
        def bwd():
            if out.grad is None:
                return
            for i, t in enumerate(tensors):
                if t.tape is not None:
                    _accumulate(t, np.ascontiguousarray(out.grad[i]), own=True)
        tape.record(bwd)
    return out


def reshape(a, shape):
    tape = _result_tape(a)
    out = Tensor(a.data.reshape(shape), tape=tape)
    if tape is not None:
        orig = a.data.shape
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, out.grad.reshape(orig).copy())
        tape.record(bwd)
    return out


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    tape = _result_tape(a)
    y = np.clip(a.data, lo, hi)
    out = Tensor(y, tape=tape)
    if tape is not None:
        inside = (a.data > lo) & (a.data < hi)
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, out.grad * inside, own=True)
        tape.record(bwd)
    return out


def sum_all(a):
    """Sum all entries to a scalar tensor."""
    tape = _result_tape(a)
    out = Tensor(np.asarray(a.data.sum(dtype=a.data.dtype)), tape=tape)
    if tape is not None:
        shape = a.data.shape
        def bwd():
            if out.grad is None:
                return
            _accumulate(a, np.broadcast_to(out.grad, shape).copy(), own=True)
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# convolution


def _im2col(x, kh, kw):
    # x: (C, H, W) -> (C*kh*kw, H*W), zero-padded so spatial dims hold.
    # Channel-major layout keeps the inner W axis contiguous during the
    # gather, which is what makes this fast.
    c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + w] = x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C,H,W,kh,kw)
    cols = np.empty((c, kh, kw, h, w), dtype=x.dtype)
    np.copyto(cols, win.transpose(0, 3, 4, 1, 2))
    return cols.reshape(c * kh * kw, h * w)


def conv2d(x, kernel, bias=None):
    """Same-padded 2d cross-correlation.

    x: (C_in, H, W); kernel: (C_out, C_in, kH, kW) with odd kH, kW;
    bias: (C_out,) or None. Returns (C_out, H, W).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects x (C,H,W) and kernel (O,C,kH,kW)")
    c_out, c_in, kh, kw = kernel.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.data.shape[0] != c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.data.shape[0]}, "
            f"kernel expects {c_in}"
        )
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},)")
    _, h, w = x.data.shape

    cols = _im2col(x.data, kh, kw)                    # (C_in*kh*kw, HW)
    kmat = kernel.data.reshape(c_out, -1)             # (C_out, C_in*kh*kw)
    out_mat = kmat @ cols                             # (C_out, HW)
    if bias is not None:
        out_mat += bias.data[:, None]
    y = out_mat.reshape(c_out, h, w)
    _check_finite(y, "conv2d")

    tape = _result_tape(x, kernel, bias)
    out = Tensor(y, tape=tape)
    if tape is not None:
        ph, pw = kh // 2, kw // 2
        def bwd():
            if out.grad is None:
                return
            dmat = out.grad.reshape(c_out, h * w)          # (C_out, HW)
            if kernel.tape is not None:
                _accumulate(kernel, (dmat @ cols.T).reshape(kernel.data.shape),
                            own=True)
            if bias is not None and bias.tape is not None:
                _accumulate(bias, dmat.sum(axis=1), own=True)
            if x.tape is not None:
                dcols = (kmat.T @ dmat).reshape(c_in, kh, kw, h, w)
                dxp = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=x.data.dtype)
                for dy in range(kh):
                    for dx in range(kw):
                        dxp[:, dy:dy + h, dx:dx + w] += dcols[:, dy, dx]
                dx_ = dxp[:, ph:ph + h, pw:pw + w]
                _accumulate(x, np.ascontiguousarray(dx_), own=True)
        tape.record(bwd)
    return out


# ---------------------------------------------------------------------------
# fused LSTM gate combine

GATE_ORDER = ("input", "forget", "output", "candidate")


def lstm_gate_combine(gates, c_prev):
    """Fused LSTM state update from pre-activation gates.

    gates: (4*C, H, W) stacked pre-activations in GATE_ORDER;
    c_prev: (C, H, W). Returns (h_new, c_new) where
    c_new = sigmoid(f)*c_prev + sigmoid(i)*tanh(g),
    h_new = sigmoid(o)*tanh(c_new).
    """
    if gates.data.ndim != 3 or gates.data.shape[0] % 4 != 0:
        raise ShapeError("gates must have shape (4*C, H, W)")
    c = gates.data.shape[0] // 4
    if c_prev.data.shape != (c,) + gates.data.shape[1:]:
        raise ShapeError(
            f"c_prev shape {c_prev.data.shape} incompatible with gates "
            f"{gates.data.shape}"
        )
    g = gates.data
    with np.errstate(over="ignore"):
        i = 1.0 / (1.0 + np.exp(-g[:c]))
        f = 1.0 / (1.0 + np.exp(-g[c:2 * c]))
        o = 1.0 / (1.0 + np.exp(-g[2 * c:3 * c]))
    cand = np.tanh(g[3 * c:])
    dt = g.dtype
    i, f, o = i.astype(dt, copy=False), f.astype(dt, copy=False), o.astype(dt, copy=False)
    c_new = f * c_prev.data + i * cand
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    _check_finite(c_new, "lstm_gate_combine")

    tape = _result_tape(gates, c_prev)
    h_t = Tensor(h_new, tape=tape)
    c_t = Tensor(c_new, tape=tape)
    if tape is not None:
        def bwd():
            dh = h_t.grad
            dc_out = c_t.grad
            if dh is None and dc_out is None:
                return
            dc = np.zeros_like(c_new) if dc_out is None else dc_out.copy()
            if dh is not None:
                dc += dh * o * (1.0 - tanh_c * tanh_c)
            dgates = np.empty_like(g)
            dgates[:c] = dc * cand * (i * (1.0 - i))
            dgates[c:2 * c] = dc * c_prev.data * (f * (1.0 - f))
            if dh is not None:
                dgates[2 * c:3 * c] = dh * tanh_c * (o * (1.0 - o))
            else:
                dgates[2 * c:3 * c] = 0.0
            dgates[3 * c:] = dc * i * (1.0 - cand * cand)
            if gates.tape is not None:
                _accumulate(gates, dgates, own=True)
            if c_prev.tape is not None:
                _accumulate(c_prev, dc * f, own=True)
        tape.record(bwd)
    return h_t, c_t


# ---------------------------------------------------------------------------
# reverse pass and gradient checking


def backward(tape, loss):
    """Run the reverse sweep, populating .grad on tracked tensors."""
    if loss.tape is not tape:
        raise TapeError("loss was not produced on this tape")
    if loss.data.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    tape.consumed = True
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        node()


def check_gradients(f, params, eps=1e-4, max_coords=200, seed=0):
    """Max relative error between analytic and central-difference grads.

    f maps a list of Tensors to a scalar Tensor. The analytic path runs
    in float32 on a fresh tape; the finite-difference oracle re-evaluates
    f in float64. Up to max_coords coordinates are sampled per call
    (all coordinates when the parameter count is small enough).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    arrays = [np.asarray(p, dtype=np.float32) for p in params]

    tape = Tape()
    tracked = [Tensor(a, tape=tape) for a in arrays]
    loss = f(tracked)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite loss in gradient check")
    backward(tape, loss)
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
             for t in tracked]

    arrays64 = [a.astype(np.float64) for a in arrays]

    def eval64():
        out = f([Tensor(a.copy(), dtype=np.float64) for a in arrays64])
        val = float(out.data)
        if not np.isfinite(val):
            raise FloatingPointError("non-finite loss in finite-difference path")
        return val

    coords = [(pi, ci) for pi, a in enumerate(arrays64)
              for ci in range(a.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(j)] for j in picks]

    max_rel = 0.0
    for pi, ci in coords:
        flat = arrays64[pi].reshape(-1)
        orig = flat[ci]
        flat[ci] = orig + eps
        up = eval64()
        flat[ci] = orig - eps
        down = eval64()
        flat[ci] = orig
        cd = (up - down) / (2.0 * eps)
        an = float(grads[pi].reshape(-1)[ci])
        rel = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel
