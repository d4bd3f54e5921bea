"""Reverse-mode automatic differentiation over dense float64 tensors.

Design: define-by-run. Each primitive computes its result eagerly with numpy
and, while a Tape is active, records a vector-Jacobian closure. ``backward``
replays the tape in reverse, which is a valid topological order because
entries are appended in execution order. The tape is rebuilt per forward
pass; there is no graph caching.

Conventions fixed here and relied on by tests:
  * everything is float64,
  * relu'(0) := 0,
  * broadcast support is limited to scalar-vs-tensor and equal shapes
    (bias rows go through the dedicated ``add_bias`` primitive),
  * every op output must be finite; NaN/Inf raises ``NumericsError``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericsError

# Toggle for the finite-output check on every primitive. Kept on: desk-scale
# tensors make the cost negligible and silent NaNs are much worse.
CHECK_FINITE = True

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense n-dimensional value, optionally tracked for gradients.

    ``grad`` is populated (and accumulated across repeated backward calls)
    only for leaves, i.e. tensors the user created directly. Intermediate
    results propagate gradients through the tape but never retain them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(arr)):
            raise NumericsError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy-free view of the same data with gradient tracking off."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._from_op = False
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar used throughout the networks.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Entries are (output, inputs, vjp) where ``vjp`` maps the output gradient
    to per-input gradients (``None`` for inputs that do not need one).
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def clear(self) -> None:
        """Drop all recorded entries (frees intermediate buffers)."""
        self._entries.clear()

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of every requiring leaf.

        Repeated calls without zeroing accumulate, matching the documented
        contract. Raises ``ContractError`` for a non-scalar loss or a loss
        that was not recorded on this tape.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._entries:
            raise ContractError("backward on an empty tape")
        if not any(out is loss for out, _, _ in self._entries):
            raise ContractError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gin in zip(inputs, vjp(g)):
                if gin is None or not inp.requires_grad:
                    continue
                if inp._from_op:
                    acc = grads.get(id(inp))
                    grads[id(inp)] = gin if acc is None else acc + gin
                else:  # leaf: accumulate into .grad
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gin


def no_tape() -> "_NoTape":
    """Context manager that suspends recording (fast inference paths)."""
    return _NoTape()


class _NoTape:
    def __enter__(self):
        global _ACTIVE_TAPE
        self._saved = _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._saved


def backward(loss: Tensor, tape: Tape) -> None:
    """Free-function alias for ``tape.backward(loss)``."""
    tape.backward(loss)


# ---------------------------------------------------------------------------
# Primitive machinery


def _out(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericsError("op produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = any(i.requires_grad for i in inputs)
    t.grad = None
    t._from_op = True
    if t.requires_grad and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._entries.append((t, tuple(inputs), vjp))
    return t


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # Only scalar-vs-tensor and equal-shape broadcasting are supported.
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(f"{op}: unsupported broadcast {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to ``shape`` (scalar operands only)."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if shape != () else np.array(np.sum(g))


# ---------------------------------------------------------------------------
# Primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _out(ad @ bd, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a, b, "add")
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _out(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a, b, "sub")
    ash, bsh = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _out(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary_shapes(a, b, "mul")
    ad, bd, ash, bsh = a.data, b.data, a.shape, b.shape

    def vjp(g):
        ga = _unbroadcast(g * bd, ash) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bsh) if b.requires_grad else None
        return ga, gb

    return _out(ad * bd, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _out(a.data * c, (a,), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0  # relu'(0) := 0

    def vjp(g):
        return (g * mask,)

    return _out(x.data * mask, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _out(y, (x,), vjp)


def square(x: Tensor) -> Tensor:
    xd = x.data

    def vjp(g):
        return (2.0 * xd * g,)

    return _out(xd * xd, (x,), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.data.ndim == 0 or x.data.shape[axis] < 1:
        raise DimensionError("softmax needs a non-empty axis")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _out(y, (x,), vjp)


def sum_(x: Tensor) -> Tensor:
    shape = x.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).copy() if shape else g,)

    return _out(np.array(np.sum(x.data)), (x,), vjp)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    if axis is None:
        n = x.data.size

        def vjp(g):
            return (np.broadcast_to(g / n, shape).copy(),)

        return _out(np.array(np.mean(x.data)), (x,), vjp)

    n = shape[axis]

    def vjp_axis(g):
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return _out(np.mean(x.data, axis=axis), (x,), vjp_axis)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (B, n) + (n,)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: {x.shape} + {b.shape}")

    def vjp(g):
        return g, g.sum(axis=0)

    return _out(x.data + b.data, (x, b), vjp)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Per-channel bias add on (B, C, H, W) feature maps."""
    if x.data.ndim != 4 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_channel_bias: {x.shape} + {b.shape}")

    def vjp(g):
        return g, g.sum(axis=(0, 2, 3))

    return _out(x.data + b.data[None, :, None, None], (x, b), vjp)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two (B, *) matrices."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat: {a.shape} vs {b.shape}")
    na = a.shape[1]

    def vjp(g):
        return g[:, :na], g[:, na:]

    return _out(np.concatenate([a.data, b.data], axis=1), (a, b), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape

    def vjp(g):
        return (g.reshape(old),)

    return _out(x.data.reshape(shape), (x,), vjp)


def gather_cols(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row column gather: (B, N) gathered with integer (B, k) -> (B, k)."""
    if x.data.ndim != 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_cols: {x.shape} with idx {idx.shape}")
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, (np.arange(shape[0])[:, None], idx), g)
        return (gx,)

    return _out(np.take_along_axis(x.data, idx, axis=1), (x,), vjp)


def scatter_cols(v: Tensor, idx: np.ndarray, n: int) -> Tensor:
    """Inverse of gather_cols: place (B, k) values into zeros of width n.

    Indices must be distinct within each row (top-k selections are).
    """
    if v.data.ndim != 2 or idx.shape != v.shape:
        raise DimensionError(f"scatter_cols: {v.shape} with idx {idx.shape}")
    rows = np.arange(v.shape[0])[:, None]
    out = np.zeros((v.shape[0], n))
    out[rows, idx] = v.data

    def vjp(g):
        return (np.take_along_axis(g, idx, axis=1),)

    return _out(out, (v,), vjp)


def take_col(x: Tensor, i: int) -> Tensor:
    """Extract column i of a (B, N) matrix as a (B,) vector."""
    if x.data.ndim != 2 or not 0 <= i < x.shape[1]:
        raise DimensionError(f"take_col: column {i} of {x.shape}")
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[:, i] = g
        return (gx,)

    return _out(x.data[:, i].copy(), (x,), vjp)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale each row of (B, F) by the matching entry of a (B,) vector."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.shape[0] != s.shape[0]:
        raise DimensionError(f"scale_rows: {x.shape} by {s.shape}")
    xd, sd = x.data, s.data

    def vjp(g):
        gx = g * sd[:, None] if x.requires_grad else None
        gs = np.sum(g * xd, axis=1) if s.requires_grad else None
        return gx, gs

    return _out(xd * sd[:, None], (x, s), vjp)


def neg_entropy(p: Tensor) -> Tensor:
    """sum_i p_i * log(p_i) with the 0*log(0) := 0 convention.

    Fused so the forward value stays finite for zero probabilities; the
    gradient at p_i == 0 is defined as 0 (a measure-zero boundary).
    """
    pd = p.data
    if np.any(pd < -1e-12):
        raise ContractError("neg_entropy expects nonnegative probabilities")
    pos = pd > 0.0
    val = np.array(np.sum(np.where(pos, pd * np.log(np.where(pos, pd, 1.0)), 0.0)))

    def vjp(g):
        return (g * np.where(pos, np.log(np.where(pos, pd, 1.0)) + 1.0, 0.0),)

    return _out(val, (p,), vjp)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D convolution: (B,C,H,W) * (F,C,kh,kw) -> (B,F,OH,OW)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D operands, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    F, Cw, kh, kw = w.shape
    if Cw != C:
        raise DimensionError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    if kh > H or kw > W:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than input {H}x{W}")
    if stride < 1:
        raise DimensionError("conv2d stride must be >= 1")
    OH = (H - kh) // stride + 1
    OW = (W - kw) // stride + 1
    xd, wd = x.data, w.data

    out = np.zeros((B, F, OH, OW))
    for i in range(kh):
        for j in range(kw):
            patch = xd[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
            out += np.einsum("bchw,fc->bfhw", patch, wd[:, :, i, j], optimize=True)

    def vjp(g):
        gx = None
        gw = None
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride] += np.einsum(
                        "bfhw,fc->bchw", g, wd[:, :, i, j], optimize=True
                    )
        if w.requires_grad:
            gw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    patch = xd[:, :, i : i + stride * OH : stride, j : j + stride * OW : stride]
                    gw[:, :, i, j] = np.einsum("bchw,bfhw->fc", patch, g, optimize=True)
        return gx, gw

    return _out(out, (x, w), vjp)


def random_shift(x: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    """DrQ-style augmentation: replicate-pad then crop at a per-sample offset.

    Operates on raw arrays outside the tape (non-differentiable
    preprocessing). ``pad == 0`` is the identity.
    """
    if pad < 0:
        raise ContractError("random_shift pad must be >= 0")
    if x.ndim != 4:
        raise DimensionError(f"random_shift needs (B,C,H,W), got {x.shape}")
    if pad == 0:
        return x.copy()
    B, C, H, W = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    offsets = rng.integers(0, 2 * pad + 1, size=(B, 2))
    out = np.empty_like(x)
    for b in range(B):
        oy, ox = offsets[b]
        out[b] = padded[b, :, oy : oy + H, ox : ox + W]
    return out
