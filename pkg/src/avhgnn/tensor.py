"""Dense 2-D float tensors with reverse-mode autodiff on a recording tape.

Everything downstream (graph layers, pooling, the loss) is built from the
ops on ComputeGraph. Forward values are computed eagerly with numpy; each
op appends a backward rule to the tape, and backward() replays the tape in
reverse. float32 is the training dtype; float64 is used as a shadow mode
by the gradient-check tests.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

# Every op asserts its output is finite. Cheap at the scales this library
# targets; flip off only for profiling.
FINITE_CHECKS = True


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NumericError(ArithmeticError):
    """A non-finite value appeared, or an op was applied outside its domain."""


def _require_2d(arr: np.ndarray, what: str) -> np.ndarray:
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A rows x cols float matrix, optionally tracked for gradients.

    `grad` is allocated lazily by backward() and has the same shape as
    `data`. Tensors created by graph ops carry `from_op=True` so gradients
    flow through them even when requires_grad is False.
    """

    __slots__ = ("data", "grad", "requires_grad", "from_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        arr = _require_2d(arr, "tensor data")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.from_op = False
        self.name = name

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor({self.rows}x{self.cols}, dtype={self.data.dtype.name}{tag})"


class Rng:
    """Deterministic random source keyed by a 64-bit seed.

    The same seed yields the same draw sequence on a given build; the
    generator state can be captured and restored for checkpointing.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, mean: float, sigma: float, shape) -> np.ndarray:
        return self._gen.normal(mean, sigma, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict):
        self._gen.bit_generator.state = state


def xavier_init(rows: int, cols: int, rng: Rng, dtype=np.float32,
                requires_grad: bool = True, name: str = "") -> Tensor:
    """Glorot-uniform init: values in [-b, b] with b = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"xavier_init needs positive dims, got ({rows}, {cols})")
    bound = float(np.sqrt(6.0 / (rows + cols)))
    data = rng.uniform(-bound, bound, (rows, cols)).astype(dtype)
    return Tensor(data, requires_grad=requires_grad, name=name)


class _OpRecord:
    __slots__ = ("out", "backward")

    def __init__(self, out: Tensor, backward: Callable[[np.ndarray], None]):
        self.out = out
        self.backward = backward


class ComputeGraph:
    """Append-only tape of recorded ops.

    Recording order is a topological order by construction: an op's inputs
    are either leaves or earlier outputs. backward() walks the tape in
    reverse and accumulates gradients into every reachable tensor that
    requires them; repeated backward calls without zeroing accumulate.
    """

    def __init__(self):
        self._records: list[_OpRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    # -- recording machinery -------------------------------------------------

    def _emit(self, data: np.ndarray, backward: Callable[[np.ndarray], None]) -> Tensor:
        if FINITE_CHECKS and not np.isfinite(data).all():
            raise NumericError("op produced a non-finite value")
        out = Tensor(data)
        out.from_op = True
        self._records.append(_OpRecord(out, backward))
        return out

    @staticmethod
    def _accum(t: Tensor, g: np.ndarray):
        if not (t.requires_grad or t.from_op):
            return
        if t.grad is None:
            t.grad = g.astype(t.data.dtype, copy=True)
        else:
            t.grad += g

    # -- linear algebra -------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.cols != b.rows:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        out_data = a.data @ b.data

        def backward(g):
            self._accum(a, g @ b.data.T)
            self._accum(b, a.data.T @ g)

        return self._emit(out_data, backward)

    def transpose(self, a: Tensor) -> Tensor:
        def backward(g):
            self._accum(a, g.T)

        return self._emit(a.data.T.copy(), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; also accepts a row vector b broadcast over a's rows."""
        if a.shape == b.shape:
            def backward(g):
                self._accum(a, g)
                self._accum(b, g)
        elif b.rows == 1 and b.cols == a.cols:
            def backward(g):
                self._accum(a, g)
                self._accum(b, g.sum(axis=0, keepdims=True))
        else:
            raise ShapeError(f"add shapes incompatible: {a.shape} + {b.shape}")
        return self._emit(a.data + b.data, backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"sub shapes differ: {a.shape} - {b.shape}")

        def backward(g):
            self._accum(a, g)
            self._accum(b, -g)

        return self._emit(a.data - b.data, backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Hadamard product."""
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} * {b.shape}")

        def backward(g):
            self._accum(a, g * b.data)
            self._accum(b, g * a.data)

        return self._emit(a.data * b.data, backward)

    # -- scalar ops -----------------------------------------------------------

    def scalar_mul(self, a: Tensor, s: float) -> Tensor:
        def backward(g):
            self._accum(a, g * s)

        return self._emit(a.data * s, backward)

    def scalar_add(self, a: Tensor, s: float) -> Tensor:
        def backward(g):
            self._accum(a, g)

        return self._emit(a.data + s, backward)

    def pow_scalar(self, a: Tensor, exponent: float) -> Tensor:
        """Elementwise power. Non-integer exponents require a positive base."""
        e = float(exponent)
        if e != int(e) and (a.data <= 0).any():
            raise NumericError(f"pow with exponent {e} needs positive base values")
        out_data = np.power(a.data, e)

        def backward(g):
            if e == 0.0:
                self._accum(a, np.zeros_like(a.data))
            else:
                self._accum(a, g * e * np.power(a.data, e - 1.0))

        return self._emit(out_data, backward)

    def log(self, a: Tensor) -> Tensor:
        if (a.data <= 0).any():
            raise NumericError("log of non-positive value")

        def backward(g):
            self._accum(a, g / a.data)

        return self._emit(np.log(a.data), backward)

    def clamp(self, a: Tensor, lo: float, hi: float) -> Tensor:
        """Clip into [lo, hi]; gradient passes only where the input was inside."""
        inside = (a.data >= lo) & (a.data <= hi)

        def backward(g):
            self._accum(a, g * inside)

        return self._emit(np.clip(a.data, lo, hi), backward)

    # -- activations ----------------------------------------------------------

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0

        def backward(g):
            self._accum(a, g * mask)

        return self._emit(a.data * mask, backward)

    def leaky_relu(self, a: Tensor, slope: float = 0.2) -> Tensor:
        pos = a.data > 0
        scale = np.where(pos, 1.0, slope).astype(a.data.dtype)

        def backward(g):
            self._accum(a, g * scale)

        return self._emit(a.data * scale, backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        x = a.data
        out_data = np.empty_like(x)
        pos = x >= 0
        out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out_data[~pos] = ex / (1.0 + ex)

        def backward(g):
            self._accum(a, g * out_data * (1.0 - out_data))

        return self._emit(out_data, backward)

    # -- structure ------------------------------------------------------------

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        if a.rows != b.rows:
            raise ShapeError(f"concat_cols row counts differ: {a.shape} | {b.shape}")
        split = a.cols

        def backward(g):
            self._accum(a, g[:, :split])
            self._accum(b, g[:, split:])

        return self._emit(np.concatenate([a.data, b.data], axis=1), backward)

    def row_softmax_masked(self, a: Tensor, mask: np.ndarray) -> Tensor:
        """Softmax over the unmasked entries of each row.

        Masked positions get weight 0. Rows whose mask is all False come out
        all-zero rather than NaN. Row maxima are subtracted before exp for
        stability.
        """
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"mask shape {mask.shape} != tensor shape {a.shape}")
        x = np.where(mask, a.data, -np.inf)
        row_max = np.max(x, axis=1, keepdims=True)
        live = np.isfinite(row_max)  # rows with at least one unmasked entry
        shifted = np.where(mask, x - np.where(live, row_max, 0.0), -np.inf)
        ex = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
        denom = ex.sum(axis=1, keepdims=True)
        out_data = np.divide(ex, denom, out=np.zeros_like(ex), where=denom > 0)
        out_data = out_data.astype(a.data.dtype)

        def backward(g):
            dot = (g * out_data).sum(axis=1, keepdims=True)
            self._accum(a, out_data * (g - dot))

        return self._emit(out_data, backward)

    # -- reductions -----------------------------------------------------------

    def sum_all(self, a: Tensor) -> Tensor:
        def backward(g):
            self._accum(a, np.full_like(a.data, g[0, 0]))

        total = np.asarray(a.data.sum(dtype=a.data.dtype)).reshape(1, 1)
        return self._emit(total, backward)

    def col_sum(self, a: Tensor) -> Tensor:
        """Sum each column over the rows, giving a 1 x cols tensor."""
        def backward(g):
            self._accum(a, np.broadcast_to(g, a.shape).copy())

        return self._emit(a.data.sum(axis=0, keepdims=True), backward)

    def col_mean(self, a: Tensor) -> Tensor:
        n = a.rows

        def backward(g):
            self._accum(a, np.broadcast_to(g / n, a.shape).copy())

        return self._emit(a.data.mean(axis=0, keepdims=True, dtype=a.data.dtype),
                          backward)

    def col_max(self, a: Tensor) -> Tensor:
        """Columnwise max; the gradient routes to the first argmax per column."""
        idx = a.data.argmax(axis=0)

        def backward(g):
            da = np.zeros_like(a.data)
            da[idx, np.arange(a.cols)] = g[0, :]
            self._accum(a, da)

        return self._emit(a.data.max(axis=0, keepdims=True), backward)

    # -- backward pass ----------------------------------------------------------

    def backward(self, loss: Tensor):
        """Accumulate dLoss/dLeaf into every reachable tensor with requires_grad.

        Intermediate (op-output) grads are consumed and cleared as the tape
        unwinds, so a second backward call adds a fresh contribution to the
        leaf grads instead of compounding stale intermediate state.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
        self._accum(loss, np.ones((1, 1), dtype=loss.data.dtype))
        for rec in reversed(self._records):
            g = rec.out.grad
            if g is None:
                continue
            rec.out.grad = None
            rec.backward(g)
