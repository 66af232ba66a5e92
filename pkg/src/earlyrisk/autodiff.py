"""Minimal reverse-mode differentiation over dense fp64 matrices.

Values are 2-D ``Tensor``s backed by numpy arrays. Operations execute
eagerly; while a ``Tape`` is active (``with Tape() as tape:``) every
operation appends a backward closure to it, and ``backward(tape, loss)``
replays the closures in exact reverse order to accumulate gradients.

There is no broadcasting beyond bias rows, no fusion, no dtype besides
float64. Tapes are thread-local: distinct tapes may run on distinct
threads, one tape is single-threaded.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "set_checked",
    "checked_mode",
    "backward",
    "grad_check",
    "affine",
    "matmul",
    "causal_conv1d",
    "activation",
    "sigmoid",
    "tanh",
    "elementwise",
    "add",
    "mul",
    "masked_softmax",
    "add_rowvec",
    "scale_shift",
    "mul_const",
    "log",
    "clamp",
    "sum_all",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
]

_uid_counter = itertools.count()
_TLS = threading.local()

# Checked mode validates finiteness at Tensor creation. Shape checks are
# always on (they are cheap and guard real contract violations).
_CHECKED = True


def set_checked(flag: bool) -> bool:
    """Toggle NaN/Inf validation at Tensor creation; returns previous value."""
    global _CHECKED
    previous = _CHECKED
    _CHECKED = bool(flag)
    return previous


class checked_mode:
    """Context manager form of :func:`set_checked`."""

    def __init__(self, flag: bool):
        self.flag = flag

    def __enter__(self):
        self._previous = set_checked(self.flag)
        return self

    def __exit__(self, *exc):
        set_checked(self._previous)
        return False


class Tensor:
    """A 2-D float64 value. Construction coerces 0-D/1-D input to 2-D."""

    __slots__ = ("data", "uid")

    def __init__(self, data):
        arr = np.atleast_2d(np.asarray(data, dtype=np.float64))
        if arr.ndim != 2:
            raise ShapeError(f"Tensor must be 2-D, got shape {arr.shape}")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if _CHECKED and not np.isfinite(arr).all():
            raise ValueError("non-finite value in Tensor (checked mode)")
        self.data = arr
        self.uid = next(_uid_counter)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Fast path for op outputs: arr is already a fresh 2-D fp64 array.
        out = cls.__new__(cls)
        out.data = arr
        out.uid = next(_uid_counter)
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of primitive applications for one backward pass."""

    __slots__ = ("_records",)

    def __init__(self):
        # (output uid, backward closure); appended in execution order,
        # which is a topological order by construction.
        self._records: list[tuple[int, Callable]] = []

    def __enter__(self) -> "Tape":
        if getattr(_TLS, "tape", None) is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _TLS.tape = self
        return self

    def __exit__(self, *exc):
        _TLS.tape = None
        return False

    def __len__(self):
        return len(self._records)


class Gradients:
    """Gradient lookup produced by :func:`backward`.

    Parameters that did not influence the loss get a zero gradient.
    """

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def of(self, tensor: Tensor) -> np.ndarray:
        g = self._table.get(tensor.uid)
        if g is None:
            return np.zeros_like(tensor.data)
        return g


def _acc(grads: dict, uid: int, val: np.ndarray) -> None:
    cur = grads.get(uid)
    # `+` (not `+=`): stored arrays may be views shared with other slots.
    grads[uid] = val if cur is None else cur + val


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Reverse-mode sweep from a recorded scalar loss."""
    if loss.data.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got shape {loss.data.shape}")
    records = tape._records
    if not any(out == loss.uid for out, _ in records):
        raise ValueError("loss is not an output recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones((1, 1))}
    for out_uid, back in reversed(records):
        g = grads.pop(out_uid, None)
        if g is not None:
            back(g, grads)
    return Gradients(grads)


def _active() -> Tape | None:
    return getattr(_TLS, "tape", None)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(x: Tensor, w: Tensor) -> Tensor:
    xd, wd = x.data, w.data
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree: {xd.shape} x {wd.shape}")
    out = Tensor._wrap(xd @ wd)
    tape = _active()
    if tape is not None:
        xu, wu = x.uid, w.uid

        def back(g, grads):
            _acc(grads, xu, g @ wd.T)
            _acc(grads, wu, xd.T @ g)

        tape._records.append((out.uid, back))
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b, with b a 1 x m row broadcast over the rows of x @ w."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"affine: inner dims disagree: {xd.shape} x {wd.shape}")
    if bd.shape != (1, wd.shape[1]):
        raise ShapeError(
            f"affine: bias must be 1x{wd.shape[1]}, got shape {bd.shape}"
        )
    out = Tensor._wrap(xd @ wd + bd)
    tape = _active()
    if tape is not None:
        xu, wu, bu = x.uid, w.uid, b.uid

        def back(g, grads):
            _acc(grads, xu, g @ wd.T)
            _acc(grads, wu, xd.T @ g)
            _acc(grads, bu, g.sum(axis=0, keepdims=True))

        tape._records.append((out.uid, back))
    return out


def causal_conv1d(x: Tensor, kernel: Sequence[Tensor], b: Tensor) -> Tensor:
    """Causal 1-D convolution over the rows (time axis) of x.

    ``kernel[j]`` is the n x m weight for lag j, so
    ``y[t] = sum_j x[t - j] @ kernel[j] + b`` with zero rows used for t - j
    before the first frame. ``len(kernel)`` may exceed the sequence length.
    """
    k = len(kernel)
    if k < 1:
        raise ShapeError(f"causal_conv1d: kernel width must be >= 1, got {k}")
    xd, bd = x.data, b.data
    n = xd.shape[1]
    m = kernel[0].data.shape[1]
    for j, wj in enumerate(kernel):
        if wj.data.shape != (n, m):
            raise ShapeError(
                f"causal_conv1d: lag {j} weight has shape {wj.data.shape}, "
                f"expected {(n, m)}"
            )
    if bd.shape != (1, m):
        raise ShapeError(f"causal_conv1d: bias must be 1x{m}, got {bd.shape}")
    T = xd.shape[0]
    acc = xd @ kernel[0].data
    for j in range(1, min(k, T)):
        acc[j:] += xd[: T - j] @ kernel[j].data
    out = Tensor._wrap(acc + bd)
    tape = _active()
    if tape is not None:
        xu, bu = x.uid, b.uid
        wds = [wj.data for wj in kernel]
        wus = [wj.uid for wj in kernel]

        def back(g, grads):
            dx = g @ wds[0].T
            for j in range(1, min(k, T)):
                dx[: T - j] += g[j:] @ wds[j].T
            _acc(grads, xu, dx)
            _acc(grads, wus[0], xd.T @ g)
            for j in range(1, k):
                if j < T:
                    _acc(grads, wus[j], xd[: T - j].T @ g[j:])
                else:
                    _acc(grads, wus[j], np.zeros_like(wds[j]))
            _acc(grads, bu, g.sum(axis=0, keepdims=True))

        tape._records.append((out.uid, back))
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    xd = x.data
    if kind == "sigmoid":
        # 0.5 * (1 + tanh(x / 2)): overflow-free and exact at 0.
        y = np.tanh(0.5 * xd)
        y += 1.0
        y *= 0.5
    elif kind == "tanh":
        y = np.tanh(xd)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    out = Tensor._wrap(y)
    tape = _active()
    if tape is not None:
        xu = x.uid
        if kind == "sigmoid":

            def back(g, grads):
                _acc(grads, xu, g * (y * (1.0 - y)))

        else:

            def back(g, grads):
                _acc(grads, xu, g * (1.0 - y * y))

        tape._records.append((out.uid, back))
    return out


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"elementwise: shapes disagree: {ad.shape} vs {bd.shape}")
    if kind == "add":
        out = Tensor._wrap(ad + bd)
    elif kind == "mul":
        out = Tensor._wrap(ad * bd)
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    tape = _active()
    if tape is not None:
        au, bu = a.uid, b.uid
        if kind == "add":

            def back(g, grads):
                _acc(grads, au, g)
                _acc(grads, bu, g)

        else:

            def back(g, grads):
                _acc(grads, au, g * bd)
                _acc(grads, bu, g * ad)

        tape._records.append((out.uid, back))
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "mul")


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the unmasked entries of a K x 1 score column.

    Masked entries get weight zero; the unmasked weights sum to 1.
    With every entry masked, the result is all-zeros.
    """
    sd = scores.data
    if sd.shape[1] != 1:
        raise ShapeError(f"masked_softmax: scores must be Kx1, got {sd.shape}")
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if m.shape[0] != sd.shape[0]:
        raise ShapeError(
            f"masked_softmax: mask length {m.shape[0]} != K {sd.shape[0]}"
        )
    all_unmasked = bool(m.all())
    if all_unmasked:
        e = np.exp(sd - sd.max())
        out_data = e / e.sum()
    else:
        out_data = np.zeros_like(sd)
        if m.any():
            z = sd[m, 0]
            e = np.exp(z - z.max())
            out_data[m, 0] = e / e.sum()
    out = Tensor._wrap(out_data)
    tape = _active()
    if tape is not None:
        su = scores.uid
        if all_unmasked:
            w = out_data

            def back(g, grads):
                _acc(grads, su, w * (g - float(g[:, 0] @ w[:, 0])))

        else:
            w = out_data[m, 0].copy() if m.any() else None

            def back(g, grads):
                ds = np.zeros_like(sd)
                if w is not None:
                    gm = g[m, 0]
                    ds[m, 0] = w * (gm - float(gm @ w))
                _acc(grads, su, ds)

        tape._records.append((out.uid, back))
    return out


def add_rowvec(x: Tensor, row: Tensor) -> Tensor:
    """x + row with row a 1 x C bias broadcast over the rows of x."""
    xd, rd = x.data, row.data
    if rd.shape != (1, xd.shape[1]):
        raise ShapeError(
            f"add_rowvec: row must be 1x{xd.shape[1]}, got shape {rd.shape}"
        )
    out = Tensor._wrap(xd + rd)
    tape = _active()
    if tape is not None:
        xu, ru = x.uid, row.uid

        def back(g, grads):
            _acc(grads, xu, g)
            _acc(grads, ru, g.sum(axis=0, keepdims=True))

        tape._records.append((out.uid, back))
    return out


def scale_shift(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift with python-float constants."""
    out = Tensor._wrap(scale * x.data + shift)
    tape = _active()
    if tape is not None:
        xu = x.uid

        def back(g, grads):
            _acc(grads, xu, g * scale)

        tape._records.append((out.uid, back))
    return out


def mul_const(x: Tensor, c) -> Tensor:
    """Elementwise product with a constant (non-differentiated) array."""
    cd = np.asarray(c, dtype=np.float64)
    if cd.ndim == 2 and cd.shape != x.data.shape:
        raise ShapeError(f"mul_const: shapes disagree: {x.data.shape} vs {cd.shape}")
    out = Tensor._wrap(x.data * cd)
    tape = _active()
    if tape is not None:
        xu = x.uid

        def back(g, grads):
            _acc(grads, xu, g * cd)

        tape._records.append((out.uid, back))
    return out


def log(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor._wrap(np.log(xd))
    tape = _active()
    if tape is not None:
        xu = x.uid

        def back(g, grads):
            _acc(grads, xu, g / xd)

        tape._records.append((out.uid, back))
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; gradient passes through where not clipped."""
    xd = x.data
    out = Tensor._wrap(np.clip(xd, lo, hi))
    tape = _active()
    if tape is not None:
        xu = x.uid
        inside = (xd >= lo) & (xd <= hi)

        def back(g, grads):
            _acc(grads, xu, g * inside)

        tape._records.append((out.uid, back))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.array([[x.data.sum()]]))
    tape = _active()
    if tape is not None:
        xu = x.uid
        shape = x.data.shape

        def back(g, grads):
            _acc(grads, xu, np.full(shape, g[0, 0]))

        tape._records.append((out.uid, back))
    return out


def _concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero parts")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis))
    tape = _active()
    if tape is not None:
        uids = [p.uid for p in parts]
        sizes = [p.data.shape[axis] for p in parts]

        def back(g, grads):
            start = 0
            for uid, size in zip(uids, sizes):
                if axis == 0:
                    _acc(grads, uid, g[start : start + size])
                else:
                    _acc(grads, uid, g[:, start : start + size])
                start += size

        tape._records.append((out.uid, back))
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, axis=0)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, axis=1)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    xd = x.data
    if not (0 <= start < stop <= xd.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {xd.shape}")
    out = Tensor._wrap(xd[start:stop].copy())
    tape = _active()
    if tape is not None:
        xu = x.uid
        shape = xd.shape

        def back(g, grads):
            dx = np.zeros(shape)
            dx[start:stop] = g
            _acc(grads, xu, dx)

        tape._records.append((out.uid, back))
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    xd = x.data
    if not (0 <= start < stop <= xd.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for {xd.shape}")
    out = Tensor._wrap(np.ascontiguousarray(xd[:, start:stop]))
    tape = _active()
    if tape is not None:
        xu = x.uid
        shape = xd.shape

        def back(g, grads):
            dx = np.zeros(shape)
            dx[:, start:stop] = g
            _acc(grads, xu, dx)

        tape._records.append((out.uid, back))
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor._wrap(np.ascontiguousarray(x.data.T))
    tape = _active()
    if tape is not None:
        xu = x.uid

        def back(g, grads):
            _acc(grads, xu, g.T)

        tape._records.append((out.uid, back))
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(function, inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    ``function`` must map the given tensors to a recorded 1x1 scalar.
    Error per coordinate is |analytic - numeric| / max(1e-8,
    |analytic| + |numeric|); the max over all coordinates of all inputs
    is returned.
    """
    with Tape() as tape:
        out = function(*inputs)
    if out.data.shape != (1, 1):
        raise ShapeError(
            f"grad_check needs a scalar-valued function, got shape {out.data.shape}"
        )
    grads = backward(tape, out)
    worst = 0.0
    for x in inputs:
        analytic = grads.of(x).ravel()
        flat = x.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(function(*inputs).data[0, 0])
            flat[i] = orig - h
            f_minus = float(function(*inputs).data[0, 0])
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
