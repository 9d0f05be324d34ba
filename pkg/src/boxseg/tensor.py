"""Small reverse-mode autodiff kernel on top of numpy.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs requires a gradient. ``Tape.backward`` walks the record in reverse.
With no active tape (or inside :func:`no_grad`) nothing is recorded, which is
how the teacher network runs.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "no_grad", "ShapeError", "grad_check",
    "add", "sub", "mul", "div", "scale", "relu", "sigmoid", "softplus", "sin", "cos",
    "elementwise", "matmul", "transpose", "rowwise_softmax", "log_softmax",
    "reduce", "rows", "cols", "layer_norm",
]


class ShapeError(ValueError):
    pass


class Tensor:
    """A numpy array that can take part in gradient recording."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, _wrap(other, self))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


class Tape:
    """Ordered record of executed operations.

    Used as a context manager; nested tapes shadow the outer one.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.records.append((out, inputs, backward))

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
                t.grad = g.copy() if t.grad is None else t.grad + g


_TAPES: list[Tape | None] = []


@contextlib.contextmanager
def no_grad():
    _TAPES.append(None)
    try:
        yield
    finally:
        _TAPES.pop()


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    tape = _TAPES[-1] if _TAPES else None
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        tape.record(out, inputs, backward)
    return out


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    # leading-dimension broadcast: a row vector against a matrix, or a scalar
    for big, small in ((sa, sb), (sb, sa)):
        if int(np.prod(small)) == 1:
            return big
        if len(big) >= 2 and (small == big[1:] or small == (1,) + big[1:]):
            return big
    raise ShapeError(f"shapes {sa} and {sb} are not broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    return g.sum(axis=0).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _result(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1 - s),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(a)), stable for large |a|."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _result(out, (a,), lambda g: (g * _sigmoid(x),))


def sin(a: Tensor) -> Tensor:
    return _result(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a: Tensor) -> Tensor:
    return _result(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "softplus": softplus, "sin": sin, "cos": cos}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name; ``scale`` takes a python number as ``b``."""
    if kind == "scale":
        return scale(a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, _wrap(b, a))
    raise ValueError(f"unknown elementwise op {kind!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,))


def _check_finite(a: Tensor, what: str):
    if not np.all(np.isfinite(a.data)):
        raise FloatingPointError(f"{what}: non-finite input")


def rowwise_softmax(a: Tensor) -> Tensor:
    _check_finite(a, "rowwise_softmax")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)
    return _result(s, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    _check_finite(a, "log_softmax")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _result(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def reduce(kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    """Reductions: ``sum``, ``mean``, ``l1`` (sum of |x|) and ``sql2`` (sum of x^2)."""
    x = a.data
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise ShapeError(f"axis {axis} invalid for shape {a.shape}")
    count = x.size if axis is None else x.shape[axis]

    def expand(g):
        return g if axis is None else np.expand_dims(g, axis)

    if kind == "sum":
        out = x.sum(axis=axis)
        back = lambda g: (np.broadcast_to(expand(g), x.shape),)
    elif kind == "mean":
        if count == 0:
            raise ValueError("mean over an empty selection")
        out = x.mean(axis=axis)
        back = lambda g: (np.broadcast_to(expand(g), x.shape) / count,)
    elif kind in ("l1", "l1-norm"):
        out = np.abs(x).sum(axis=axis)
        back = lambda g: (expand(g) * np.sign(x),)
    elif kind in ("sql2", "squared-l2-norm"):
        out = (x * x).sum(axis=axis)
        back = lambda g: (expand(g) * 2 * x,)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _result(np.asarray(out, dtype=x.dtype), (a,), back)


def rows(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]`` (``idx`` may be an int array or a slice)."""
    if isinstance(idx, slice):
        sel = idx
    else:
        sel = np.asarray(idx, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        if isinstance(sel, slice):
            full[sel] = g
        else:
            np.add.at(full, sel, g)
        return (full,)
    return _result(a.data[sel].copy(), (a,), back)


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)
    return _result(a.data[:, start:stop].copy(), (a,), back)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean and unit variance (no affine part)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)
    return _result(y.astype(x.dtype), (a,), back)


def grad_check(f: Callable[..., Tensor], x, step: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` is a Tensor or a sequence of Tensors; ``f`` receives them as
    positional arguments and must return a scalar Tensor. Error per
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    xs: Sequence[Tensor] = [x] if isinstance(x, Tensor) else list(x)
    if step <= 0:
        raise ValueError("step must be positive")
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*xs)
        if out.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
        tape.backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    worst = 0.0
    with no_grad():
        for t, an in zip(xs, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f(*xs).data)
                flat[i] = orig - step
                fm = float(f(*xs).data)
                flat[i] = orig
                num = (fp - fm) / (2 * step)
                err = abs(an.reshape(-1)[i] - num) / max(1.0, abs(num))
                worst = max(worst, err)
    return worst
