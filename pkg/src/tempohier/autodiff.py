"""Define-by-run reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records every operation whose inputs include at least one
tracked tensor. Tensors without a tape node (constants and detached values)
never receive gradient. All arithmetic is float64.

Typical use::

    tape = Tape()
    w = tape.leaf(np.ones(3))
    loss = sum_(w * w)
    grads = backward(loss, tape)
    grads[w.node]  # -> array([2., 2., 2.])
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self) -> None:
        self.ops: list[tuple[int, tuple[Tensor, ...], BackwardFn]] = []
        self._next = 0

    def _new_node(self) -> int:
        node = self._next
        self._next += 1
        return node

    def leaf(self, values, name: str | None = None) -> Tensor:
        """Register a trainable input (parameter or variable)."""
        return Tensor(np.array(values, dtype=np.float64), node=self._new_node(), tape=self)

    def record(self, values: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
        out = Tensor(values, node=self._new_node(), tape=self)
        self.ops.append((out.node, tuple(inputs), fn))
        return out

    def __len__(self) -> int:
        return len(self.ops)


class Tensor:
    """An n-dimensional float64 array, optionally tracked on a tape."""

    __slots__ = ("values", "node", "tape")
    __array_priority__ = 100

    def __init__(self, values, node: int | None = None, tape: Tape | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def tracked(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor({self.values!r}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, inputs: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(values)
    return tape.record(values, inputs, fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values + b.values

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values - b.values

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values * b.values

    def fn(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _make(out, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.values / b.values

    def fn(g):
        ga = g / b.values
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.values, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.values * a.values, (a,), lambda g: (2.0 * a.values * g,))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axis mismatch: left axis {a.ndim - 1} has {a.shape[-1]}, "
            f"right axis {b.ndim - 2} has {b.shape[-2]}"
        )
    out = a.values @ b.values

    def fn(g):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), fn)


def linear(x, W, b) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2:
        raise DimensionError(f"weight must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"linear: input axis {x.ndim - 1} has {x.shape[-1]} features, weight axis 0 has {W.shape[0]}"
        )
    if b.shape != (W.shape[1],):
        raise DimensionError(f"linear: bias axis 0 has {b.shape}, expected ({W.shape[1]},)")
    xv = x.values
    out = xv @ W.values + b.values
    din, dout = W.shape

    def fn(g):
        gx = g @ W.values.T
        gW = xv.reshape(-1, din).T @ g.reshape(-1, dout)
        gb = g.reshape(-1, dout).sum(axis=0)
        return gx, gW, gb

    return _make(out, (x, W, b), fn)


# -- reductions and shape ops ---------------------------------------------


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.values, axis=axis, keepdims=keepdims)
    shape = x.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.values.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return _make(x.values.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.values, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.values for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def fn(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, xs, fn)


def index(x, key) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = as_tensor(x)
    out = x.values[key]
    shape = x.shape

    def fn(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _make(np.array(out), (x,), fn)


def take_rows(table, idx) -> Tensor:
    """Embedding lookup: ``table[idx]`` with scatter-add backward."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = table.values[idx]

    def fn(g):
        full = np.zeros(table.shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(out, (table,), fn)


def detach(x) -> Tensor:
    """Value-identical copy with no tape node; gradient never flows through."""
    return Tensor(np.array(as_tensor(x).values))


# -- elementwise -----------------------------------------------------------

_SHIFT_CUTOFF = 10.0
# Stirling series coefficients B_{2n} / (2n (2n-1))
_LGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
# Asymptotic digamma coefficients B_{2n} / (2n)
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _shift_up(x: np.ndarray):
    z = np.array(x, dtype=np.float64, copy=True)
    mask = z < _SHIFT_CUTOFF
    steps = []
    while mask.any():
        steps.append((mask, z.copy()))
        z = np.where(mask, z + 1.0, z)
        mask = z < _SHIFT_CUTOFF
    return z, steps


def lgamma_values(x) -> np.ndarray:
    """log Gamma(x) for x > 0 via recurrence shift and the Stirling series."""
    x = np.asarray(x, dtype=np.float64)
    z, steps = _shift_up(x)
    acc = np.zeros_like(z)
    for mask, zi in steps:
        acc = acc + np.where(mask, np.log(np.where(mask, zi, 1.0)), 0.0)
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEF):
        series = series * inv2 + c
    return (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series * inv - acc


def digamma_values(x) -> np.ndarray:
    """psi(x) for x > 0 via recurrence shift and the asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    z, steps = _shift_up(x)
    acc = np.zeros_like(z)
    for mask, zi in steps:
        acc = acc + np.where(mask, 1.0 / np.where(mask, zi, 1.0), 0.0)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_DIGAMMA_COEF):
        series = series * inv2 + c
    return np.log(z) - 0.5 / z - series * inv2 - acc


def _first_bad(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.values > 0
    return _make(np.where(pos, x.values, 0.0), (x,), lambda g: (g * pos,))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.values)

    def fn(g):
        return (g * np.exp(x.values - out),)  # sigmoid(x)

    return _make(out, (x,), fn)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.values)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    bad = ~(x.values > 0)
    if bad.any():
        raise DomainError(f"log requires positive input; element {_first_bad(bad)} is {x.values[bad][0]}")
    return _make(np.log(x.values), (x,), lambda g: (g / x.values,))


def lgamma(x) -> Tensor:
    x = as_tensor(x)
    bad = ~(x.values > 0)
    if bad.any():
        raise DomainError(
            f"log-gamma requires positive input; element {_first_bad(bad)} is {x.values[bad][0]}"
        )
    return _make(lgamma_values(x.values), (x,), lambda g: (g * digamma_values(x.values),))


ELEMENTWISE = {
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "lgamma": lgamma,
    "log-gamma": lgamma,
}


def elementwise(kind: str, x) -> Tensor:
    try:
        op = ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {kind!r}") from None
    return op(x)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: last axis has {d}, gain {gain.shape}, bias {bias.shape}"
        )
    if eps < 0:
        raise ContractError("layer_norm eps must be non-negative")
    mu = x.values.mean(axis=-1, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.values + bias.values

    def fn(g):
        lead = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=lead)
        gbias = g.sum(axis=lead)
        dy = g * gain.values
        gx = inv * (
            dy - dy.mean(axis=-1, keepdims=True) - xhat * (dy * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), fn)


def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    if not train or rate <= 0.0:
        return as_tensor(x)
    if rng is None:
        raise ContractError("dropout in train mode needs a random generator")
    keep = rng.random(as_tensor(x).shape) >= rate
    return mul(x, keep / (1.0 - rate))


# -- backward --------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Accumulate d loss / d node for every node reachable backward from ``loss``."""
    if loss.values.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape or loss.node is None:
        raise ContractError("loss is not recorded on this tape")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.values)}
    for out_node, inputs, fn in reversed(tape.ops):
        g = grads.get(out_node)
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if t.node is None or gi is None:
                continue
            prev = grads.get(t.node)
            grads[t.node] = gi if prev is None else prev + gi
    return grads


def gradients_for(grads: dict[int, np.ndarray], tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Pick gradients for named leaves; unreachable leaves get zeros."""
    return {
        name: grads[t.node] if t.node in grads else np.zeros(t.shape)
        for name, t in tensors.items()
    }
