"""Minimal dense tensors with tape-based reverse-mode differentiation.

Every op is a pure function returning a new :class:`Tensor`. When a
:class:`GradTape` is active (``with GradTape() as tape:``) each op appends a
record holding its operands, its result and a vector-Jacobian product, so
:func:`backward` can replay the tape in reverse.

Shapes are checked eagerly. Broadcasting is limited to leading batch axes:
an operand of shape ``(d,)`` may combine with one of shape ``(..., L, d)``,
and a rank-2 weight may right-multiply a batched activation.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

# Masked logits carry this value; softmax_rows gives them exactly zero
# probability. Anything at or below half of it counts as masked.
MASK_SENTINEL = -1e30
_MASK_THRESHOLD = MASK_SENTINEL / 2


class DimensionError(ValueError):
    pass


class RankError(ValueError):
    pass


class InvalidMaskError(ValueError):
    pass


class Tensor:
    """Dense float64 array plus shape metadata.

    Hashing and equality are by identity so tensors can key gradient maps.
    """

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if np.isscalar(value):
        return Tensor(np.full(like.shape, float(value)))
    return Tensor(value)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# --------------------------------------------------------------------------
# tape

_state = threading.local()


def _active_tape() -> "GradTape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of primitive ops executed while the tape is active.

    One tape per forward pass and per thread; tapes nest, innermost wins.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def leaves(self) -> list[Tensor]:
        """Tensors consumed on the tape but never produced by it, in first-use order."""
        produced = {id(out) for out, _, _ in self.records}
        seen: set[int] = set()
        found = []
        for _, inputs, _ in self.records:
            for t in inputs:
                if id(t) not in produced and id(t) not in seen:
                    seen.add(id(t))
                    found.append(t)
        return found


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if not np.isfinite(arr).all():
        raise FloatingPointError("non-finite values produced by tensor op")
    out = Tensor._wrap(arr)
    tape = _active_tape()
    if tape is not None:
        tape.records.append((out, inputs, vjp))
    return out


def backward(
    loss: Tensor, tape: GradTape, wrt: Iterable[Tensor] | None = None
) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``loss`` for each leaf on ``tape`` (or each of ``wrt``).

    Leaves that the loss does not depend on get a zero gradient.
    """
    if loss.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape.records):
        g = grads.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    targets = tape.leaves() if wrt is None else list(wrt)
    result = {}
    for t in targets:
        g = grads.get(id(t))
        result[t] = Tensor(np.zeros(t.shape) if g is None else g)
    return result


# --------------------------------------------------------------------------
# shape helpers


def _suffix_compatible(big: tuple[int, ...], small: tuple[int, ...]) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if not (_suffix_compatible(a.shape, b.shape) or _suffix_compatible(b.shape, a.shape)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# --------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "add")
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "sub")
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_elementwise(a, b, "mul")
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` over the last two axes.

    ``b`` is either rank 2 (shared across a's batch axes) or has exactly
    a's leading axes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ for {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _emit(a.data @ b.data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes. The result is a materialized copy."""
    if a.ndim < 2:
        raise RankError(f"transpose needs rank >= 2, got shape {a.shape}")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    return _emit(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction.

    Entries at or below ``MASK_SENTINEL / 2`` get probability exactly 0 and
    zero gradient. A row with every entry masked is rejected.
    """
    if a.ndim < 2:
        raise RankError(f"softmax_rows needs rank >= 2, got shape {a.shape}")
    masked = a.data <= _MASK_THRESHOLD
    if masked.any():
        if masked.all(axis=-1).any():
            raise InvalidMaskError("softmax row has every entry masked")
        live = np.where(masked, -np.inf, a.data)
        shifted = live - live.max(axis=-1, keepdims=True)
        e = np.where(masked, 0.0, np.exp(shifted))
    else:
        e = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _emit(p, (a,), vjp)


def mask_fill(a: Tensor, mask: np.ndarray, value: float = MASK_SENTINEL) -> Tensor:
    """Replace entries where ``mask`` is true; masked entries pass no gradient.

    ``mask`` must match the trailing axes of ``a``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not _suffix_compatible(a.shape, mask.shape):
        raise DimensionError(f"mask_fill: mask {mask.shape} does not fit {a.shape}")
    return _emit(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),))


def concat_last_axis(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last_axis: leading shapes differ for {a.shape} and {b.shape}")
    p = a.shape[-1]
    return _emit(
        np.concatenate([a.data, b.data], axis=-1),
        (a, b),
        lambda g: (g[..., :p], g[..., p:]),
    )


def concat_many(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate several tensors along the last axis in one op."""
    if not parts:
        raise DimensionError("concat_many needs at least one tensor")
    lead = parts[0].shape[:-1]
    for t in parts[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat_many: leading shapes differ ({lead} vs {t.shape[:-1]})")
    bounds = np.cumsum([0] + [t.shape[-1] for t in parts])

    def vjp(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _emit(np.concatenate([t.data for t in parts], axis=-1), tuple(parts), vjp)


def slice_last_axis(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[-1]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for last axis {n}")

    def vjp(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return _emit(np.ascontiguousarray(a.data[..., start:stop]), (a,), vjp)


def split_last_axis(a: Tensor, at: int) -> tuple[Tensor, Tensor]:
    return slice_last_axis(a, 0, at), slice_last_axis(a, at, a.shape[-1])


def total(a: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _emit(a.data.mean(axis=axis), (a,), vjp)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _emit(out, (a,), vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatters back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise RankError(f"embedding table must be rank 2, got {table.shape}")

    def vjp(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _emit(table.data[ids], (table,), vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _emit(np.asarray(loss), (logits,), vjp)


# --------------------------------------------------------------------------
# finite differences


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, step: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f`` at ``x``; ``x`` is left unchanged."""
    if step <= 0:
        raise ValueError("step must be positive")
    base = x.data
    flat = base.reshape(-1)
    grad = np.zeros(flat.shape)

    def ev(v: np.ndarray) -> float:
        y = f(Tensor(v.reshape(base.shape)))
        return y.item() if isinstance(y, Tensor) else float(y)

    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + step
        up = ev(probe)
        probe[i] = flat[i] - step
        down = ev(probe)
        grad[i] = (up - down) / (2 * step)
    return Tensor(grad.reshape(base.shape))


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``.

    Where both magnitudes are below ``floor`` the plain absolute difference
    is used instead.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.shape != n.shape:
        raise DimensionError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    diff = np.abs(a - n)
    denom = np.maximum(np.abs(a), np.abs(n))
    tiny = denom < floor
    rel = np.where(tiny, diff, diff / np.where(tiny, 1.0, denom))
    return float(rel.max())
