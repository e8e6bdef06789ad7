"""Dense float64 tensors with a recorded tape for reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active on the
current thread and at least one input requires a gradient, the operation is
appended to the tape together with a closure computing the vector-Jacobian
product. ``Tape.backward`` replays the tape in reverse.

Outside an active tape every operation is a plain numpy computation; this is
how inference and frozen feature extraction run.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptySequenceError, TokenIndexError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape() -> Iterator[None]:
    """Suspend recording on this thread (frozen extraction, evaluation)."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._recorded = False

    @classmethod
    def param(cls, data, name: str | None = None) -> Tensor:
        """A trainable leaf with a zero-initialized gradient buffer."""
        t = cls(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _raise_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _IndexedGrad:
    """Gradient addressed to a sub-region of an input (slicing/gather)."""

    __slots__ = ("key", "value", "fancy")

    def __init__(self, key, value, fancy):
        self.key, self.value, self.fancy = key, value, fancy


class Tape:
    """Ordered record of operations for one forward/backward pass.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded if any input requires a gradient.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._done = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        if self._done:
            raise ContractError("tape already consumed by backward(); call reset() first")
        out.requires_grad = True
        out._recorded = True
        self.nodes.append((out, inputs, vjp))

    def reset(self) -> None:
        self.nodes = []
        self._done = False

    def backward(self, loss: Tensor) -> None:
        if self._done:
            raise ContractError("backward() already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss._recorded:
            raise ContractError("loss was not produced on this tape")
        for out, _, _ in self.nodes:
            out.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, inputs, vjp in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if isinstance(gi, _IndexedGrad):
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    if gi.fancy:
                        np.add.at(inp.grad, gi.key, gi.value)
                    else:
                        inp.grad[gi.key] += gi.value
                elif inp.grad is None:
                    # copy: vjps may hand the same array to several inputs
                    inp.grad = np.array(gi, dtype=np.float64, copy=True).reshape(inp.data.shape)
                else:
                    inp.grad += gi
        self._done = True


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate gradients of every requires_grad ancestor of ``loss``."""
    tape = tape or active_tape()
    if tape is None:
        raise ContractError("no active tape to differentiate through")
    tape.backward(loss)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._recorded = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, vjp)
    return out


# ---------------------------------------------------------------- arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]``; leading axes of ``a`` are treated as rows."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def vjp(g):
        ga = g @ B.T
        gb = A.reshape(-1, A.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit(A @ B, (a, b), vjp)


def _check_bias(a: Tensor, b: Tensor, op: str) -> bool:
    """True when ``b`` is a bias vector broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    bias = _check_bias(a, b, "add")

    if bias:
        def vjp(g):
            return g, g.reshape(-1, g.shape[-1]).sum(axis=0)
    else:
        def vjp(g):
            return g, g

    return _emit(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def one_minus(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _emit(1.0 - a.data, (a,), lambda g: (-g,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _emit(t, (a,), lambda g: (g * (1.0 - t * t),))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "one_minus": one_minus,
    "add": add,
    "sub": sub,
    "mul": mul,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ----------------------------------------------------------------- structure


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis; backward splits the gradient."""
    parts = [as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat: leading dimensions differ: {parts[0].shape} vs {p.shape}"
            )
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def vjp(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    data = np.concatenate([p.data for p in parts], axis=-1)
    return _emit(data, tuple(parts), vjp)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise EmptySequenceError("stack of zero tensors")
    shape = parts[0].shape
    for p in parts[1:]:
        if p.shape != shape:
            raise DimensionError(f"stack: shapes {shape} and {p.shape} differ")
    return _emit(np.stack([p.data for p in parts]), tuple(parts), lambda g: tuple(g))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _emit(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_fancy(key) -> bool:
    if isinstance(key, tuple):
        return any(_is_fancy(k) for k in key)
    return isinstance(key, (list, np.ndarray))


def getitem(a: Tensor, key) -> Tensor:
    """numpy indexing; integer-array keys gather rows and scatter-add back."""
    a = as_tensor(a)
    fancy = _is_fancy(key)
    try:
        data = a.data[key]
    except IndexError as exc:
        raise TokenIndexError(str(exc)) from None
    if fancy:
        data = data.copy()
    return _emit(data, (a,), lambda g: (_IndexedGrad(key, g, fancy),))


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise select: rows of ``a`` where ``mask`` is true, else rows of ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"where: shapes {a.shape} and {b.shape} differ")
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape[: m.ndim]:
        raise DimensionError(f"where: mask {m.shape} does not index rows of {a.shape}")
    m = m.reshape(m.shape + (1,) * (a.ndim - m.ndim))
    return _emit(np.where(m, a.data, b.data), (a, b),
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


# ---------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def row_sum(a: Tensor) -> Tensor:
    """Sum over the last axis."""
    a = as_tensor(a)
    return _emit(a.data.sum(axis=-1), (a,), lambda g: (np.repeat(g[..., None], a.shape[-1], axis=-1),))


def max_over_time(states: Tensor, lengths=None) -> Tensor:
    """Elementwise maximum over axis 0.

    ``states`` is ``[T, d]`` or, batched, ``[T, B, d]`` with per-row
    ``lengths``; timesteps at or beyond a row's length are ignored. Ties go
    to the earliest timestep.
    """
    states = as_tensor(states)
    if states.ndim == 0 or states.shape[0] == 0:
        raise EmptySequenceError("max_over_time over zero timesteps")
    x = states.data
    if lengths is not None:
        lengths = np.asarray(lengths)
        if states.ndim != 3 or lengths.shape != (x.shape[1],):
            raise DimensionError(
                f"max_over_time: lengths {lengths.shape} do not match states {x.shape}"
            )
        if np.any(lengths < 1):
            raise EmptySequenceError("max_over_time: a row has zero valid timesteps")
        valid = np.arange(x.shape[0])[:, None] < lengths[None, :]
        x = np.where(valid[:, :, None], x, -np.inf)
    idx = np.argmax(x, axis=0)
    out = np.take_along_axis(x, idx[None], axis=0)[0]
    shape = states.shape

    def vjp(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx[None], g[None], axis=0)
        return (full,)

    return _emit(out, (states,), vjp)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    # log1p over the non-max terms keeps tiny losses accurate
    arg = z.argmax(axis=-1)[..., None]
    shifted = z - np.take_along_axis(z, arg, axis=-1)
    rest = np.exp(shifted)
    np.put_along_axis(rest, arg, 0.0, axis=-1)
    return shifted - np.log1p(rest.sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Summed ``-log softmax(logits)[target]``.

    ``logits`` is ``[V]`` with an integer target, or ``[N, V]`` with ``N``
    integer targets.
    """
    logits = as_tensor(logits)
    z = logits.data
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    t = np.atleast_1d(np.asarray(target))
    if t.dtype.kind not in "iu":
        raise TokenIndexError(f"targets must be integers, got dtype {t.dtype}")
    V = z2.shape[-1]
    if z2.ndim != 2 or t.shape != (z2.shape[0],):
        raise DimensionError(f"cross entropy: logits {z.shape} vs targets {t.shape}")
    if np.any(t < 0) or np.any(t >= V):
        raise TokenIndexError(f"target id out of range [0, {V})")
    logp = _log_softmax(z2)
    rows = np.arange(len(t))
    loss = -logp[rows, t].sum()

    def vjp(g):
        grad = np.exp(logp)
        grad[rows, t] -= 1.0
        grad *= float(g)
        return (grad[0] if single else grad,)

    return _emit(np.array(loss), (logits,), vjp)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean of ``-[y log s + (1-y) log(1-s)]`` with ``s = sigmoid(logit)``."""
    logits = as_tensor(logits)
    z = logits.data
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise DimensionError(f"bce: logits {z.shape} vs labels {y.shape}")
    if z.size == 0:
        raise ContractError("bce over an empty batch")
    # log(1+exp(-|z|)) form is stable for both signs
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    s = _sigmoid(z)
    return _emit(np.array(per.mean()), (logits,), lambda g: ((s - y) * (float(g) / n),))


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()
