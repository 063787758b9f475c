"""Reverse-mode automatic differentiation over dense 2-D float64 matrices.

A :class:`Tape` records every operation performed inside its ``with`` block in
insertion order (which is topological by construction, since an op's inputs
must already exist).  ``tape.backward(loss)`` sweeps the recorded ops in exact
reverse insertion order and accumulates gradients into parameter leaves with
``+=`` semantics; zeroing between steps is explicit via :func:`zero_grad`.

Leaves (:func:`parameter`, :func:`constant`) live outside any tape and may be
reused across many tapes, which is how training loops share weights between
minibatch steps.  Everything is float64 and strictly 2-D: batches are rows.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_LOG_FLOOR = 1e-30   # log is computed as log(max(x, floor)) so it never NaNs
_EXP_CEIL = 700.0    # exp input clamp; np.exp overflows float64 near 710


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an op's contract."""


class TapeError(RuntimeError):
    """Raised when an op runs without an active tape, or backward is misused."""


_active = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


def _current_tape() -> "Tape":
    stack = _tape_stack()
    if not stack:
        raise TapeError("no active tape; build graphs inside `with Tape():`")
    return stack[-1]


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Node:
    """A value in the computation graph plus its gradient bookkeeping.

    ``grad`` is allocated (zeros) only for parameter leaves; intermediate
    adjoints are transient and freed as the backward sweep passes them.
    """

    __slots__ = ("value", "grad", "is_param", "_parents", "_bwd", "_adj", "_tape")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Node", ...] = (),
        bwd: Callable[[np.ndarray], tuple] | None = None,
        is_param: bool = False,
        tape: "Tape | None" = None,
    ):
        self.value = value
        self.grad = np.zeros_like(value) if is_param else None
        self.is_param = is_param
        self._parents = parents
        self._bwd = bwd
        self._adj: np.ndarray | None = None
        self._tape = tape

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        kind = "param" if self.is_param else ("leaf" if self._bwd is None else "op")
        return f"Node({kind}, shape={self.value.shape})"

    # ---- graph construction ------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        self._adj = g if self._adj is None else self._adj + g

    def __matmul__(self, other: "Node") -> "Node":
        a, b = self.value, other.value
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

        def bwd(g):
            return g @ b.T, a.T @ g

        return _record(a @ b, (self, other), bwd)

    def __add__(self, other: "Node") -> "Node":
        a, b = self.value, other.value
        _check_broadcast("add", a.shape, b.shape)

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return _record(a + b, (self, other), bwd)

    def __sub__(self, other: "Node") -> "Node":
        a, b = self.value, other.value
        _check_broadcast("sub", a.shape, b.shape)

        def bwd(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return _record(a - b, (self, other), bwd)

    def __mul__(self, other) -> "Node":
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        a, b = self.value, other.value
        _check_broadcast("mul", a.shape, b.shape)

        def bwd(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return _record(a * b, (self, other), bwd)

    def __rmul__(self, other) -> "Node":
        return self.__mul__(other)

    def __neg__(self) -> "Node":
        return self.scale(-1.0)

    def scale(self, c: float) -> "Node":
        c = float(c)

        def bwd(g):
            return (g * c,)

        return _record(self.value * c, (self,), bwd)

    def exp(self) -> "Node":
        x = self.value
        out = np.exp(np.minimum(x, _EXP_CEIL))
        mask = x < _EXP_CEIL

        def bwd(g):
            return (g * out * mask,)

        return _record(out, (self,), bwd)

    def log(self) -> "Node":
        x = np.maximum(self.value, _LOG_FLOOR)

        def bwd(g):
            return (g / x,)

        return _record(np.log(x), (self,), bwd)

    def relu(self) -> "Node":
        x = self.value
        mask = x > 0

        def bwd(g):
            return (g * mask,)

        return _record(np.maximum(x, 0.0), (self,), bwd)

    def square(self) -> "Node":
        x = self.value

        def bwd(g):
            return (2.0 * x * g,)

        return _record(x * x, (self,), bwd)

    def sum(self) -> "Node":
        shape = self.value.shape

        def bwd(g):
            return (np.full(shape, g[0, 0]),)

        return _record(np.array([[self.value.sum()]]), (self,), bwd)

    def row_sum(self) -> "Node":
        shape = self.value.shape

        def bwd(g):
            return (np.broadcast_to(g, shape),)

        return _record(self.value.sum(axis=1, keepdims=True), (self,), bwd)

    def sq_frobenius(self) -> "Node":
        x = self.value

        def bwd(g):
            return (2.0 * g[0, 0] * x,)

        return _record(np.array([[np.sum(x * x)]]), (self,), bwd)

    def log_softmax_rows(self) -> "Node":
        x = self.value
        shifted = x - x.max(axis=1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        softmax = np.exp(out)

        def bwd(g):
            return (g - softmax * g.sum(axis=1, keepdims=True),)

        return _record(out, (self,), bwd)

    @property
    def T(self) -> "Node":
        def bwd(g):
            return (g.T,)

        return _record(self.value.T, (self,), bwd)


def _check_broadcast(op: str, a: tuple[int, int], b: tuple[int, int]) -> None:
    # exact match, or broadcastable rows (1xn) / columns (mx1)
    rows_ok = a[0] == b[0] or a[0] == 1 or b[0] == 1
    cols_ok = a[1] == b[1] or a[1] == 1 or b[1] == 1
    if not (rows_ok and cols_ok):
        raise ShapeError(f"{op}: operand shapes {a} and {b} do not align")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _record(value: np.ndarray, parents: tuple[Node, ...], bwd) -> Node:
    tape = _current_tape()
    node = Node(value, parents, bwd, tape=tape)
    tape._nodes.append(node)
    for p in parents:
        if p.is_param:
            tape._params[id(p)] = p
    return node


def parameter(values) -> Node:
    """A trainable leaf: gradient accumulates across backward passes.

    The value array is copied so in-place optimizer updates never mutate the
    caller's data.
    """
    return Node(_as_matrix(values).copy(), is_param=True)


def constant(values) -> Node:
    """A non-trainable leaf (input data, noise); gradients are discarded."""
    return Node(_as_matrix(values))


class Tape:
    """Ordered op record for one forward pass; context manager per step."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._params: dict[int, Node] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    @property
    def parameters(self) -> list[Node]:
        """Parameter leaves touched by ops on this tape, in first-use order."""
        return list(self._params.values())

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(param) into every parameter leaf's ``grad``.

        Visits recorded ops in exact reverse insertion order.  Intermediate
        adjoints are freed as the sweep passes; calling backward again on the
        same tape adds the same gradients once more (accumulation contract).
        """
        if loss._tape is not self:
            raise TapeError("loss node does not belong to this tape")
        if loss.value.shape != (1, 1):
            raise ShapeError(f"loss must be scalar (1x1), got {loss.value.shape}")
        loss._adj = np.ones((1, 1))
        for node in reversed(self._nodes):
            adj = node._adj
            if adj is None:
                continue
            node._adj = None
            for parent, g in zip(node._parents, node._bwd(adj)):
                if parent._bwd is None:
                    if parent.is_param:
                        parent.grad += g
                else:
                    parent._accum(g)


def zero_grad(params: Sequence[Node]) -> None:
    for p in params:
        p.grad[...] = 0.0


class Adam:
    """Adam with bias correction; state is kept per parameter position."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: list[np.ndarray] | None = None
        self._v: list[np.ndarray] | None = None

    def step(self, params: Sequence[Node]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p.value) for p in params]
            self._v = [np.zeros_like(p.value) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(params):
            g = p.grad
            self._m[i] = b1 * self._m[i] + (1 - b1) * g
            self._v[i] = b2 * self._v[i] + (1 - b2) * (g * g)
            m_hat = self._m[i] / (1 - b1 ** self.t)
            v_hat = self._v[i] / (1 - b2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    """Plain gradient step p <- p - lr * grad."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Sequence[Node]) -> None:
        for p in params:
            p.value -= self.lr * p.grad


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function, per entry."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f(x)
        x[idx] = orig - h
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad
