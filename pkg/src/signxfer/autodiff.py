"""Dense-matrix computation graph with reverse-mode differentiation.

Every value is a 2-D float64 numpy array. Only the handful of operations the
sign model needs are provided; each one records a closure that maps the
output gradient to its parents' gradients.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

CLAMP = 1e-7

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Build values without recording parents (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


class Tensor:
    """A graph node: value, accumulated gradient, producing op and parents."""

    __slots__ = ("value", "grad", "op", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = "",
                 op: str = "leaf", parents: tuple = (), backward_fn=None):
        self.value = as_matrix(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"


def _result(value: np.ndarray, op: str, parents: tuple, backward_fn) -> Tensor:
    # op outputs are already 2-D float64; skip validation
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.op = op
    out.name = ""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad, out.parents, out._backward = True, parents, backward_fn
    else:
        out.requires_grad, out.parents, out._backward = False, (), None
    return out


def constant(a) -> Tensor:
    return Tensor(a, requires_grad=False, op="const")


def parameter(a, name: str = "") -> Tensor:
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True, name=name)


# --- operations -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = a.value @ b.value

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return _result(out, "matmul", (a, b), back)


def transpose(a: Tensor) -> Tensor:
    return _result(a.value.T.copy(), "transpose", (a,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1xn row broadcast over ``a``'s rows."""
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return _result(a.value + b.value, "add", (a, b), lambda g: (g, g))
    if sb[0] == 1 and sb[1] == sa[1]:
        return _result(a.value + b.value, "add_row", (a, b),
                       lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def mean_rows(a: Tensor) -> Tensor:
    t = a.value.shape[0]
    if t == 0:
        raise ShapeError("mean_rows: empty sequence")
    out = a.value.sum(axis=0, keepdims=True) / t
    return _result(out, "mean_rows", (a,), lambda g: (np.repeat(g / t, t, axis=0),))


def window_mean_pool(a: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean over blocks of ``factor`` rows; the last block may be short."""
    t, d = a.shape
    if t == 0:
        raise ShapeError("window_mean_pool: empty sequence")
    if factor == 1:
        return a
    starts = np.arange(0, t, factor)
    counts = np.minimum(starts + factor, t) - starts
    out = np.add.reduceat(a.value, starts, axis=0) / counts[:, None]

    def back(g):
        return (np.repeat(g / counts[:, None], counts, axis=0),)

    return _result(out, "window_mean_pool", (a,), back)


def row_softmax(a: Tensor) -> Tensor:
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _result(out, "row_softmax", (a,), back)


def temporal_maxpool(a: Tensor) -> Tensor:
    """Column-wise max over rows. Ties route the gradient to the lowest row."""
    t, d = a.shape
    if t == 0:
        raise ShapeError("temporal_maxpool: empty sequence")
    idx = a.value.argmax(axis=0)
    out = a.value[idx, np.arange(d)].reshape(1, d)

    def back(g):
        ga = np.zeros((t, d))
        ga[idx, np.arange(d)] = g[0]
        return (ga,)

    return _result(out, "temporal_maxpool", (a,), back)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"vstack: column counts differ {[p.shape for p in parts]}")
    out = np.vstack([p.value for p in parts])
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(out, "vstack", tuple(parts), back)


def sum_all(a: Tensor) -> Tensor:
    return _result(np.array([[a.value.sum()]]), "sum", (a,),
                   lambda g: (np.full(a.shape, g[0, 0]),))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def bce(p, y) -> float:
    """Mean binary cross-entropy of probabilities ``p`` against binary targets ``y``."""
    p, y = as_matrix(p), as_matrix(y)
    if p.shape != y.shape:
        raise ShapeError(f"bce: shapes differ {p.shape} vs {y.shape}")
    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def sigmoid_bce(logits: Tensor, y) -> Tensor:
    """Sigmoid followed by mean BCE as one node; gradient is (p - y) / NK."""
    y = as_matrix(y)
    if logits.shape != y.shape:
        raise ShapeError(f"sigmoid_bce: shapes differ {logits.shape} vs {y.shape}")
    p = sigmoid(logits.value)
    loss = bce(p, y)
    inside = (p > CLAMP) & (p < 1.0 - CLAMP)

    def back(g):
        return (g[0, 0] * np.where(inside, p - y, 0.0) / y.size,)

    return _result(np.array([[loss]]), "sigmoid_bce", (logits,), back)


# --- backward ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate ``.grad`` on every node reachable from a scalar ``loss``.

    Parameters in ``params`` that the loss does not depend on get zero gradients.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be scalar (1x1), got {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = np.zeros(node.shape)
    reached = {id(n) for n in order}
    for p in params:
        if id(p) not in reached:
            p.grad = np.zeros(p.shape)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        for parent, g in zip(node.parents, node._backward(node.grad)):
            if parent.requires_grad:
                parent.grad = parent.grad + g


# --- Adam -------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-7
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One Adam update with L2 weight decay folded into the gradient.

    Returns new arrays; the inputs are left untouched.
    """
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    updated = {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, expected {w.shape}")
        g = g + state.weight_decay * w
        m = state.m.get(name, np.zeros_like(w))
        v = state.v.get(name, np.zeros_like(w))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        updated[name] = w - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return updated


class Adam:
    """Adam over a named set of parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 weight_decay: float = 1e-7):
        self.params = params
        self.state = AdamState(lr=lr, weight_decay=weight_decay)

    def step(self) -> None:
        values = {k: p.value for k, p in self.params.items()}
        grads = {k: (p.grad if p.grad is not None else np.zeros(p.shape))
                 for k, p in self.params.items()}
        for k, w in adam_step(values, grads, self.state).items():
            self.params[k].value = w


def numerical_gradient(f: Callable[[], float], w: np.ndarray, index: tuple[int, int],
                       h: float = 1e-5) -> float:
    """Central difference of ``f`` with respect to ``w[index]`` (restored afterwards)."""
    orig = w[index]
    w[index] = orig + h
    fp = f()
    w[index] = orig - h
    fm = f()
    w[index] = orig
    return (fp - fm) / (2.0 * h)
