"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Variable` wraps a numpy array.  Every op records its parents with a
closure mapping the output adjoint to the parent's adjoint, and
:func:`backward` walks the graph in reverse topological order.  Gradients are
accumulated only on leaves (parameters), so calling :func:`backward` twice
without :func:`zero_grad` adds the gradients up, like minibatch accumulation.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericDomainError

NORM_EPS = 1e-12

_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (used by the finite-difference oracle)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Variable:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericDomainError(f"non-finite value in {name or 'variable'}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def T(self) -> "Variable":
        return transpose(self)

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, power(as_variable(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def _node(value: np.ndarray, parents: Sequence[tuple[Variable, Callable]], op: str) -> Variable:
    if not np.all(np.isfinite(value)):
        raise NumericDomainError(f"{op} produced a non-finite value")
    out = Variable.__new__(Variable)
    out.value = value
    out.grad = None
    out.name = None
    live = tuple((p, fn) for p, fn in parents if p.requires_grad) if _recording else ()
    out.requires_grad = bool(live)
    out._parents = live
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Variable, b: Variable, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)], "matmul")


def transpose(a) -> Variable:
    a = as_variable(a)
    return _node(a.value.T.copy(), [(a, lambda g: g.T)], "transpose")


def reshape(a, shape) -> Variable:
    a = as_variable(a)
    old = a.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))], "reshape")


def concat_cols(parts: Sequence[Variable]) -> Variable:
    parts = [as_variable(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    parents = [(p, (lambda lo, hi: lambda g: g[:, lo:hi])(bounds[k], bounds[k + 1]))
               for k, p in enumerate(parts)]
    return _node(np.concatenate([p.value for p in parts], axis=1), parents, "concat_cols")


def concat_rows(parts: Sequence[Variable]) -> Variable:
    parts = [as_variable(p) for p in parts]
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    parents = [(p, (lambda lo, hi: lambda g: g[lo:hi])(bounds[k], bounds[k + 1]))
               for k, p in enumerate(parts)]
    return _node(np.concatenate([p.value for p in parts], axis=0), parents, "concat_rows")


def gather_rows(a, index) -> Variable:
    """Rows ``a[index]``; a negative index yields a zero row (used for padding)."""
    a = as_variable(a)
    idx = np.asarray(index, dtype=np.intp)
    if idx.size and idx.max() >= a.shape[0]:
        raise DimensionError(f"gather_rows: index {idx.max()} out of range for {a.shape[0]} rows")
    hit = idx >= 0
    out = np.zeros((idx.shape[0],) + a.shape[1:])
    out[hit] = a.value[idx[hit]]
    n = a.shape[0]

    def back(g):
        grad = np.zeros((n,) + g.shape[1:])
        np.add.at(grad, idx[hit], g[hit])
        return grad

    return _node(out, [(a, back)], "gather_rows")


def sum_all(a) -> Variable:
    a = as_variable(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), [(a, lambda g: np.full(shape, g.reshape(-1)[0]))], "sum")


def sum_rows(a) -> Variable:
    """Sum over the last axis, keeping it (n x d -> n x 1)."""
    a = as_variable(a)
    shape = a.shape
    return _node(a.value.sum(axis=-1, keepdims=True), [(a, lambda g: np.broadcast_to(g, shape).copy())], "sum_rows")


def mean_all(a) -> Variable:
    a = as_variable(a)
    return scale(sum_all(a), 1.0 / a.value.size)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))], "add")


def sub(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))], "sub")


def mul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    sa, sb = a.shape, b.shape
    return _node(av * bv, [(a, lambda g: _unbroadcast(g * bv, sa)), (b, lambda g: _unbroadcast(g * av, sb))], "mul")


def scale(a, c: float) -> Variable:
    a = as_variable(a)
    c = float(c)
    return _node(a.value * c, [(a, lambda g: g * c)], "scale")


def relu(a) -> Variable:
    a = as_variable(a)
    on = a.value > 0
    return _node(np.where(on, a.value, 0.0), [(a, lambda g: g * on)], "relu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Variable:
    a = as_variable(a)
    s = _sigmoid(a.value)
    return _node(s, [(a, lambda g: g * s * (1.0 - s))], "sigmoid")


def exp(a) -> Variable:
    a = as_variable(a)
    with np.errstate(over="ignore"):  # overflow is reported by _node
        e = np.exp(a.value)
    return _node(e, [(a, lambda g: g * e)], "exp")


def log(a) -> Variable:
    a = as_variable(a)
    if np.any(a.value <= 0):
        raise NumericDomainError("log of a non-positive value")
    av = a.value
    return _node(np.log(av), [(a, lambda g: g / av)], "log")


def power(a, p: float) -> Variable:
    a = as_variable(a)
    p = float(p)
    av = a.value
    if not p.is_integer() and np.any(av < 0):
        raise NumericDomainError(f"power {p} of a negative value")
    if p < 1 and np.any(av == 0):
        raise NumericDomainError(f"power {p} is not differentiable at 0")
    return _node(av ** p, [(a, lambda g: g * p * av ** (p - 1))], "power")


def clip(a, lo: float, hi: float) -> Variable:
    """Clamp into [lo, hi]; the gradient is passed only where the value is inside."""
    a = as_variable(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), [(a, lambda g: g * inside)], "clip")


_ELEMENTWISE = {
    "relu": relu, "sigmoid": sigmoid, "exp": exp, "log": log,
    "add": add, "mul": mul, "scale": scale, "power": power,
}


def elementwise(op: str, *args, **kwargs) -> Variable:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# row-wise reductions


def softmax_rows(a) -> Variable:
    a = as_variable(a)
    if a.value.size == 0:
        raise DimensionError("softmax_rows of an empty matrix")
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, [(a, lambda g: s * (g - (g * s).sum(axis=-1, keepdims=True)))], "softmax_rows")


def log_softmax_rows(a) -> Variable:
    a = as_variable(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _node(out, [(a, lambda g: g - s * g.sum(axis=-1, keepdims=True))], "log_softmax_rows")


def l2_normalize_rows(a) -> Variable:
    a = as_variable(a)
    norm = np.sqrt((a.value ** 2).sum(axis=-1, keepdims=True))
    if np.any(norm < NORM_EPS):
        raise NumericDomainError("l2_normalize_rows: zero-norm row")
    y = a.value / norm

    def back(g):
        return (g - y * (g * y).sum(axis=-1, keepdims=True)) / norm

    return _node(y, [(a, back)], "l2_normalize_rows")


# ---------------------------------------------------------------------------
# gradients


def _topo_order(root: Variable) -> list[Variable]:
    order: list[Variable] = []
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
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Variable) -> list[Variable]:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Returns the leaves that received a gradient.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return []
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves = []
    for node in reversed(_topo_order(loss)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        for parent, fn in node._parents:
            pg = fn(g)
            key = id(parent)
            adjoint[key] = pg if key not in adjoint else adjoint[key] + pg
    return leaves


def zero_grad(params: Iterable[Variable] | Mapping[str, Variable]) -> None:
    items = params.values() if isinstance(params, Mapping) else params
    for p in items:
        p.zero_grad()


def gradient_errors(f: Callable, params: Mapping[str, Variable], eps: float = 1e-5) -> dict[str, float]:
    """Per-parameter max relative error between backward and central differences.

    ``f(params)`` must return a scalar :class:`Variable` and be deterministic.
    The relative error of one entry is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    zero_grad(params)
    backward(f(params))
    errors = {}
    for name, p in params.items():
        analytic = p.grad_or_zeros()
        numeric = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        nflat = numeric.reshape(-1)
        with no_grad():
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = f(params).item()
                flat[k] = orig - eps
                fm = f(params).item()
                flat[k] = orig
                nflat[k] = (fp - fm) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        errors[name] = float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
    zero_grad(params)
    return errors


def finite_diff_check(f: Callable, params: Mapping[str, Variable] | Sequence[Variable], eps: float = 1e-5) -> float:
    if not isinstance(params, Mapping):
        params = {str(k): p for k, p in enumerate(params)}
    errs = gradient_errors(f, params, eps)
    return max(errs.values(), default=0.0)
