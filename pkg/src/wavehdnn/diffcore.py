"""Define-by-run reverse-mode differentiation over dense float64 matrices.

A :class:`Tape` is built fresh for every loss evaluation. Leaves are created
with :meth:`Tape.leaf`; every op below records itself on the tape of its
inputs when at least one of them requires gradients. Plain numpy arrays are
accepted anywhere and treated as constants.

    tape = Tape()
    w = tape.leaf(np.ones((2, 2)))
    loss = sum_all(relu(w @ x))
    tape.backward(loss)
    w.grad
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .hypergraph import ShapeError, SparseMatrix


class TapeError(RuntimeError):
    pass


class Variable:
    __slots__ = ("value", "requires_grad", "grad", "node_id", "tape")
    __array_priority__ = 100  # so ndarray <op> Variable defers to us

    def __init__(self, value, requires_grad=False, tape=None, node_id=-1):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise ShapeError(f"Variables are 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 Variable, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Variable(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Node:
    out: Variable
    inputs: tuple
    vjp: Callable


class Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: list[Variable] = []
        self.next_id = 0
        self._used = False

    def _new_id(self):
        nid = self.next_id
        self.next_id += 1
        return nid

    def leaf(self, value, requires_grad=True) -> Variable:
        v = Variable(value, requires_grad=requires_grad, tape=self, node_id=self._new_id())
        if requires_grad:
            self.leaves.append(v)
        return v

    def record(self, value, inputs, vjp) -> Variable:
        out = Variable(value, requires_grad=True, tape=self, node_id=self._new_id())
        self.nodes.append(_Node(out, inputs, vjp))
        return out

    def backward(self, loss: Variable) -> None:
        """Populate ``.grad`` on every requires-grad leaf of this tape."""
        if self._used:
            raise TapeError("backward already run on this tape")
        if not isinstance(loss, Variable) or loss.shape != (1, 1):
            raise ShapeError("backward needs a 1x1 loss Variable")
        self._used = True
        grads: dict[int, np.ndarray] = {}
        if loss.requires_grad and loss.tape is self:
            grads[loss.node_id] = np.ones((1, 1))
        for node in reversed(self.nodes):
            g = grads.pop(node.out.node_id, None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not _needs_grad(inp):
                    continue
                prev = grads.get(inp.node_id)
                grads[inp.node_id] = gi if prev is None else prev + gi
        for leaf in self.leaves:
            g = grads.get(leaf.node_id)
            leaf.grad = np.zeros_like(leaf.value) if g is None else g


def _needs_grad(x) -> bool:
    return isinstance(x, Variable) and x.requires_grad


def _val(x) -> np.ndarray:
    if isinstance(x, Variable):
        return x.value
    return Variable(x).value


def _tape_of(*xs):
    tape = None
    for x in xs:
        if _needs_grad(x):
            if x.tape is None:
                raise TapeError("requires-grad Variable is not attached to a tape")
            if tape is not None and x.tape is not tape:
                raise TapeError("operands live on different tapes")
            tape = x.tape
    return tape


def _op(value, inputs, vjp) -> Variable:
    tape = _tape_of(*inputs)
    if tape is None:
        return Variable(value)
    return tape.record(value, inputs, vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from None


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Variable:
    av, bv = _val(a), _val(b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul {av.shape} @ {bv.shape}")
    return _op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def sparse_dense_matmul(S: SparseMatrix, x) -> Variable:
    """Constant sparse ``S`` times a dense Variable."""
    xv = _val(x)
    return _op(S.matmul(xv), (x,), lambda g: (S.rmatmul_t(g),))


def linear_map(fn, adjoint, x) -> Variable:
    """Apply a constant linear operator given as ``fn`` with its ``adjoint``."""
    return _op(fn(_val(x)), (x,), lambda g: (adjoint(g),))


def transpose(x) -> Variable:
    return _op(_val(x).T.copy(), (x,), lambda g: (g.T,))


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Variable:
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "add")
    return _op(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b) -> Variable:
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "sub")
    return _op(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape)))


def mul(a, b) -> Variable:
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv, "mul")
    return _op(av * bv, (a, b),
               lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(x, c: float) -> Variable:
    c = float(c)
    return _op(_val(x) * c, (x,), lambda g: (g * c,))


def relu(x) -> Variable:
    xv = _val(x)
    mask = xv > 0  # derivative at 0 is 0
    return _op(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Variable:
    y = _sigmoid(_val(x))
    return _op(y, (x,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(x) -> Variable:
    """``log(sigmoid(x))`` without underflow for large negative ``x``."""
    xv = _val(x)
    y = np.minimum(xv, 0.0) - np.log1p(np.exp(-np.abs(xv)))
    return _op(y, (x,), lambda g: (g * _sigmoid(-xv),))


def log(x) -> Variable:
    xv = _val(x)
    return _op(np.log(xv), (x,), lambda g: (g / xv,))


def exp(x) -> Variable:
    y = np.exp(_val(x))
    return _op(y, (x,), lambda g: (g * y,))


def square(x) -> Variable:
    xv = _val(x)
    return _op(xv * xv, (x,), lambda g: (2.0 * g * xv,))


# -- row-wise ---------------------------------------------------------------

def row_layer_norm(x, eps: float = 1e-5) -> Variable:
    """Per-row standardization with population variance, no affine terms."""
    xv = _val(x)
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _op(y, (x,), vjp)


def row_l2_normalize(x, eps: float = 1e-12) -> Variable:
    """Rows divided by ``max(||row||, eps)``."""
    xv = _val(x)
    raw = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    clamped = raw < eps
    n = np.where(clamped, eps, raw)
    y = xv / n

    def vjp(g):
        proj = np.where(clamped, 0.0, (y * g).sum(axis=1, keepdims=True))
        return ((g - y * proj) / n,)

    return _op(y, (x,), vjp)


def row_sum(x) -> Variable:
    xv = _val(x)
    return _op(xv.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),))


def logsumexp_rows(x) -> Variable:
    xv = _val(x)
    m = xv.max(axis=1, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=1, keepdims=True)
    sm = e / s
    return _op(m + np.log(s), (x,), lambda g: (g * sm,))


def concat_columns(*xs) -> Variable:
    vals = [_val(x) for x in xs]
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise ShapeError(f"concat_columns: row counts differ {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])

    def vjp(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(vals)))

    return _op(np.concatenate(vals, axis=1), tuple(xs), vjp)


def concat_rows(*xs) -> Variable:
    vals = [_val(x) for x in xs]
    cols = {v.shape[1] for v in vals}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[v.shape for v in vals]}")
    bounds = np.cumsum([0] + [v.shape[0] for v in vals])

    def vjp(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(vals)))

    return _op(np.concatenate(vals, axis=0), tuple(xs), vjp)


def mean_over_rows(x) -> Variable:
    """Column-wise mean across rows: ``(n, d) -> (1, d)``."""
    xv = _val(x)
    n = xv.shape[0]
    return _op(xv.mean(axis=0, keepdims=True), (x,),
               lambda g: (np.broadcast_to(g / n, xv.shape).copy(),))


def sum_all(x) -> Variable:
    xv = _val(x)
    return _op(np.array([[xv.sum()]]), (x,), lambda g: (np.full(xv.shape, g[0, 0]),))


def mean_all(x) -> Variable:
    xv = _val(x)
    return scale(sum_all(x), 1.0 / xv.size)


def gather_rows(x, index) -> Variable:
    xv = _val(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= xv.shape[0]):
        raise ShapeError(f"gather_rows index out of range for {xv.shape[0]} rows")

    def vjp(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return (out,)

    return _op(xv[idx], (x,), vjp)


def scatter_add_rows(x, index, num_rows: int) -> Variable:
    xv = _val(x)
    idx = np.asarray(index, dtype=np.int64)
    if len(idx) != xv.shape[0]:
        raise ShapeError("scatter_add_rows: one index per input row required")
    out = np.zeros((num_rows, xv.shape[1]))
    np.add.at(out, idx, xv)
    return _op(out, (x,), lambda g: (g[idx],))


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list
    failures: list
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    def max_by_param(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out[e.param] = max(out.get(e.param, 0.0), e.rel_error)
        return out

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < self.tol


def check_gradients(build_loss, params: dict, h: float = 1e-6, tol: float = 1e-5,
                    samples: int | None = 20, seed: int = 0,
                    frozen=()) -> GradCheckReport:
    """Compare reverse-mode gradients with central differences.

    ``build_loss(leaves)`` receives a dict of fresh leaves (same keys as
    ``params``, values are float64 arrays) and returns a 1x1 Variable.
    Parameters named in ``frozen`` are created without gradients and are
    left out of the report. ``samples=None`` checks every entry.
    """
    frozen = set(frozen)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values, grad=False):
        tape = Tape()
        leaves = {k: tape.leaf(v, requires_grad=(k not in frozen)) for k, v in values.items()}
        loss = build_loss(leaves)
        if grad:
            tape.backward(loss)
            return loss.item(), {k: leaves[k].grad for k in leaves if k not in frozen}
        return loss.item()

    rng = np.random.default_rng(seed)
    entries, failures = [], []
    f0, grads = evaluate(base, grad=True)
    if not math.isfinite(f0):
        failures.append(("<loss>", (), "non-finite loss at base point"))
        return GradCheckReport(entries, failures, tol)
    for name in base:
        if name in frozen:
            continue
        arr = base[name]
        flat = np.arange(arr.size)
        if samples is not None and samples < arr.size:
            flat = np.sort(rng.choice(arr.size, size=samples, replace=False))
        for f in flat:
            idx = np.unravel_index(f, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp = evaluate(base)
            arr[idx] = orig - h
            fm = evaluate(base)
            arr[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                failures.append((name, tuple(int(i) for i in idx), "non-finite loss"))
                continue
            num = (fp - fm) / (2.0 * h)
            ana = float(grads[name][idx])
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            entries.append(GradCheckEntry(name, tuple(int(i) for i in idx), ana, num, rel))
    return GradCheckReport(entries, failures, tol)
