"""Reverse-mode automatic differentiation on a flat tape.

Define-by-run: every operation on tracked values appends one node to a Tape,
so the node list is already topologically ordered and a single reverse sweep
computes all adjoints. Values are dense float64 numpy arrays; integer index
arrays (for gather/scatter) are plain numpy arrays and never differentiated.

Broadcasting is deliberately restricted to scalar-with-tensor; anything else
must be shaped explicitly by the caller. There is no global tape: simulations
on different tapes can run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class _Node:
    __slots__ = ("parents", "vjp")

    def __init__(self, parents, vjp):
        self.parents = parents      # tuple of node ids
        self.vjp = vjp              # upstream grad -> tuple of parent grads


class Value:
    """A float64 tensor, optionally tracked on a tape.

    tape is None for constants; constants take part in arithmetic but never
    receive gradients.
    """

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape=None, nid=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        if self.tape is None or self.nid is None:
            return None
        return self.tape.grad_by_id(self.nid)

    def item(self) -> float:
        return float(self.data)

    def sum(self, axis=None):
        return sum_reduce(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def __getitem__(self, key):
        return take_slice(self, key)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.nid}"
        return f"Value({tag}, shape={self.data.shape})"


def constant(x) -> Value:
    """Wrap an array or number as an untracked Value."""
    if isinstance(x, Value):
        return x
    return Value(x)


class Tape:
    """Append-only operation record supporting one backward sweep.

    Rebuilt for every forward pass. After backward(), gradients are read
    through Value.grad; a second backward on the same tape requires
    clear_grads() first.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._grads: Optional[list] = None
        self.last_backward_stats: Optional[dict] = None

    def __len__(self):
        return len(self.nodes)

    def leaf(self, data) -> Value:
        """Register a parameter (gradient target) on the tape."""
        nid = len(self.nodes)
        self.nodes.append(_Node((), None))
        return Value(data, tape=self, nid=nid)

    def _record(self, data, parents, vjp) -> Value:
        nid = len(self.nodes)
        self.nodes.append(_Node(parents, vjp))
        return Value(data, tape=self, nid=nid)

    def grad_by_id(self, nid: int):
        if self._grads is None:
            return None
        return self._grads[nid]

    def clear_grads(self):
        self._grads = None

    def backward(self, root: Value):
        """Accumulate d root / d node for every node reachable from root.

        root must be scalar (size 1). Each node's adjoint is applied at most
        once; nodes that never feed the root are skipped entirely.
        """
        if root.tape is not self:
            raise TapeError("root does not belong to this tape")
        if root.data.size != 1:
            raise TapeError(f"backward root must be scalar, got shape {root.data.shape}")
        if self._grads is not None:
            raise TapeError("tape already has gradients; call clear_grads() first")

        grads: list = [None] * len(self.nodes)
        grads[root.nid] = np.ones_like(root.data)
        applications = 0
        for nid in range(root.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            if node.vjp is None:
                continue
            applications += 1
            parent_grads = node.vjp(g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
        self._grads = grads
        self.last_backward_stats = {
            "nodes": len(self.nodes),
            "adjoint_applications": applications,
        }


# ---------------------------------------------------------------------------
# op plumbing

def _tape_of(*vals: Value):
    tape = None
    for v in vals:
        if v.tape is not None:
            if tape is None:
                tape = v.tape
            elif tape is not v.tape:
                raise TapeError("operands live on different tapes")
    return tape


def _binary_shapes_ok(a: np.ndarray, b: np.ndarray):
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    raise ValueError(
        f"only scalar-with-tensor broadcasting is supported, got {a.shape} and {b.shape}"
    )


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # reduce an upstream gradient back to the shape of a (possibly scalar) operand
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _record_or_const(tape, data, tracked, vjp_builder) -> Value:
    """tracked: list of (Value, position) actually on the tape."""
    if tape is None or not tracked:
        return Value(data)
    parents = tuple(v.nid for v, _ in tracked)
    return tape._record(data, parents, vjp_builder)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Value:
    a, b = constant(a), constant(b)
    tape = _tape_of(a, b)
    _binary_shapes_ok(a.data, b.data)
    data = a.data + b.data
    tracked = [(v, i) for i, v in enumerate((a, b)) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            out.append(_unbroadcast(g, (a, b)[i].data.shape))
        return out

    return _record_or_const(tape, data, tracked, vjp)


def subtract(a, b) -> Value:
    a, b = constant(a), constant(b)
    tape = _tape_of(a, b)
    _binary_shapes_ok(a.data, b.data)
    data = a.data - b.data
    tracked = [(v, i) for i, v in enumerate((a, b)) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            sg = g if i == 0 else -g
            out.append(_unbroadcast(sg, (a, b)[i].data.shape))
        return out

    return _record_or_const(tape, data, tracked, vjp)


def multiply(a, b) -> Value:
    a, b = constant(a), constant(b)
    tape = _tape_of(a, b)
    _binary_shapes_ok(a.data, b.data)
    ad, bd = a.data, b.data
    data = ad * bd
    tracked = [(v, i) for i, v in enumerate((a, b)) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            other = bd if i == 0 else ad
            out.append(_unbroadcast(g * other, (ad, bd)[i].shape))
        return out

    return _record_or_const(tape, data, tracked, vjp)


def divide(a, b) -> Value:
    a, b = constant(a), constant(b)
    tape = _tape_of(a, b)
    _binary_shapes_ok(a.data, b.data)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise ValueError("division by zero")
    data = ad / bd
    tracked = [(v, i) for i, v in enumerate((a, b)) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            if i == 0:
                out.append(_unbroadcast(g / bd, ad.shape))
            else:
                out.append(_unbroadcast(-g * ad / (bd * bd), bd.shape))
        return out

    return _record_or_const(tape, data, tracked, vjp)


def negate(a) -> Value:
    a = constant(a)
    data = -a.data
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (-g,))


# ---------------------------------------------------------------------------
# nonlinearities

def exp(a) -> Value:
    a = constant(a)
    data = np.exp(a.data)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g * data,))


def log(a) -> Value:
    a = constant(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log requires strictly positive arguments")
    data = np.log(a.data)
    ad = a.data
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g / ad,))


def sigmoid(a) -> Value:
    a = constant(a)
    x = a.data
    # two-branch form avoids overflow for large |x|
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = np.asarray(data, dtype=np.float64)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g * data * (1.0 - data),))


def tanh(a) -> Value:
    a = constant(a)
    data = np.tanh(a.data)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g * (1.0 - data * data),))


def relu(a) -> Value:
    a = constant(a)
    data = np.maximum(a.data, 0.0)
    mask = a.data > 0
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g * mask,))


def softmax(a) -> Value:
    """Softmax over the last axis."""
    a = constant(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    tracked = [(a, 0)] if a.tape is not None else []

    def vjp(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - inner),)

    return _record_or_const(a.tape, data, tracked, vjp)


def clip(a, lo: float, hi: float) -> Value:
    """Clamp to [lo, hi]; gradient passes only where the input was in range."""
    a = constant(a)
    data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape and reduction

def sum_reduce(a, axis=None) -> Value:
    a = constant(a)
    data = a.data.sum(axis=axis)
    shape = a.data.shape
    tracked = [(a, 0)] if a.tape is not None else []

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record_or_const(a.tape, data, tracked, vjp)


def reshape(a, shape) -> Value:
    a = constant(a)
    old = a.data.shape
    data = a.data.reshape(shape)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g.reshape(old),))


def transpose(a) -> Value:
    a = constant(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D value")
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, a.data.T.copy(), tracked, lambda g: (g.T,))


def take_slice(a, key) -> Value:
    """Basic indexing (ints/slices); the adjoint scatters back into zeros."""
    a = constant(a)
    data = a.data[key]
    shape = a.data.shape
    tracked = [(a, 0)] if a.tape is not None else []

    def vjp(g):
        out = np.zeros(shape, dtype=np.float64)
        out[key] = g
        return (out,)

    return _record_or_const(a.tape, data, tracked, vjp)


def concat(values: Sequence, axis: int = 0) -> Value:
    vals = [constant(v) for v in values]
    tape = _tape_of(*vals)
    data = np.concatenate([v.data for v in vals], axis=axis)
    sizes = [v.data.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    tracked = [(v, i) for i, v in enumerate(vals) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            out.append(g[tuple(sl)])
        return out

    return _record_or_const(tape, data, tracked, vjp)


def stack(values: Sequence) -> Value:
    """Stack scalar or equal-shape Values along a new leading axis."""
    vals = [constant(v) for v in values]
    tape = _tape_of(*vals)
    data = np.stack([v.data for v in vals])
    tracked = [(v, i) for i, v in enumerate(vals) if v.tape is not None]

    def vjp(g):
        return [g[i] for v, i in tracked]

    return _record_or_const(tape, data, tracked, vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Value:
    """Matrix product for 2-D@2-D, 2-D@1-D and 1-D@2-D operands."""
    a, b = constant(a), constant(b)
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    if ad.ndim not in (1, 2) or bd.ndim not in (1, 2) or (ad.ndim == 1 and bd.ndim == 1):
        raise ValueError(f"matmul supports 2Dx2D, 2Dx1D, 1Dx2D; got {ad.shape} @ {bd.shape}")
    data = ad @ bd
    tracked = [(v, i) for i, v in enumerate((a, b)) if v.tape is not None]

    def vjp(g):
        out = []
        for v, i in tracked:
            if i == 0:
                if ad.ndim == 2 and bd.ndim == 2:
                    out.append(g @ bd.T)
                elif ad.ndim == 2 and bd.ndim == 1:
                    out.append(np.outer(g, bd))
                else:  # 1D @ 2D
                    out.append(g @ bd.T)
            else:
                if ad.ndim == 2 and bd.ndim == 2:
                    out.append(ad.T @ g)
                elif ad.ndim == 2 and bd.ndim == 1:
                    out.append(ad.T @ g)
                else:  # 1D @ 2D
                    out.append(np.outer(ad, g))
        return out

    return _record_or_const(tape, data, tracked, vjp)


# ---------------------------------------------------------------------------
# indexed message passing

def gather(a, index: np.ndarray) -> Value:
    """Select rows: out[i] = a[index[i]]. index is a constant int array."""
    a = constant(a)
    index = np.asarray(index)
    data = a.data[index]
    shape = a.data.shape
    tracked = [(a, 0)] if a.tape is not None else []

    def vjp(g):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, index, g)
        return (out,)

    return _record_or_const(a.tape, data, tracked, vjp)


def scatter_add(a, index: np.ndarray, size: int) -> Value:
    """Sum 1-D values into bins: out[j] = sum of a[i] where index[i] == j.

    The adjoint is a gather at the same indices. Accumulation order follows
    the input order, so callers wanting permutation-stable sums must pass a
    canonically ordered (index, value) sequence.
    """
    a = constant(a)
    index = np.asarray(index)
    if a.data.ndim != 1:
        raise ValueError("scatter_add expects 1-D values")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise ValueError("scatter index out of range")
    data = np.bincount(index, weights=a.data, minlength=size)
    tracked = [(a, 0)] if a.tape is not None else []
    return _record_or_const(a.tape, data, tracked, lambda g: (g[index],))


def straight_through(soft: Value, hard: np.ndarray) -> Value:
    """Forward the hard values, backpropagate as if they were the soft ones."""
    soft = constant(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.data.shape:
        raise ValueError("straight_through shapes differ")
    tracked = [(soft, 0)] if soft.tape is not None else []
    return _record_or_const(soft.tape, hard.copy(), tracked, lambda g: (g,))


# ---------------------------------------------------------------------------
# finite-difference verification

@dataclass
class GradReport:
    value: float
    analytic: dict
    numeric: dict
    max_relative_error: float


def finite_difference_check(
    f: Callable[[dict, Optional[Tape]], Value],
    params: dict,
    step: float = 1e-5,
) -> GradReport:
    """Compare tape gradients of a scalar function against central differences.

    f receives a dict of Values (leaves on a tape for the analytic pass,
    constants for the numeric probes) and must return a scalar Value.
    """
    tape = Tape()
    leaves = {k: tape.leaf(np.asarray(v, dtype=np.float64)) for k, v in params.items()}
    root = f(leaves, tape)
    tape.backward(root)
    value = float(root.data)
    analytic = {}
    for k, leaf in leaves.items():
        g = leaf.grad
        analytic[k] = np.zeros_like(leaf.data) if g is None else np.array(g, copy=True)

    def evaluate(probe: dict) -> float:
        vals = {k: constant(v) for k, v in probe.items()}
        out = f(vals, None)
        return float(out.data)

    numeric = {}
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    for k in base:
        num = np.zeros_like(base[k])
        flat = base[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            probe = {kk: vv for kk, vv in base.items()}
            hi_arr = base[k].copy()
            hi_arr.reshape(-1)[i] = orig + step
            probe[k] = hi_arr
            hi = evaluate(probe)
            lo_arr = base[k].copy()
            lo_arr.reshape(-1)[i] = orig - step
            probe[k] = lo_arr
            lo = evaluate(probe)
            num.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        numeric[k] = num

    worst = 0.0
    for k in base:
        denom = np.maximum(np.maximum(np.abs(analytic[k]), np.abs(numeric[k])), 1e-8)
        err = np.abs(analytic[k] - numeric[k]) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return GradReport(value=value, analytic=analytic, numeric=numeric,
                      max_relative_error=worst)
