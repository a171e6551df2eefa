"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Var wraps a value array plus the closures that push a cotangent back to
its parents. Graphs are built eagerly by operator overloading and a small
set of grid primitives (3x3 correlation, same-padded convolution, bilinear
resize, pooling, padding) that route through duo.kernels. backward() runs
one reverse topological sweep from a scalar root and returns the gradient
map of the requiring leaves; finite_difference() is the independent check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import kernels
from .linalg import solve_linear


class ContractViolation(ValueError):
    """An argument broke a documented precondition."""


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = True, name: str | None = None):
        self.value = _f64(value)
        self.grad = None
        self._parents: tuple = ()
        self._vjp: Callable | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = self.name or ("leaf" if not self._parents else "node")
        return f"Var({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- graph construction ------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add, lambda g, a, b: (g, g))

    __radd__ = __add__

    def __mul__(self, other):
        return _binary(
            self, other, np.multiply, lambda g, a, b: (g * b.value, g * a.value)
        )

    __rmul__ = __mul__

    def __sub__(self, other):
        return _binary(self, other, np.subtract, lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _binary(
            as_var(other), self, np.subtract, lambda g, a, b: (g, -g)
        )

    def __truediv__(self, other):
        return _binary(
            self,
            other,
            np.divide,
            lambda g, a, b: (g / b.value, -g * a.value / (b.value * b.value)),
        )

    def __rtruediv__(self, other):
        return as_var(other) / self

    def __neg__(self):
        return _unary(self, -self.value, lambda g, a: -g)

    def __pow__(self, k):
        if not isinstance(k, (int, float)):
            raise ContractViolation("only scalar exponents are supported")
        k = float(k)
        return _unary(
            self, self.value**k, lambda g, a: g * k * a.value ** (k - 1.0)
        )

    def __abs__(self):
        return _unary(self, np.abs(self.value), lambda g, a: g * np.sign(a.value))

    def exp(self):
        out_val = np.exp(self.value)
        return _unary(self, out_val, lambda g, a, ov=out_val: g * ov)

    def log(self):
        return _unary(self, np.log(self.value), lambda g, a: g / a.value)

    def sqrt(self):
        out_val = np.sqrt(self.value)
        return _unary(self, out_val, lambda g, a, ov=out_val: g * 0.5 / ov)

    def tanh(self):
        out_val = np.tanh(self.value)
        return _unary(self, out_val, lambda g, a, ov=out_val: g * (1.0 - ov * ov))

    def sigmoid(self):
        out_val = 1.0 / (1.0 + np.exp(-self.value))
        return _unary(
            self, out_val, lambda g, a, ov=out_val: g * ov * (1.0 - ov)
        )

    def relu(self):
        return _unary(
            self,
            np.maximum(self.value, 0.0),
            lambda g, a: g * (a.value > 0.0),
        )

    def clamp_min(self, lo: float):
        """Elementwise max with a constant; gradient is zero where clamped."""
        return _unary(
            self,
            np.maximum(self.value, lo),
            lambda g, a: g * (a.value > lo),
        )

    def sum(self, axis=None, keepdims: bool = False):
        out_val = self.value.sum(axis=axis, keepdims=keepdims)
        shape = self.value.shape

        def vjp(g, a):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            gg = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gg, shape).copy()

        return _unary(self, out_val, vjp)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else _axis_count(self.value.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return _unary(
            self, self.value.reshape(shape), lambda g, a: g.reshape(old)
        )

    def transpose(self):
        return _unary(self, self.value.T.copy(), lambda g, a: g.T.copy())

    def __getitem__(self, idx):
        out_val = np.array(self.value[idx], dtype=np.float64)
        shape = self.value.shape
        fancy = _has_array_index(idx)

        def vjp(g, a):
            z = np.zeros(shape, dtype=np.float64)
            if fancy:
                np.add.at(z, idx, g)
            else:
                z[idx] += g
            return z

        return _unary(self, out_val, vjp)

    def __matmul__(self, other):
        other = as_var(other)
        a, b = self.value, other.value
        out_val = a @ b

        def vjp(g, pa, pb):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return g @ b.T, np.outer(a, g)
            return g @ b.T, a.T @ g

        return _node(out_val, (self, other), vjp)


def _axis_count(shape, axis) -> int:
    if isinstance(axis, int):
        axis = (axis,)
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _has_array_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(x, requires_grad=False)


def const(x) -> Var:
    """A graph constant: participates in values, never in gradients."""
    return Var(np.array(x, dtype=np.float64), requires_grad=False)


def stop_gradient(x) -> Var:
    """Detach a node: same value, no gradient path."""
    if isinstance(x, Var):
        return Var(x.value.copy(), requires_grad=False)
    return const(x)


def _node(value, parents, vjp) -> Var:
    if not any(p.requires_grad or p._parents for p in parents):
        return Var(value, requires_grad=False)
    out = Var(value, requires_grad=False)
    out._parents = tuple(parents)
    out._vjp = vjp
    return out


def _unary(a: Var, value, vjp) -> Var:
    return _node(value, (a,), lambda g, pa: (vjp(g, pa),))


def _binary(a, b, fwd, vjp) -> Var:
    a = as_var(a)
    b = as_var(b)
    value = fwd(a.value, b.value)

    def full_vjp(g, pa, pb):
        ga, gb = vjp(g, pa, pb)
        return (
            _unbroadcast(ga, pa.value.shape),
            _unbroadcast(gb, pb.value.shape),
        )

    return _node(value, (a, b), full_vjp)


# -- module-level math that dispatches on Var vs ndarray --------------------


def exp(x):
    return x.exp() if isinstance(x, Var) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Var) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Var) else np.sqrt(x)


def absolute(x):
    return abs(x) if isinstance(x, Var) else np.abs(x)


def clamp_min(x, lo: float):
    return x.clamp_min(lo) if isinstance(x, Var) else np.maximum(x, lo)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else _f64(x)


def stack_scalars(items) -> Var:
    """Stack scalar Vars (or floats) into a rank-1 Var."""
    parents = tuple(as_var(v) for v in items)
    value = np.array([float(p.value) for p in parents])

    def vjp(g, *ps):
        return tuple(np.asarray(gi) for gi in g)

    return _node(value, parents, vjp)


# -- grid primitives ---------------------------------------------------------


def pad_replicate(x, n: int = 1):
    """Edge-replicate padding of an (H, W) grid by n on every side."""
    if not isinstance(x, Var):
        return np.pad(x, n, mode="edge")
    return _unary(
        x,
        np.pad(x.value, n, mode="edge"),
        lambda g, a: _fold_replicate(g, n),
    )


def _fold_replicate(g: np.ndarray, n: int) -> np.ndarray:
    core = g[n:-n, n:-n].copy()
    core[0, :] += g[:n, n:-n].sum(axis=0)
    core[-1, :] += g[-n:, n:-n].sum(axis=0)
    core[:, 0] += g[n:-n, :n].sum(axis=1)
    core[:, -1] += g[n:-n, -n:].sum(axis=1)
    core[0, 0] += g[:n, :n].sum()
    core[0, -1] += g[:n, -n:].sum()
    core[-1, 0] += g[-n:, :n].sum()
    core[-1, -1] += g[-n:, -n:].sum()
    return core


def correlate3x3(x, k: np.ndarray):
    """Valid 3x3 cross-correlation; the kernel is a constant."""
    k = _f64(k)
    if k.shape != (3, 3):
        raise ContractViolation(f"kernel must be 3x3, got {k.shape}")
    if not isinstance(x, Var):
        return kernels.correlate3x3_valid(_f64(x), k)
    kr = k[::-1, ::-1].copy()

    def vjp(g, a):
        gp = np.zeros((g.shape[0] + 4, g.shape[1] + 4), dtype=np.float64)
        gp[2:-2, 2:-2] = g
        return kernels.correlate3x3_valid(gp, kr)

    return _unary(x, kernels.correlate3x3_valid(x.value, k), vjp)


def conv2d3x3(x, w, b=None):
    """Same-padded 3x3 convolution on (N,C,H,W) with weights (F,C,3,3)."""
    xv = as_var(x)
    wv = as_var(w)
    out_val = kernels.conv2d3x3(xv.value, wv.value)

    def vjp(g, px, pw):
        wt = np.ascontiguousarray(
            pw.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        )
        gx = kernels.conv2d3x3(np.ascontiguousarray(g), wt)
        gw = kernels.conv2d3x3_grad_w(px.value, np.ascontiguousarray(g))
        return gx, gw

    out = _node(out_val, (xv, wv), vjp)
    if b is not None:
        bv = as_var(b)
        out = out + bv.reshape(1, -1, 1, 1)
    return out


def channel_linear(x, w, b):
    """Per-location linear map over channels: (N,C,H,W) x (F,C) -> (N,F,H,W)."""
    xv = as_var(x)
    wv = as_var(w)
    bv = as_var(b)
    out_val = (
        np.einsum("nchw,fc->nfhw", xv.value, wv.value, optimize=True)
        + bv.value.reshape(1, -1, 1, 1)
    )

    def vjp(g, px, pw, pb):
        gx = np.einsum("nfhw,fc->nchw", g, pw.value, optimize=True)
        gw = np.einsum("nfhw,nchw->fc", g, px.value, optimize=True)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _node(out_val, (xv, wv, bv), vjp)


def avg_pool(x, k: int):
    """Non-overlapping k x k mean pooling on (N,C,H,W)."""
    xv = as_var(x)
    n, c, h, w = xv.value.shape
    if h % k or w % k:
        raise ContractViolation(f"pool size {k} must divide spatial dims {(h, w)}")
    out_val = xv.value.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g, a):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return up / (k * k)

    return _unary(xv, out_val, vjp)


def bilinear(x, out_h: int, out_w: int):
    """Bilinear resize of an (H, W) grid; target must not be smaller."""
    xv = x if isinstance(x, Var) else None
    val = x.value if xv is not None else _f64(x)
    in_h, in_w = val.shape
    if out_h < in_h or out_w < in_w:
        raise ContractViolation(
            f"target {(out_h, out_w)} smaller than source {(in_h, in_w)}"
        )
    if (out_h, out_w) == (in_h, in_w):
        return x
    out_val = kernels.bilinear_resize(val, out_h, out_w)
    if xv is None:
        return out_val
    return _unary(
        xv,
        out_val,
        lambda g, a: kernels.bilinear_resize_adjoint(
            np.ascontiguousarray(g), in_h, in_w
        ),
    )


def solve(a, b) -> Var:
    """Differentiable linear solve a x = b (square a, vector b)."""
    av = as_var(a)
    bv = as_var(b)
    if (
        av.value.ndim != 2
        or av.value.shape[0] != av.value.shape[1]
        or bv.value.shape != av.value.shape[:1]
    ):
        raise ContractViolation(
            f"solve needs square a and matching b, got {av.value.shape} / {bv.value.shape}"
        )
    x_val = solve_linear(av.value, bv.value)

    def vjp(g, pa, pb):
        gb = solve_linear(pa.value.T, np.asarray(g, dtype=np.float64))
        ga = -np.outer(gb, x_val)
        return ga, gb

    return _node(x_val, (av, bv), vjp)


def diag(v) -> Var:
    """Embed a vector on the diagonal of a square matrix."""
    vv = as_var(v)
    return _unary(vv, np.diag(vv.value), lambda g, a: np.diag(g).copy())


# -- reverse sweep -----------------------------------------------------------


class GradientMap(dict):
    """Leaf Var -> gradient array, plus NaN diagnostics for skip logic."""

    saw_nan: bool = False

    def finite(self) -> bool:
        return not self.saw_nan


def backward(root: Var) -> GradientMap:
    """Reverse-accumulate from a scalar root; returns the leaf gradient map.

    Non-finite values landing in leaf gradients (or a non-finite root) set
    saw_nan on the returned map instead of raising.
    """
    if root.value.size != 1:
        raise ContractViolation(
            f"backward needs a scalar root, got shape {root.value.shape}"
        )
    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    for node in topo:
        node.grad = None
    root.grad = np.ones_like(root.value)

    for node in reversed(topo):
        if node.grad is None or node._vjp is None:
            continue
        grads = node._vjp(node.grad, *node._parents)
        for parent, g in zip(node._parents, grads):
            if not (parent.requires_grad or parent._parents):
                continue
            g = np.asarray(g, dtype=np.float64)
            if parent.grad is None:
                parent.grad = g.reshape(parent.value.shape).copy()
            else:
                parent.grad += g.reshape(parent.value.shape)

    out = GradientMap()
    out.saw_nan = not np.isfinite(root.value).all()
    for node in topo:
        if node.requires_grad and node._vjp is None:
            g = node.grad if node.grad is not None else np.zeros_like(node.value)
            out[node] = g
            if not np.isfinite(g).all():
                out.saw_nan = True
    return out


def finite_difference(f, at: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    at = _f64(at)
    grad = np.zeros_like(at)
    flat = at.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(f(at))
        flat[i] = keep - step
        lo = float(f(at))
        flat[i] = keep
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ContractViolation(
                f"function not finite at probe of coordinate {i}"
            )
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad
