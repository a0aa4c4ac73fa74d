"""Small reverse-mode autodiff engine over float64 numpy arrays.

A :class:`Tape` records every node in creation order, which is already a
topological order, so backward is a single reverse sweep.  Ops take ``Var``
or plain arrays (treated as constants).  Binary elementwise ops require equal
shapes; the only implicit broadcast allowed is a 0-d operand against a tensor.
Anything else must go through :func:`broadcast_to` explicitly.

    tape = Tape()
    x = tape.var([1.0, 2.0, 3.0])
    f = sum(square(x))
    (g,) = gradient(f, [x])      # -> [2, 4, 6]
"""
from __future__ import annotations

import numpy as np

from . import rotations as rot
from .errors import NonFiniteValue, NotScalar, ShapeMismatch


class _Node:
    __slots__ = ("op", "parents")

    def __init__(self, op, parents):
        self.op = op
        self.parents = parents  # tuple of (parent_id, vjp) pairs


class Tape:
    def __init__(self, check_finite=True):
        self.nodes: list[_Node] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def var(self, value, name=None) -> Var:
        value = np.array(value, dtype=float)
        return self._record(value, name or "leaf", ())

    def _record(self, value, op, parents):
        node_id = len(self.nodes)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteValue(f"non-finite output from op {op!r} at node {node_id}", node_id, op)
        self.nodes.append(_Node(op, tuple(parents)))
        return Var(value, self, node_id)


class Var:
    __slots__ = ("value", "tape", "id")
    __array_priority__ = 1000  # make ndarray <op> Var defer to Var

    def __init__(self, value, tape, node_id):
        self.value = value
        self.tape = tape
        self.id = node_id

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ShapeMismatch("operands live on different tapes")
    return tape


def _emit(value, op, pairs):
    """pairs: iterable of (input, vjp) where constants are skipped."""
    parents = [(x.id, fn) for x, fn in pairs if isinstance(x, Var)]
    tape = _tape_of(*(x for x, _ in pairs))
    if tape is None:
        return value
    return tape._record(value, op, parents)


def _check_same(a, b, op):
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if sa != sb and sa != () and sb != ():
        raise ShapeMismatch(f"{op}: shapes {sa} and {sb} differ (no implicit broadcasting)")


def _reduce_to(g, shape):
    if shape == () and np.ndim(g) != 0:
        return np.asarray(np.sum(g))
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    _check_same(a, b, "add")
    av, bv = value_of(a), value_of(b)
    return _emit(
        av + bv,
        "add",
        [(a, lambda g: _reduce_to(g, av.shape)), (b, lambda g: _reduce_to(g, bv.shape))],
    )


def sub(a, b):
    _check_same(a, b, "sub")
    av, bv = value_of(a), value_of(b)
    return _emit(
        av - bv,
        "sub",
        [(a, lambda g: _reduce_to(g, av.shape)), (b, lambda g: _reduce_to(-g, bv.shape))],
    )


def mul(a, b):
    _check_same(a, b, "mul")
    av, bv = value_of(a), value_of(b)
    return _emit(
        av * bv,
        "mul",
        [(a, lambda g: _reduce_to(g * bv, av.shape)), (b, lambda g: _reduce_to(g * av, bv.shape))],
    )


def div(a, b):
    _check_same(a, b, "div")
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _emit(
        out,
        "div",
        [
            (a, lambda g: _reduce_to(g / bv, av.shape)),
            (b, lambda g: _reduce_to(-g * out / bv, bv.shape)),
        ],
    )


def _unary(x, op, fwd, dfwd):
    xv = value_of(x)
    out = fwd(xv)
    return _emit(out, op, [(x, lambda g: g * dfwd(xv, out))])


def exp(x):
    return _unary(x, "exp", np.exp, lambda x, y: y)


def log(x):
    return _unary(x, "log", np.log, lambda x, y: 1.0 / x)


def sqrt(x):
    return _unary(x, "sqrt", np.sqrt, lambda x, y: 0.5 / y)


def square(x):
    return _unary(x, "square", np.square, lambda x, y: 2.0 * x)


def sin(x):
    return _unary(x, "sin", np.sin, lambda x, y: np.cos(x))


def cos(x):
    return _unary(x, "cos", np.cos, lambda x, y: -np.sin(x))


def hinge(x):
    """max(x, 0); the derivative at 0 is taken from the flat side (0)."""
    return _unary(x, "hinge", lambda v: np.maximum(v, 0.0), lambda x, y: (x > 0).astype(float))


def leaky_relu(x, slope=0.2):
    return _unary(
        x,
        "leaky_relu",
        lambda v: np.where(v > 0, v, slope * v),
        lambda x, y: np.where(x > 0, 1.0, slope),
    )


def maximum(a, b):
    """Elementwise max.  Ties send no gradient to either side."""
    _check_same(a, b, "maximum")
    av, bv = value_of(a), value_of(b)
    return _emit(
        np.maximum(av, bv),
        "maximum",
        [
            (a, lambda g: _reduce_to(g * (av > bv), av.shape)),
            (b, lambda g: _reduce_to(g * (bv > av), bv.shape)),
        ],
    )


def atan2(y, x):
    _check_same(y, x, "atan2")
    yv, xv = value_of(y), value_of(x)
    r2 = yv * yv + xv * xv
    return _emit(
        np.arctan2(yv, xv),
        "atan2",
        [
            (y, lambda g: _reduce_to(g * xv / r2, yv.shape)),
            (x, lambda g: _reduce_to(-g * yv / r2, xv.shape)),
        ],
    )


# ------------------------------------------------------------------ reductions


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    xv = value_of(x)
    out = np.sum(xv, axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, xv.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy()

    return _emit(np.asarray(out, dtype=float), "sum", [(x, vjp)])


def mean(x, axis=None):
    xv = value_of(x)
    n = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


# ------------------------------------------------------------------- structure


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2 or av.ndim != bv.ndim or av.shape[:-2] != bv.shape[:-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims differ {av.shape} @ {bv.shape}")
    return _emit(
        av @ bv,
        "matmul",
        [
            (a, lambda g: g @ np.swapaxes(bv, -1, -2)),
            (b, lambda g: np.swapaxes(av, -1, -2) @ g),
        ],
    )


def einsum(subscripts, a, b):
    """Two-operand einsum with explicit output subscripts.

    Each input index must appear in the other operand or in the output, so
    every VJP is itself an einsum.
    """
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, other in ((sa, sb + out), (sb, sa + out)):
        if len(set(s)) != len(s) or any(ch not in other for ch in s):
            raise ShapeMismatch(f"einsum {subscripts!r} not supported for autodiff")
    av, bv = value_of(a), value_of(b)
    try:
        val = np.einsum(subscripts, av, bv, optimize=True)
    except ValueError as exc:
        raise ShapeMismatch(f"einsum {subscripts!r}: {exc}") from None
    return _emit(
        val,
        "einsum",
        [
            (a, lambda g: np.einsum(f"{out},{sb}->{sa}", g, bv, optimize=True)),
            (b, lambda g: np.einsum(f"{out},{sa}->{sb}", g, av, optimize=True)),
        ],
    )


def transpose(x, axes=None):
    xv = value_of(x)
    axes = tuple(reversed(range(xv.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _emit(np.transpose(xv, axes), "transpose", [(x, lambda g: np.transpose(g, inv))])


def swapaxes(x, a1=-1, a2=-2):
    axes = list(range(value_of(x).ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, axes)


def reshape(x, shape):
    xv = value_of(x)
    return _emit(xv.reshape(shape), "reshape", [(x, lambda g: g.reshape(xv.shape))])


def broadcast_to(x, shape):
    """Explicit broadcast; the VJP sums over the broadcast axes."""
    xv = value_of(x)
    shape = tuple(shape)
    lead = len(shape) - xv.ndim
    if lead < 0:
        raise ShapeMismatch(f"broadcast_to: {xv.shape} -> {shape}")
    try:
        out = np.broadcast_to(xv, shape).copy()
    except ValueError:
        raise ShapeMismatch(f"broadcast_to: {xv.shape} -> {shape}") from None

    def vjp(g):
        g = np.sum(g, axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, n in enumerate(xv.shape) if n == 1 and shape[lead + i] != 1)
        if keep:
            g = np.sum(g, axis=keep, keepdims=True)
        return g

    return _emit(out, "broadcast_to", [(x, vjp)])


def getitem(x, idx):
    xv = value_of(x)
    out = xv[idx]

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return full

    return _emit(np.array(out, dtype=float), "getitem", [(x, vjp)])


def concat(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def piece(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            return g[tuple(sl)]

        return vjp

    return _emit(out, "concat", [(x, piece(i)) for i, x in enumerate(xs)])


def stack(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def piece(i):
        return lambda g: np.take(g, i, axis=axis)

    return _emit(out, "stack", [(x, piece(i)) for i, x in enumerate(xs)])


# ------------------------------------------------------------------- rotations


def rodrigues(aa):
    """Axis-angle (..., 3) -> rotation matrices (..., 3, 3)."""
    v = value_of(aa)
    if v.shape[-1:] != (3,):
        raise ShapeMismatch(f"rodrigues expects (..., 3), got {v.shape}")
    theta = np.linalg.norm(v, axis=-1)
    a, b, c, d = rot.rodrigues_coefficients(theta)
    k = rot.hat(v)
    k2 = k @ k
    out = np.eye(3) + a[..., None, None] * k + b[..., None, None] * k2

    def vjp(g):
        gk = g @ k
        kg = k @ g
        term_a = rot.vee_antisym(g)
        term_b = rot.vee_antisym(-gk - kg)
        radial = c * np.sum(g * k, axis=(-2, -1)) + d * np.sum(g * k2, axis=(-2, -1))
        return a[..., None] * term_a + b[..., None] * term_b + radial[..., None] * v

    return _emit(out, "rodrigues", [(aa, vjp)])


def rotation_log(R):
    """Rotation matrices (..., 3, 3) -> canonical axis-angle (..., 3).

    The input must already be a proper rotation (e.g. the output of
    :func:`project_rotation`).  The derivative is exact away from angle pi.
    """
    Rv = value_of(R)
    out = rot._log_unchecked(Rv)
    w = 0.5 * rot.vee_antisym(Rv)
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(Rv, axis1=-2, axis2=-1) - 1.0)
    r2 = s * s + c * c
    theta = np.arctan2(s, c)
    small = s < 1e-4
    s_safe = np.where(small, 1.0, s)
    g_val = np.where(small, 1.0 / c - s * s / (3.0 * c**3), theta / s_safe)
    # (dg/ds) / s
    gs_over_s = np.where(small, -2.0 / (3.0 * c**3), (c * s / r2 - theta) / s_safe**3)
    g_c = -1.0 / r2

    def vjp(g):
        wg = np.sum(w * g, axis=-1)
        gw = g_val[..., None] * g + (wg * gs_over_s)[..., None] * w
        gc = wg * g_c
        return 0.5 * rot.hat(gw) + 0.5 * gc[..., None, None] * np.eye(3)

    return _emit(out, "rotation_log", [(R, vjp)])


def project_rotation(m):
    """Nearest rotation via SVD; backward is the polar-factor differential."""
    mv = value_of(m)
    out, (u, sig, vt) = rot.project_to_rotation(mv, return_svd=True)
    denom = sig[..., :, None] + sig[..., None, :]
    inv = 1.0 / np.maximum(denom, 1e-12)

    def vjp(g):
        v = np.swapaxes(vt, -1, -2)
        b = np.swapaxes(u, -1, -2) @ g @ v
        core = (b - np.swapaxes(b, -1, -2)) * inv
        return u @ core @ vt

    return _emit(out, "project_rotation", [(m, vjp)])


def euler_angles(R, convention):
    """Differentiable intrinsic Euler decomposition (..., 3, 3) -> (..., 3).

    Smooth away from gimbal lock; callers needing the gimbal flag should use
    :func:`dexfit.rotations.matrix_to_euler` on the values.
    """
    i, j, k, eps = rot.parse_convention(convention)
    e = (Ellipsis,)
    r_ii, r_ij, r_ik = R[e + (i, i)], R[e + (i, j)], R[e + (i, k)]
    a = atan2(-eps * R[e + (j, k)], R[e + (k, k)])
    c = atan2(-eps * r_ij, r_ii)
    cos_mid = sqrt(square(r_ii) + square(r_ij))
    b = atan2(eps * r_ik, cos_mid)
    return stack([a, b, c], axis=-1)


# -------------------------------------------------------------------- backward


def gradient(objective, wrt):
    """Reverse sweep from a scalar ``objective``; returns one array per ``wrt``.

    Vars that the objective does not depend on get zeros.
    """
    if not isinstance(objective, Var):
        return [np.zeros_like(value_of(w)) for w in wrt]
    if objective.value.shape != ():
        raise NotScalar(f"objective must be scalar, got shape {objective.value.shape}")
    tape = objective.tape
    wanted = {w.id for w in wrt if isinstance(w, Var)}
    grads = {objective.id: np.ones(())}
    found = {}
    for idx in range(objective.id, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        if idx in wanted:
            found[idx] = g
        for pid, vjp in tape.nodes[idx].parents:
            contrib = vjp(g)
            prev = grads.get(pid)
            grads[pid] = contrib if prev is None else prev + contrib
    out = []
    for w in wrt:
        if isinstance(w, Var) and w.id in found:
            out.append(np.array(found[w.id], dtype=float).reshape(w.shape))
        else:
            out.append(np.zeros_like(value_of(w)))
    return out


def value_and_grad(fn, x):
    """Evaluate ``fn(var)`` on a fresh tape and return (value, gradient) for a flat x."""
    tape = Tape()
    xv = tape.var(x)
    f = fn(xv)
    (g,) = gradient(f, [xv])
    return float(value_of(f)), g
