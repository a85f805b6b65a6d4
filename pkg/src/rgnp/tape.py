"""Reverse-mode automatic differentiation on numpy arrays.

A ``Var`` wraps an ``ndarray`` and records enough structure to pull
gradients back to every leaf it was computed from.  The module-level
functions (``exp``, ``matmul``, ...) accept either ``Var`` or plain
array inputs, so the same numerical code runs in a differentiable mode
during training and a plain-numpy mode everywhere else.

Everything is float64.  The graph is built eagerly; ``backward`` walks
nodes in reverse creation order, which is a valid topological order
because children are always created after their parents.
"""

import itertools

import numpy as np
import scipy.linalg
from scipy.special import expit

__all__ = [
    "Var",
    "backward",
    "value",
    "stop_gradient",
    "exp",
    "log",
    "sqrt",
    "square",
    "sin",
    "cos",
    "sigmoid",
    "softplus",
    "vsum",
    "vmean",
    "matmul",
    "concat",
    "reshape",
    "transpose",
    "take",
    "pad_last",
    "posdef_solve",
    "posdef_logdet",
    "SingularCovarianceError",
]


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when a covariance factorization fails (inner Cholesky)."""


_ids = itertools.count()


class Var:
    """Node in the autodiff graph: a value plus pullbacks to its parents."""

    __slots__ = ("val", "grad", "_parents", "_id")
    # Refuse numpy ufunc dispatch so `ndarray <op> Var` falls back to the
    # reflected dunder instead of silently building an object array.
    __array_ufunc__ = None

    def __init__(self, val, parents=()):
        self.val = np.asarray(val, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._id = next(_ids)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    def __repr__(self):
        return f"Var(shape={self.val.shape}, id={self._id})"

    # -- arithmetic dunders ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        out = self.val[idx]
        x = self

        def pb(g):
            gx = np.zeros_like(x.val)
            np.add.at(gx, idx, g)
            return gx

        return Var(out, ((x, pb),))

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def value(x):
    """Underlying ndarray of a Var, or the input coerced to an array."""
    if isinstance(x, Var):
        return x.val
    return np.asarray(x, dtype=np.float64)


def stop_gradient(x):
    """Detach from the graph: same value, no gradient flow."""
    if isinstance(x, Var):
        return x.val
    return x


def backward(root, seed=None):
    """Accumulate gradients of ``root`` into every reachable leaf's .grad."""
    if not isinstance(root, Var):
        raise TypeError("backward() needs a Var root")
    nodes = []
    seen = set()
    stack = [root]
    while stack:
        v = stack.pop()
        if v._id in seen:
            continue
        seen.add(v._id)
        nodes.append(v)
        for p, _ in v._parents:
            if p._id not in seen:
                stack.append(p)
    nodes.sort(key=lambda v: v._id, reverse=True)
    for v in nodes:
        v.grad = None
    root.grad = np.ones_like(root.val) if seed is None else np.asarray(seed, dtype=np.float64)
    for v in nodes:
        g = v.grad
        if g is None:
            continue
        for p, pb in v._parents:
            contrib = pb(g)
            if p.grad is None:
                p.grad = contrib
            else:
                p.grad = p.grad + contrib


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _is_var(x):
    return isinstance(x, Var)


# -- binary ops --------------------------------------------------------------


def add(a, b):
    if not _is_var(a) and not _is_var(b):
        return np.add(a, b)
    av, bv = value(a), value(b)
    parents = []
    if _is_var(a):
        parents.append((a, lambda g: _unbroadcast(g, av.shape)))
    if _is_var(b):
        parents.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return Var(av + bv, tuple(parents))


def sub(a, b):
    if not _is_var(a) and not _is_var(b):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    parents = []
    if _is_var(a):
        parents.append((a, lambda g: _unbroadcast(g, av.shape)))
    if _is_var(b):
        parents.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return Var(av - bv, tuple(parents))


def mul(a, b):
    if not _is_var(a) and not _is_var(b):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    parents = []
    if _is_var(a):
        parents.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if _is_var(b):
        parents.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return Var(av * bv, tuple(parents))


def div(a, b):
    if not _is_var(a) and not _is_var(b):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    parents = []
    if _is_var(a):
        parents.append((a, lambda g: _unbroadcast(g / bv, av.shape)))
    if _is_var(b):
        parents.append((b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))
    return Var(av / bv, tuple(parents))


def power(a, p):
    if not _is_var(a):
        return np.power(a, p)
    av = a.val
    out = av**p
    return Var(out, ((a, lambda g: g * p * av ** (p - 1)),))


def matmul(a, b):
    if not _is_var(a) and not _is_var(b):
        return np.matmul(a, b)
    av, bv = value(a), value(b)
    a1 = av.ndim == 1
    b1 = bv.ndim == 1
    a2 = av[None, :] if a1 else av
    b2 = bv[:, None] if b1 else bv
    out = np.matmul(a2, b2)

    def pull_a(g):
        g2 = _regrow(g, a1, b1, out.shape)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        ga = _unbroadcast(ga, a2.shape)
        return ga[0] if a1 else ga

    def pull_b(g):
        g2 = _regrow(g, a1, b1, out.shape)
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        gb = _unbroadcast(gb, b2.shape)
        return gb[:, 0] if b1 else gb

    parents = []
    if _is_var(a):
        parents.append((a, pull_a))
    if _is_var(b):
        parents.append((b, pull_b))
    res = out
    if a1:
        res = res[0] if res.ndim == 2 else np.squeeze(res, axis=-2)
    if b1:
        res = res[..., 0]
    return Var(res, tuple(parents))


def _regrow(g, a1, b1, full_shape):
    """Re-insert the axes squeezed away for 1-D matmul operands."""
    if b1:
        g = g[..., None]
    if a1:
        g = g[None, :] if g.ndim == len(full_shape) - 1 else np.expand_dims(g, axis=-2)
    return g.reshape(full_shape)


# -- elementwise -------------------------------------------------------------


def exp(x):
    if not _is_var(x):
        return np.exp(x)
    out = np.exp(x.val)
    return Var(out, ((x, lambda g: g * out),))


def log(x):
    if not _is_var(x):
        return np.log(x)
    xv = x.val
    return Var(np.log(xv), ((x, lambda g: g / xv),))


def sqrt(x):
    if not _is_var(x):
        return np.sqrt(x)
    out = np.sqrt(x.val)
    return Var(out, ((x, lambda g: g * 0.5 / out),))


def square(x):
    if not _is_var(x):
        return np.square(x)
    xv = x.val
    return Var(xv * xv, ((x, lambda g: g * 2.0 * xv),))


def sin(x):
    if not _is_var(x):
        return np.sin(x)
    xv = x.val
    return Var(np.sin(xv), ((x, lambda g: g * np.cos(xv)),))


def cos(x):
    if not _is_var(x):
        return np.cos(x)
    xv = x.val
    return Var(np.cos(xv), ((x, lambda g: -g * np.sin(xv)),))


def sigmoid(x):
    if not _is_var(x):
        return expit(x)
    out = expit(x.val)
    return Var(out, ((x, lambda g: g * out * (1.0 - out)),))


def softplus(x):
    """log(1 + e^x), evaluated stably for large |x|."""
    if not _is_var(x):
        return np.logaddexp(0.0, x)
    xv = x.val
    return Var(np.logaddexp(0.0, xv), ((x, lambda g: g * expit(xv)),))


# -- reductions / structure ---------------------------------------------------


def vsum(x, axis=None, keepdims=False):
    if not _is_var(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xv = x.val
    out = np.sum(xv, axis=axis, keepdims=keepdims)

    def pb(g):
        if axis is None:
            return np.broadcast_to(g, xv.shape).copy() if np.ndim(g) else np.full_like(xv, g)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis=axis)
        return np.broadcast_to(gg, xv.shape).copy()

    return Var(out, ((x, pb),))


def vmean(x, axis=None, keepdims=False):
    n = value(x).size if axis is None else value(x).shape[axis]
    return div(vsum(x, axis=axis, keepdims=keepdims), float(n))


def concat(parts, axis=0):
    if not any(_is_var(p) for p in parts):
        return np.concatenate(parts, axis=axis)
    vals = [value(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        if not _is_var(p):
            continue
        lo, hi = offsets[i], offsets[i + 1]

        def pb(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        parents.append((p, pb))
    return Var(out, tuple(parents))


def reshape(x, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    if not _is_var(x):
        return np.reshape(x, shape)
    xv = x.val
    return Var(xv.reshape(shape), ((x, lambda g: g.reshape(xv.shape)),))


def transpose(x, axes):
    if not _is_var(x):
        return np.transpose(x, axes)
    inv = np.argsort(axes)
    return Var(np.transpose(x.val, axes), ((x, lambda g: np.transpose(g, inv)),))


def take(x, idx, axis):
    """Gather along ``axis`` with an arbitrary-shape integer index array."""
    idx = np.asarray(idx)
    if not _is_var(x):
        return np.take(x, idx, axis=axis)
    xv = x.val
    out = np.take(xv, idx, axis=axis)
    ax = axis % xv.ndim

    def pb(g):
        gx = np.zeros_like(xv)
        np.add.at(gx, (slice(None),) * ax + (idx,), g)
        return gx

    return Var(out, ((x, pb),))


def pad_last(x, before, after, n_axes=1):
    """Zero-pad the trailing ``n_axes`` axes by (before, after) each."""
    spec = [(0, 0)] * (value(x).ndim - n_axes) + [(before, after)] * n_axes
    if not _is_var(x):
        return np.pad(x, spec)
    xv = x.val
    sl = tuple(slice(b, None if a == 0 else -a) for b, a in spec)

    def pb(g):
        return g[sl]

    return Var(np.pad(xv, spec), ((x, pb),))


# -- small positive-definite linear algebra -----------------------------------


def _chol(a):
    try:
        c, lower = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularCovarianceError(f"covariance factorization failed: {e}") from e
    return c, lower


def posdef_solve(a, b):
    """Solve A x = b for symmetric positive-definite A (small systems)."""
    av, bv = value(a), value(b)
    cf = _chol(av)
    b2 = bv[:, None] if bv.ndim == 1 else bv
    y = scipy.linalg.cho_solve(cf, b2, check_finite=False)
    if not _is_var(a) and not _is_var(b):
        return y[:, 0] if bv.ndim == 1 else y

    def pull_a(g):
        g2 = g[:, None] if bv.ndim == 1 else g
        bbar = scipy.linalg.cho_solve(cf, g2, check_finite=False)
        return -bbar @ y.T

    def pull_b(g):
        g2 = g[:, None] if bv.ndim == 1 else g
        bbar = scipy.linalg.cho_solve(cf, g2, check_finite=False)
        return bbar[:, 0] if bv.ndim == 1 else bbar

    parents = []
    if _is_var(a):
        parents.append((a, pull_a))
    if _is_var(b):
        parents.append((b, pull_b))
    return Var(y[:, 0] if bv.ndim == 1 else y, tuple(parents))


def posdef_logdet(a):
    """log det A for symmetric positive-definite A via Cholesky."""
    av = value(a)
    c, lower = _chol(av)
    out = 2.0 * np.sum(np.log(np.diag(c)))
    if not _is_var(a):
        return out

    def pb(g):
        inv = scipy.linalg.cho_solve((c, lower), np.eye(av.shape[0]), check_finite=False)
        return g * inv

    return Var(np.float64(out), ((a, pb),))
