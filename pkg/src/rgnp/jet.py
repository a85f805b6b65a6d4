"""Truncated second-order jets: value, first and pure-second partials.

A ``Jet`` carries a field value together with its derivatives with
respect to a fixed ordered set of input coordinates.  Entries may be
plain arrays or tape ``Var``s, so parameter gradients flow through
derivative computations.  ``hess`` entries can be ``None`` for
coordinates whose second derivative was not propagated; arithmetic
keeps them ``None`` and consuming one raises.  ``mixed`` maps
coordinate pairs (i, j), i < j, to cross partials; ``None`` means no
mixed dependence (treated as zero when combined with a tracked jet).
"""

from dataclasses import dataclass

__all__ = ["Jet", "const_jet", "jet_compose"]


def _both(fa, fb, op):
    if fa is None or fb is None:
        return None
    return op(fa, fb)


def _mixed_keys(a, b):
    ka = set() if a.mixed is None else set(a.mixed)
    kb = set() if b.mixed is None else set(b.mixed)
    return sorted(ka | kb)


def _mget(j, key):
    if j.mixed is None:
        return 0.0
    return j.mixed[key]


@dataclass
class Jet:
    value: object
    grad: list
    hess: list
    mixed: dict = None

    @property
    def n_coords(self):
        return len(self.grad)

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.value + other, list(self.grad), list(self.hess),
                       None if self.mixed is None else dict(self.mixed))
        g = [a + b for a, b in zip(self.grad, other.grad)]
        h = [_both(a, b, lambda x, y: x + y) for a, b in zip(self.hess, other.hess)]
        if self.mixed is None and other.mixed is None:
            m = None
        else:
            m = {k: _mget(self, k) + _mget(other, k) for k in _mixed_keys(self, other)}
        return Jet(self.value + other.value, g, h, m)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (other * -1.0 if isinstance(other, Jet) else -other)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            # scale by a constant (scalar or array without coordinate dependence)
            g = [a * other for a in self.grad]
            h = [None if a is None else a * other for a in self.hess]
            m = None if self.mixed is None else {k: v * other for k, v in self.mixed.items()}
            return Jet(self.value * other, g, h, m)
        a, b = self, other
        val = a.value * b.value
        g = [ga * b.value + a.value * gb for ga, gb in zip(a.grad, b.grad)]
        h = []
        for k in range(a.n_coords):
            if a.hess[k] is None or b.hess[k] is None:
                h.append(None)
            else:
                h.append(a.hess[k] * b.value + 2.0 * a.grad[k] * b.grad[k] + a.value * b.hess[k])
        if a.mixed is None and b.mixed is None:
            m = None
        else:
            m = {}
            for (i, j) in _mixed_keys(a, b):
                m[(i, j)] = (
                    _mget(a, (i, j)) * b.value
                    + a.grad[i] * b.grad[j]
                    + a.grad[j] * b.grad[i]
                    + a.value * _mget(b, (i, j))
                )
        return Jet(val, g, h, m)

    __rmul__ = __mul__


def const_jet(value, grad=None, hess=None, mixed=None, like=None, n_coords=None):
    """Jet of a known coordinate function (no trainable dependence).

    ``grad``/``hess`` default to zeros; ``like`` supplies the coordinate
    count and mixed-key set of an existing jet.
    """
    if like is not None:
        n_coords = like.n_coords
        if mixed is None and like.mixed is not None:
            mixed = {k: 0.0 for k in like.mixed}
    if n_coords is None:
        raise ValueError("const_jet needs n_coords or like=")
    g = list(grad) if grad is not None else [0.0] * n_coords
    h = list(hess) if hess is not None else [0.0] * n_coords
    return Jet(value, g, h, mixed)


def jet_compose(f, f1, f2, u):
    """Jet of y = F(u) given F, F', F'' evaluated at u.value.

    ``f``, ``f1``, ``f2`` are the already-evaluated value and first two
    derivatives of the outer scalar function at ``u.value``.
    """
    g = [f1 * gu for gu in u.grad]
    h = [None if hu is None else f2 * gu * gu + f1 * hu for gu, hu in zip(u.grad, u.hess)]
    if u.mixed is None:
        m = None
    else:
        m = {k: f2 * u.grad[k[0]] * u.grad[k[1]] + f1 * v for k, v in u.mixed.items()}
    return Jet(f, g, h, m)
