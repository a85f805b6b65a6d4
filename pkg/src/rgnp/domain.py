"""Domain geometry, random collocation grids, and Dirichlet boundary lifts.

A lift pair (B, D) turns any raw field u into u_bar = B + D * u that
satisfies the problem's Dirichlet/initial conditions exactly: B matches
the prescribed boundary values and D vanishes on the constrained part
of the boundary.  Both come with analytic first/second derivatives so
residual operators can act on the lifted field.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import LiftMismatchError
from .jet import Jet, const_jet
from .tape import value

__all__ = [
    "BoxDomain",
    "RandomGrid",
    "BoundaryLift",
    "rng_stream",
    "sample_grid",
    "w_rows",
    "boundary_lift_apply",
    "lift_values",
    "lift_gaussian",
    "boundary_check",
    "poisson_lift",
    "burgers_lift",
    "ns_lift",
]


def rng_stream(master_seed, *tags):
    """Deterministic, independent generator derived from a master seed and tags."""
    ints = [int(master_seed) & 0xFFFFFFFF]
    for t in tags:
        if isinstance(t, str):
            ints.append(zlib.crc32(t.encode()))
        else:
            ints.append(int(t) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(ints))


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("need lo < hi per coordinate")

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, points, open_box=True):
        p = np.atleast_2d(points)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if open_box:
            return np.all((p > lo) & (p < hi), axis=1)
        return np.all((p >= lo) & (p <= hi), axis=1)


@dataclass
class RandomGrid:
    points: np.ndarray  # (n, d)
    stream: object = None  # seed / stream tag used to draw the grid

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def sample_grid(domain, n, rng, boundary_bias=0.0, stream=None):
    """n i.i.d. draws from the grid measure over the open box.

    The default measure is uniform.  ``boundary_bias`` in [0, 1) mixes
    in an edge-concentrated density (off by default).
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = rng_stream(rng, "grid")
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    u = rng.uniform(size=(n, domain.dim))
    if boundary_bias > 0.0:
        pick = rng.uniform(size=(n, domain.dim)) < boundary_bias
        edged = np.where(u < 0.5, 0.5 * (2 * u) ** 3, 1.0 - 0.5 * (2 * (1 - u)) ** 3)
        u = np.where(pick, edged, u)
    # keep points strictly interior (u == 0 is possible, if vanishingly rare)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return RandomGrid(points=lo + (hi - lo) * u, stream=stream)


@dataclass
class BoundaryLift:
    """Per-field lift pair; fns return (value, [d1...], [d2...], {mixed}) arrays."""

    n_fields: int
    d_fns: list  # field -> fn(points) -> triple+mixed
    b_fns: list  # field -> fn(points, w) -> triple+mixed
    identity_fields: tuple = ()  # fields passed through unchanged (e.g. pressure gauge)


def _as_const_jet(triple, like):
    val, grads, hess, mixed = triple
    mx = None
    if like.mixed is not None:
        mx = {k: (mixed.get(k, 0.0) if mixed else 0.0) for k in like.mixed}
    return Jet(val, [grads[i] for i in range(like.n_coords)],
               [hess[i] for i in range(like.n_coords)], mx)


def w_rows(w, n):
    """Normalize w to per-point rows (n, n_w); accepts scalar/vector/rows/None."""
    if w is None:
        return None
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if w.ndim == 1:
        return np.broadcast_to(w, (n, w.size))
    return w


def boundary_lift_apply(lift, raw_jets, points, w=None):
    """u_bar = B + D * u per field, derivatives composed by the product rule."""
    wr = w_rows(w, points.shape[0])
    out = []
    for f, u in enumerate(raw_jets):
        if f in lift.identity_fields:
            out.append(u)
            continue
        d_jet = _as_const_jet(lift.d_fns[f](points), like=u)
        b_jet = _as_const_jet(lift.b_fns[f](points, wr), like=u)
        out.append(b_jet + d_jet * u)
    return out


def lift_values(lift, raw_values, points, w=None):
    """Value-only lift: raw_values (n, n_fields) -> lifted (n, n_fields)."""
    wr = w_rows(w, points.shape[0])
    cols = []
    rv = raw_values
    for f in range(lift.n_fields):
        col = rv[:, f]
        if f in lift.identity_fields:
            cols.append(col)
            continue
        dv = lift.d_fns[f](points)[0]
        bv = lift.b_fns[f](points, wr)[0]
        cols.append(bv + dv * col)
    from . import tape

    return tape.concat([tape.reshape(c, (-1, 1)) for c in cols], axis=1)


def lift_gaussian(lift, gauss, points, w=None):
    """Push a stacked per-field Gaussian through the (affine) lift.

    mean -> B + D mean, lambda -> D^2 lambda, V -> D V, blockwise per field.
    """
    from . import tape
    from .gauss import LowRankGaussian

    n = points.shape[0]
    wr = w_rows(w, n)
    dvals, bvals = [], []
    for f in range(lift.n_fields):
        if f in lift.identity_fields:
            dvals.append(np.ones(n))
            bvals.append(np.zeros(n))
        else:
            dvals.append(lift.d_fns[f](points)[0])
            bvals.append(lift.b_fns[f](points, wr)[0])
    d = np.concatenate(dvals)
    b = np.concatenate(bvals)
    mean = b + d * gauss.mean
    lam = (d * d) * gauss.lam
    v = None if gauss.V is None or gauss.rank == 0 else gauss.V * tape.reshape(d, (-1, 1))
    return LowRankGaussian(mean, lam, v)


def boundary_check(lift, problem, n=1000, seed=0, tol=1e-12):
    """Validate the lift against the problem's declared conditions.

    Samples ``n`` points per condition, asserts |D| <= tol there and
    that B reproduces the prescribed values to tol.  Returns the max
    violation per condition; raises LiftMismatchError on failure.
    """
    rng = rng_stream(seed, "boundary-check")
    report = {}
    for cond in problem.conditions:
        pts = cond.sample(rng, n)
        w = problem.sample_w(rng) if problem.w_dim else None
        dval = np.abs(lift.d_fns[cond.field](pts)[0])
        bval = lift.b_fns[cond.field](pts, w_rows(w, n))[0]
        target = cond.target(pts, w)
        d_viol = float(np.max(dval)) if np.size(dval) else 0.0
        b_viol = float(np.max(np.abs(bval - target)))
        report[cond.name] = max(d_viol, b_viol)
        if d_viol > tol:
            raise LiftMismatchError(f"{cond.name}: D reaches {d_viol:.3e} on the boundary")
        if b_viol > tol:
            raise LiftMismatchError(f"{cond.name}: B misses the prescribed values by {b_viol:.3e}")
    return report


# -- concrete lifts -------------------------------------------------------------


def poisson_lift():
    """1D lift: D(x) = cos(pi x / 2) vanishing at x = +-1, B = 0."""

    def d_fn(points):
        x = points[:, 0]
        c = np.cos(np.pi * x / 2)
        s = np.sin(np.pi * x / 2)
        return c, [-0.5 * np.pi * s], [-0.25 * np.pi**2 * c], None

    def b_fn(points, w):
        z = np.zeros(points.shape[0])
        return z, [z], [z], None

    return BoundaryLift(n_fields=1, d_fns=[d_fn], b_fns=[b_fn])


def burgers_lift():
    """(x, t) lift: D = sin(pi x) t kills walls and t=0; B carries the IC."""

    def d_fn(points):
        x, t = points[:, 0], points[:, 1]
        sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
        val = sx * t
        return (
            val,
            [np.pi * cx * t, sx],
            [-np.pi**2 * sx * t, np.zeros_like(t)],
            {(0, 1): np.pi * cx},
        )

    def b_fn(points, w):
        # initial profile, constant in t: sin(2 pi w x) sin(pi x); w given per-point
        x = points[:, 0]
        a = 2 * np.pi * w[:, 0]
        s1, c1 = np.sin(a * x), np.cos(a * x)
        s2, c2 = np.sin(np.pi * x), np.cos(np.pi * x)
        val = s1 * s2
        dx = a * c1 * s2 + np.pi * s1 * c2
        dxx = -(a**2) * s1 * s2 + 2 * a * np.pi * c1 * c2 - np.pi**2 * s1 * s2
        z = np.zeros_like(x)
        return val, [dx, z], [dxx, z], {(0, 1): z}

    return BoundaryLift(n_fields=1, d_fns=[d_fn], b_fns=[b_fn])


def ns_lift():
    """(x, y, t) lift for lid-driven cavity: velocities via D = sin(pi x) sin(pi y) t.

    B for the horizontal velocity reproduces the moving lid
    (1 - (2x-1)^6) t at y = 1 and vanishes on the other walls and at
    t = 0.  Pressure is passed through; its single-point gauge is fixed
    at prediction time by subtracting the corner value.
    """

    def d_fn(points):
        x, y, t = points[:, 0], points[:, 1], points[:, 2]
        sx, cx = np.sin(np.pi * x), np.cos(np.pi * x)
        sy, cy = np.sin(np.pi * y), np.cos(np.pi * y)
        val = sx * sy * t
        d = [np.pi * cx * sy * t, np.pi * sx * cy * t, sx * sy]
        h = [-np.pi**2 * sx * sy * t, -np.pi**2 * sx * sy * t, np.zeros_like(t)]
        m = {
            (0, 1): np.pi**2 * cx * cy * t,
            (0, 2): np.pi * cx * sy,
            (1, 2): np.pi * sx * cy,
        }
        return val, d, h, m

    def b_u1(points, w):
        x, y, t = points[:, 0], points[:, 1], points[:, 2]
        q = 2 * x - 1
        lid = 1.0 - q**6
        lid_x = -12.0 * q**5
        lid_xx = -120.0 * q**4
        y4, y3, y2 = y**4, y**3, y**2
        val = lid * t * y4
        d = [lid_x * t * y4, lid * t * 4 * y3, lid * y4]
        h = [lid_xx * t * y4, lid * t * 12 * y2, np.zeros_like(t)]
        m = {
            (0, 1): lid_x * t * 4 * y3,
            (0, 2): lid_x * y4,
            (1, 2): lid * 4 * y3,
        }
        return val, d, h, m

    def b_zero(points, w):
        z = np.zeros(points.shape[0])
        return z, [z, z, z], [z, z, z], {(0, 1): z, (0, 2): z, (1, 2): z}

    return BoundaryLift(
        n_fields=3,
        d_fns=[d_fn, d_fn, None],
        b_fns=[b_u1, b_zero, None],
        identity_fields=(2,),
    )
