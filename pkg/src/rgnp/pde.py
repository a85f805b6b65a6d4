"""Residual operators, parameter priors, and problem definitions.

Three problems are provided: "poisson1d" (nonlinear diffusion on
[-1, 1]), "burgers" (space-time on [-1, 1] x [0, 1]), and "ns-lid"
(lid-driven cavity on [0, 1]^2 x [0, 1], momentum + scaled divergence
residuals).  Residual operators act pointwise on lifted field jets and
are vectorized over collocation points; parameters enter as per-point
constant rows.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as _cheb

from . import tape
from .domain import BoxDomain, burgers_lift, ns_lift, poisson_lift
from .errors import ResidualEvalError
from .jet import const_jet, jet_compose
from .tape import value

__all__ = [
    "BoundaryCondition",
    "ResidualProblem",
    "chebyshev_eval",
    "burgers_ic",
    "get_problem",
    "PROBLEM_NAMES",
]


@dataclass
class BoundaryCondition:
    name: str
    field: int
    sample: object  # fn(rng, n) -> (n, d) boundary points
    target: object  # fn(points, w) -> (n,) prescribed values


@dataclass
class ResidualProblem:
    """A PDE: differential operator, priors, boundary lift, residual noise model."""

    name: str
    domain: BoxDomain
    field_names: tuple
    z_lo: np.ndarray
    z_hi: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray
    lift: object
    residual_fn: object
    residual_arity: int
    hess_coords: tuple  # wrt slots needing second derivatives
    eps_r_learnable: bool
    conditions: list
    conv_plan: str
    divergence_scale: float = 10.0

    @property
    def dim(self):
        return self.domain.dim

    @property
    def n_fields(self):
        return len(self.field_names)

    @property
    def z_dim(self):
        return len(self.z_lo)

    @property
    def w_dim(self):
        return len(self.w_lo)

    def sample_z(self, rng):
        return rng.uniform(self.z_lo, self.z_hi)

    def sample_w(self, rng):
        if self.w_dim == 0:
            return np.zeros(0)
        return rng.uniform(self.w_lo, self.w_hi)

    def residual(self, z_pt, w_pt, lifted_jets, points):
        """Stacked residual over points; z_pt/w_pt are per-point parameter rows."""
        r = self.residual_fn(self, z_pt, w_pt, lifted_jets, points)
        rv = value(r)
        if not np.all(np.isfinite(rv)):
            bad = np.nonzero(~np.isfinite(rv))[0][0] % points.shape[0]
            raise ResidualEvalError(f"non-finite residual near x = {points[bad]}")
        return r


def chebyshev_eval(coeffs, x):
    """Sum of first-kind Chebyshev polynomials and its first two derivatives.

    Returns (value, d/dx, d2/dx2) at ``x`` in [-1, 1] (Clenshaw
    recurrence via numpy.polynomial).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < -1.0) | (x > 1.0)):
        raise ValueError("chebyshev argument outside [-1, 1]")
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size < 1:
        raise ValueError("coeffs must be a non-empty vector")
    val = _cheb.chebval(x, c)
    d1 = _cheb.chebval(x, _cheb.chebder(c, 1)) if c.size > 1 else np.zeros_like(x)
    d2 = _cheb.chebval(x, _cheb.chebder(c, 2)) if c.size > 2 else np.zeros_like(x)
    return val, d1, d2


def _cheb_rows(coeff_rows, x):
    """Per-point expansions: row i of coeff_rows evaluated at x[i]."""
    c = np.ascontiguousarray(coeff_rows.T)  # (n_coeff, n)
    val = _cheb.chebval(x, c, tensor=False)
    d1 = _cheb.chebval(x, _cheb.chebder(c, 1), tensor=False) if c.shape[0] > 1 else np.zeros_like(x)
    d2 = _cheb.chebval(x, _cheb.chebder(c, 2), tensor=False) if c.shape[0] > 2 else np.zeros_like(x)
    return val, d1, d2


def burgers_ic(w, x):
    """Initial profile sin(2 pi w x) sin(pi x)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < -1.0) | (x > 1.0)):
        raise ValueError("x outside [-1, 1]")
    ww = float(np.asarray(w).ravel()[0])
    return np.sin(2 * np.pi * ww * x) * np.sin(np.pi * x)


# -- residual operators ----------------------------------------------------------


def _poisson_residual(problem, z_pt, w_pt, lifted, points):
    """d/dx( k(u, x) du/dx ) - w with k = softplus(u * sum_i z_i T_i(x)) + 0.1."""
    u = lifted[0]
    phi_val, phi_d1, phi_d2 = _cheb_rows(z_pt, points[:, 0])
    phi = const_jet(phi_val, grad=[phi_d1], hess=[phi_d2], like=u)
    a = u * phi
    sg = tape.sigmoid(a.value)
    k = jet_compose(tape.softplus(a.value), sg, sg * (1.0 - sg), a)  # + 0.1 only shifts the value
    return k.grad[0] * u.grad[0] + (k.value + 0.1) * u.hess[0] - w_pt[:, 0]


def _burgers_residual(problem, z_pt, w_pt, lifted, points):
    """u_t + z1 u u_x - z0 u_xx."""
    u = lifted[0]
    return u.grad[1] + z_pt[:, 1] * u.value * u.grad[0] - z_pt[:, 0] * u.hess[0]


def _ns_residual(problem, z_pt, w_pt, lifted, points):
    """Momentum-x, momentum-y, and the scaled divergence, stacked."""
    u1, u2, p = lifted
    rho = z_pt[:, 0]
    nu = z_pt[:, 1]
    r1 = (
        rho * u1.grad[2]
        + rho * (u1.value * u1.grad[0] + u2.value * u1.grad[1])
        + p.grad[0]
        - nu * (u1.hess[0] + u1.hess[1])
    )
    r2 = (
        rho * u2.grad[2]
        + rho * (u1.value * u2.grad[0] + u2.value * u2.grad[1])
        + p.grad[1]
        - nu * (u2.hess[0] + u2.hess[1])
    )
    r3 = problem.divergence_scale * (u1.grad[0] + u2.grad[1])
    return tape.concat([r1, r2, r3], axis=0)


# -- boundary-condition declarations ----------------------------------------------


def _poisson_conditions():
    def walls(rng, n):
        return rng.choice([-1.0, 1.0], size=n)[:, None]

    return [BoundaryCondition("poisson-walls", 0, walls, lambda p, w: np.zeros(p.shape[0]))]


def _burgers_conditions():
    def walls(rng, n):
        x = rng.choice([-1.0, 1.0], size=n)
        t = rng.uniform(0, 1, size=n)
        return np.column_stack([x, t])

    def initial(rng, n):
        x = rng.uniform(-1, 1, size=n)
        return np.column_stack([x, np.zeros(n)])

    return [
        BoundaryCondition("burgers-walls", 0, walls, lambda p, w: np.zeros(p.shape[0])),
        BoundaryCondition("burgers-initial", 0, initial, lambda p, w: burgers_ic(w, p[:, 0])),
    ]


def _ns_conditions():
    def lid(rng, n):
        return np.column_stack([rng.uniform(0, 1, n), np.ones(n), rng.uniform(0, 1, n)])

    def u1_walls(rng, n):
        # the three zero walls for u1: x = 0, x = 1, y = 0
        x = rng.uniform(0, 1, n)
        y = rng.uniform(0, 1, n)
        t = rng.uniform(0, 1, n)
        kinds = rng.integers(0, 3, size=n)
        px = np.where(kinds == 0, 0.0, np.where(kinds == 1, 1.0, x))
        py = np.where(kinds == 2, 0.0, y)
        return np.column_stack([px, py, t])

    def all_walls(rng, n):
        x = rng.uniform(0, 1, n)
        y = rng.uniform(0, 1, n)
        t = rng.uniform(0, 1, n)
        kinds = rng.integers(0, 4, size=n)
        px = np.where(kinds == 0, 0.0, np.where(kinds == 1, 1.0, x))
        py = np.where(kinds == 2, 0.0, np.where(kinds == 3, 1.0, y))
        return np.column_stack([px, py, t])

    def initial(rng, n):
        return np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n), np.zeros(n)])

    lid_profile = lambda p, w: (1.0 - (2.0 * p[:, 0] - 1.0) ** 6) * p[:, 2]
    zero = lambda p, w: np.zeros(p.shape[0])
    return [
        BoundaryCondition("ns-lid", 0, lid, lid_profile),
        BoundaryCondition("ns-u1-walls", 0, u1_walls, zero),
        BoundaryCondition("ns-u2-walls", 1, all_walls, zero),
        BoundaryCondition("ns-initial-u1", 0, initial, zero),
        BoundaryCondition("ns-initial-u2", 1, initial, zero),
    ]


# -- registry ---------------------------------------------------------------------

PROBLEM_NAMES = ("poisson1d", "burgers", "ns-lid")


def get_problem(name, n_z=4, divergence_scale=10.0):
    """Problem registry; ``n_z`` sets the Poisson diffusion-expansion size."""
    if name == "poisson1d":
        return ResidualProblem(
            name=name,
            domain=BoxDomain((-1.0,), (1.0,)),
            field_names=("u",),
            z_lo=np.full(n_z, -1.0),
            z_hi=np.full(n_z, 1.0),
            w_lo=np.array([1.0]),
            w_hi=np.array([2.0]),
            lift=poisson_lift(),
            residual_fn=_poisson_residual,
            residual_arity=1,
            hess_coords=(0,),
            eps_r_learnable=False,
            conditions=_poisson_conditions(),
            conv_plan="1d",
        )
    if name == "burgers":
        return ResidualProblem(
            name=name,
            domain=BoxDomain((-1.0, 0.0), (1.0, 1.0)),
            field_names=("u",),
            z_lo=np.array([1e-2, 0.5]),
            z_hi=np.array([1e-1, 1.0]),
            w_lo=np.array([0.5]),
            w_hi=np.array([2.0]),
            lift=burgers_lift(),
            residual_fn=_burgers_residual,
            residual_arity=1,
            hess_coords=(0,),
            eps_r_learnable=True,
            conditions=_burgers_conditions(),
            conv_plan="2d",
        )
    if name == "ns-lid":
        return ResidualProblem(
            name=name,
            domain=BoxDomain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
            field_names=("u1", "u2", "p"),
            z_lo=np.array([0.8, 0.1]),
            z_hi=np.array([1.0, 1.0]),
            w_lo=np.zeros(0),
            w_hi=np.zeros(0),
            lift=ns_lift(),
            residual_fn=_ns_residual,
            residual_arity=3,
            hess_coords=(0, 1),
            eps_r_learnable=False,
            conditions=_ns_conditions(),
            conv_plan="alt",
            divergence_scale=divergence_scale,
        )
    raise ValueError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")
