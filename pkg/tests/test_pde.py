"""Residual operators against trivial identities and reference interpolants."""

import numpy as np
import pytest
import sympy as sp

from helpers import rel_err
from rgnp.domain import boundary_lift_apply
from rgnp.jet import Jet
from rgnp.mlp import mlp_eval_jet, mlp_init
from rgnp.pde import burgers_ic, chebyshev_eval, get_problem
from rgnp.reference import solve_burgers, solve_poisson
from rgnp.tape import value

K0 = np.log(2.0) + 0.1  # softplus(0) + 0.1


def zero_jet(n, d):
    z = np.zeros(n)
    return Jet(z.copy(), [z.copy() for _ in range(d)], [z.copy() for _ in range(d)], None)


# -- chebyshev -----------------------------------------------------------------


def test_chebyshev_constant():
    val, d1, d2 = chebyshev_eval([1.0], np.linspace(-1, 1, 7))
    assert np.allclose(val, 1.0)
    assert np.allclose(d1, 0.0)
    assert np.allclose(d2, 0.0)


def test_chebyshev_t2_value():
    val, _, _ = chebyshev_eval([0.0, 0.0, 1.0], np.array([0.5]))
    assert np.isclose(val[0], -0.5)  # T2(0.5) = 2*0.25 - 1


def test_chebyshev_derivatives_vs_fd(rng):
    c = rng.normal(size=5)
    x = rng.uniform(-0.95, 0.95, size=50)
    val, d1, d2 = chebyshev_eval(c, x)
    h = 1e-6
    fd1 = (chebyshev_eval(c, x + h)[0] - chebyshev_eval(c, x - h)[0]) / (2 * h)
    assert rel_err(d1, fd1, floor=1e-6) < 1e-8
    h = 1e-4
    fd2 = (chebyshev_eval(c, x + h)[0] - 2 * val + chebyshev_eval(c, x - h)[0]) / h**2
    assert rel_err(d2, fd2, floor=1e-4) < 1e-6


def test_chebyshev_domain_error():
    with pytest.raises(ValueError):
        chebyshev_eval([1.0, 2.0], np.array([1.5]))


# -- poisson -------------------------------------------------------------------


def test_poisson_residual_zero_field(rng):
    problem = get_problem("poisson1d")
    n = 20
    pts = rng.uniform(-0.9, 0.9, size=(n, 1))
    z = np.tile(rng.uniform(-1, 1, 4), (n, 1))
    w = np.full((n, 1), 1.7)
    r = problem.residual(z, w, [zero_jet(n, 1)], pts)
    assert np.allclose(r, -1.7)  # k(0) = log 2 + 0.1, all field derivatives vanish


def test_poisson_residual_constant_diffusion(rng):
    # z = 0 kills the x-dependence of k: r = (log2 + 0.1) u_xx - w
    problem = get_problem("poisson1d")
    n = 15
    pts = rng.uniform(-0.9, 0.9, size=(n, 1))
    z = np.zeros((n, 4))
    w = np.full((n, 1), 1.2)
    val = rng.normal(size=n)
    g = rng.normal(size=n)
    h = rng.normal(size=n)
    jet = Jet(val, [g], [h], None)
    r = problem.residual(z, w, [jet], pts)
    assert np.allclose(r, K0 * h - 1.2, atol=1e-12)


def test_poisson_linear_in_w(rng):
    problem = get_problem("poisson1d")
    n = 10
    pts = rng.uniform(-0.9, 0.9, size=(n, 1))
    z = np.tile(rng.uniform(-1, 1, 4), (n, 1))
    jet = Jet(rng.normal(size=n), [rng.normal(size=n)], [rng.normal(size=n)], None)
    r1 = problem.residual(z, np.full((n, 1), 1.1), [jet], pts)
    r2 = problem.residual(z, np.full((n, 1), 1.9), [jet], pts)
    assert np.allclose(r2 - r1, 1.1 - 1.9, atol=1e-12)


def _interpolant_jet(sol, pts, coords=("x",)):
    if len(coords) == 1:
        val = sol(pts)
        g = [sol.derivative(pts, dx=1)]
        h = [sol.derivative(pts, dx=2)]
    else:
        val = sol(pts)
        g = [sol.derivative(pts, dx=1, dt=0), sol.derivative(pts, dx=0, dt=1)]
        h = [sol.derivative(pts, dx=2, dt=0), sol.derivative(pts, dx=0, dt=2)]
    return Jet(val, g, h, None)


def test_poisson_residual_of_reference_interpolant(rng):
    problem = get_problem("poisson1d")
    z = rng.uniform(-1, 1, size=4)
    w = np.array([1.5])
    sol = solve_poisson(z, w, n_nodes=513)
    x = np.linspace(-0.95, 0.95, 101)[:, None]
    jet = _interpolant_jet(sol, x)
    r = problem.residual(np.tile(z, (101, 1)), np.tile(w, (101, 1)), [jet], x)
    assert np.max(np.abs(r)) <= 1e-3


def test_poisson_residual_refinement_order(rng):
    problem = get_problem("poisson1d")
    z = rng.uniform(-1, 1, size=4)
    w = np.array([1.4])
    x = np.linspace(-0.9, 0.9, 64)[:, None]
    norms = []
    for n in (129, 257, 513):
        sol = solve_poisson(z, w, n_nodes=n)
        jet = _interpolant_jet(sol, x)
        r = problem.residual(np.tile(z, (64, 1)), np.tile(w, (64, 1)), [jet], x)
        norms.append(np.max(np.abs(value(r))))
    orders = np.log2(np.array(norms[:-1]) / np.array(norms[1:]))
    assert np.min(orders) >= 1.5


# -- burgers -------------------------------------------------------------------


def test_burgers_residual_zero_and_constant(rng):
    problem = get_problem("burgers")
    n = 12
    pts = np.column_stack([rng.uniform(-0.9, 0.9, n), rng.uniform(0.1, 0.9, n)])
    z = np.tile([0.05, 0.8], (n, 1))
    w = np.full((n, 1), 1.0)
    r = problem.residual(z, w, [zero_jet(n, 2)], pts)
    assert np.allclose(r, 0.0)
    const = Jet(np.full(n, 2.5), [np.zeros(n), np.zeros(n)], [np.zeros(n), np.zeros(n)], None)
    r2 = problem.residual(z, w, [const], pts)
    assert np.allclose(r2, 0.0)


def test_burgers_ic_values():
    assert burgers_ic(1.0, np.array([0.0]))[0] == 0.0
    assert abs(burgers_ic(1.0, np.array([1.0]))[0]) < 1e-15
    assert np.isclose(burgers_ic(1.0, np.array([0.25]))[0], np.sqrt(2) / 2)


def test_burgers_residual_of_reference_interpolant(rng):
    problem = get_problem("burgers")
    z = np.array([0.06, 0.8])
    w = np.array([1.1])
    sol = solve_burgers(z[0], z[1], w, nx=256, nt=256)
    pts = np.column_stack([rng.uniform(-0.8, 0.8, 200), rng.uniform(0.1, 0.9, 200)])
    jet = _interpolant_jet(sol, pts, coords=("x", "t"))
    r = problem.residual(np.tile(z, (200, 1)), np.tile(w, (200, 1)), [jet], pts)
    assert np.max(np.abs(value(r))) <= 1e-2


# -- navier-stokes --------------------------------------------------------------


def test_ns_residual_zero_fields():
    problem = get_problem("ns-lid")
    n = 9
    pts = np.random.default_rng(0).uniform(0.1, 0.9, size=(n, 3))
    z = np.tile([0.9, 0.5], (n, 1))
    r = value(problem.residual(z, np.zeros((n, 0)), [zero_jet(n, 3) for _ in range(3)], pts))
    assert r.shape == (3 * n,)
    assert np.allclose(r, 0.0)


def test_ns_divergence_vanishes_on_stream_function_nets(rng):
    problem = get_problem("ns-lid")
    n = 8
    pts = rng.uniform(0.1, 0.9, size=(n, 3))
    worst = 0.0
    for _ in range(50):
        psi_net = mlp_init([3, 12, 12, 1], rng)
        psi = mlp_eval_jet(psi_net, pts, wrt=(0, 1, 2), mixed=True)
        # u1 = psi_y, u2 = -psi_x: first derivatives come from psi's hessian/mixed
        u1 = Jet(
            value(psi.grad[1])[:, 0],
            [value(psi.mixed[(0, 1)])[:, 0], value(psi.hess[1])[:, 0], value(psi.mixed[(1, 2)])[:, 0]],
            [np.zeros(n), np.zeros(n), np.zeros(n)],
            None,
        )
        u2 = Jet(
            -value(psi.grad[0])[:, 0],
            [-value(psi.hess[0])[:, 0], -value(psi.mixed[(0, 1)])[:, 0], -value(psi.mixed[(0, 2)])[:, 0]],
            [np.zeros(n), np.zeros(n), np.zeros(n)],
            None,
        )
        p = zero_jet(n, 3)
        r = value(problem.residual(np.tile([0.9, 0.5], (n, 1)), np.zeros((n, 0)), [u1, u2, p], pts))
        div = r[2 * n :] / problem.divergence_scale
        worst = max(worst, np.max(np.abs(div)))
    assert worst <= 1e-10


def test_ns_manufactured_solution_matches_symbolic_oracle(rng):
    problem = get_problem("ns-lid")
    x, y, t, rho, nu = sp.symbols("x y t rho nu")
    u1s = sp.sin(sp.pi * x) * sp.cos(sp.pi * y) * t**2
    u2s = -sp.cos(sp.pi * x) * sp.sin(sp.pi * y) * t**2
    ps = sp.sin(sp.pi * x) * sp.sin(sp.pi * y) * t
    mom = lambda u: (
        rho * sp.diff(u, t)
        + rho * (u1s * sp.diff(u, x) + u2s * sp.diff(u, y))
        - nu * (sp.diff(u, x, 2) + sp.diff(u, y, 2))
    )
    r1s = mom(u1s) + sp.diff(ps, x)
    r2s = mom(u2s) + sp.diff(ps, y)
    r3s = 10 * (sp.diff(u1s, x) + sp.diff(u2s, y))
    oracle = sp.lambdify((x, y, t, rho, nu), [r1s, r2s, r3s], "numpy")

    def field_jet(expr):
        fs = {}
        fs["v"] = sp.lambdify((x, y, t), expr, "numpy")
        grads = [sp.lambdify((x, y, t), sp.diff(expr, c), "numpy") for c in (x, y, t)]
        hess = [sp.lambdify((x, y, t), sp.diff(expr, c, 2), "numpy") for c in (x, y, t)]
        def build(pts):
            a = (pts[:, 0], pts[:, 1], pts[:, 2])
            return Jet(fs["v"](*a), [g(*a) for g in grads], [h(*a) for h in hess], None)
        return build

    pts = rng.uniform(0.1, 0.9, size=(30, 3))
    jets = [field_jet(e)(pts) for e in (u1s, u2s, ps)]
    zrow = np.tile([0.93, 0.37], (30, 1))
    r = value(problem.residual(zrow, np.zeros((30, 0)), jets, pts))
    ref = oracle(pts[:, 0], pts[:, 1], pts[:, 2], 0.93, 0.37)
    ref = np.concatenate([np.broadcast_to(np.asarray(c, dtype=float), (30,)) for c in ref])
    assert np.max(np.abs(r - ref)) <= 1e-8


def test_residual_permutation_equivariance(rng):
    problem = get_problem("poisson1d")
    n = 25
    pts = rng.uniform(-0.9, 0.9, size=(n, 1))
    z = np.tile(rng.uniform(-1, 1, 4), (n, 1))
    w = np.full((n, 1), 1.5)
    jet = Jet(rng.normal(size=n), [rng.normal(size=n)], [rng.normal(size=n)], None)
    r = value(problem.residual(z, w, [jet], pts))
    perm = rng.permutation(n)
    jet_p = Jet(jet.value[perm], [jet.grad[0][perm]], [jet.hess[0][perm]], None)
    r_p = value(problem.residual(z[perm], w[perm], [jet_p], pts[perm]))
    assert np.array_equal(np.sort(r), np.sort(r_p))
    assert np.array_equal(r[perm], r_p)
