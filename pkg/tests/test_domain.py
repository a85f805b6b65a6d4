"""Grids, boundary lifts, and the lift validator."""

import numpy as np
import pytest

from helpers import rel_err
from rgnp.domain import (
    BoxDomain,
    boundary_check,
    boundary_lift_apply,
    burgers_lift,
    lift_values,
    ns_lift,
    poisson_lift,
    rng_stream,
    sample_grid,
)
from rgnp.errors import LiftMismatchError
from rgnp.jet import Jet, const_jet
from rgnp.pde import burgers_ic, get_problem


def test_sample_grid_open_box(rng):
    dom = BoxDomain((-1.0,), (1.0,))
    g = sample_grid(dom, 30, rng)
    assert g.points.shape == (30, 1)
    assert np.all((g.points > -1.0) & (g.points < 1.0))


def test_sample_grid_deterministic():
    dom = BoxDomain((0.0, 0.0), (1.0, 1.0))
    a = sample_grid(dom, 50, rng_stream(7, "grid"))
    b = sample_grid(dom, 50, rng_stream(7, "grid"))
    assert np.array_equal(a.points, b.points)


def test_sample_grid_uniform_means():
    dom = BoxDomain((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    g = sample_grid(dom, 100_000, rng_stream(3, "grid"))
    assert np.all(np.abs(g.points.mean(axis=0) - 0.5) < 0.01)


def test_sample_grid_bad_n(rng):
    with pytest.raises(ValueError):
        sample_grid(BoxDomain((0.0,), (1.0,)), 0, rng)


def test_rng_stream_independence():
    a = rng_stream(1, "x").standard_normal(5)
    b = rng_stream(1, "y").standard_normal(5)
    c = rng_stream(1, "x").standard_normal(5)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def _const_field_jet(values, n_coords, rng=None):
    g = [np.zeros_like(values) for _ in range(n_coords)]
    return Jet(values, list(g), [np.zeros_like(values) for _ in range(n_coords)], None)


def test_poisson_lift_zeroes_boundary(rng):
    lift = poisson_lift()
    pts = np.array([[1.0], [-1.0]])
    raw = _const_field_jet(rng.normal(size=2), 1)
    lifted = boundary_lift_apply(lift, [raw], pts, w=np.array([1.5]))
    assert np.allclose(np.abs(lifted[0].value), 0.0, atol=1e-12)


def test_burgers_lift_initial_condition(rng):
    lift = burgers_lift()
    w = np.array([1.3])
    x = rng.uniform(-1, 1, size=20)
    pts = np.column_stack([x, np.zeros(20)])
    raw = _const_field_jet(rng.normal(size=20), 2)
    lifted = boundary_lift_apply(lift, [raw], pts, w=w)
    assert np.allclose(lifted[0].value, burgers_ic(w, x), atol=1e-12)


@pytest.mark.parametrize("name", ["poisson1d", "burgers", "ns-lid"])
def test_lift_derivatives_match_finite_differences(name, rng):
    problem = get_problem(name)
    lift = problem.lift
    d = problem.dim
    w = problem.sample_w(rng) if problem.w_dim else None
    lo = np.asarray(problem.domain.lo) + 0.1
    hi = np.asarray(problem.domain.hi) - 0.1
    pts = rng.uniform(lo, hi, size=(40, d))

    # raw field u(x) = prod sin(1 + x_c), supplied as an exact jet
    def raw_jets(p):
        vals = np.prod(np.sin(1 + p), axis=1)
        grads = [vals / np.tan(1 + p[:, c]) for c in range(d)]
        hess = [-vals for _ in range(d)]
        return [Jet(vals.copy(), [g.copy() for g in grads], [h.copy() for h in hess], None)
                for _ in range(problem.n_fields)]

    lifted = boundary_lift_apply(lift, raw_jets(pts), pts, w=w)

    def shifted(c, h):
        pp, pm = pts.copy(), pts.copy()
        pp[:, c] += h
        pm[:, c] -= h
        up = [j.value for j in boundary_lift_apply(lift, raw_jets(pp), pp, w=w)]
        um = [j.value for j in boundary_lift_apply(lift, raw_jets(pm), pm, w=w)]
        return up, um

    for c in range(d):
        up1, um1 = shifted(c, 1e-5)
        upa, uma = shifted(c, 1e-3)
        upb, umb = shifted(c, 5e-4)
        for f in range(problem.n_fields):
            fd1 = (up1[f] - um1[f]) / 2e-5
            assert rel_err(lifted[f].grad[c], fd1, floor=1e-4) < 1e-6
            # Richardson-extrapolated second difference kills the h^2 term
            da = (upa[f] - 2 * lifted[f].value + uma[f]) / 1e-6
            db = (upb[f] - 2 * lifted[f].value + umb[f]) / 2.5e-7
            fd2 = (4 * db - da) / 3
            assert rel_err(lifted[f].hess[c], fd2, floor=1e-2) < 1e-4


def test_boundary_check_passes_all_problems():
    for name in ("poisson1d", "burgers", "ns-lid"):
        problem = get_problem(name)
        report = boundary_check(problem.lift, problem, n=1000, seed=11)
        assert max(report.values()) <= 1e-12


def test_ns_lid_value():
    lift = ns_lift()
    pts = np.array([[0.5, 1.0, 1.0]])
    bval = lift.b_fns[0](pts, None)[0]
    assert np.isclose(bval[0], 1.0, atol=1e-14)  # (1 - 0^6) * 1


def test_boundary_check_rejects_wrong_d():
    problem = get_problem("poisson1d")
    lift = poisson_lift()
    lift.d_fns[0] = lambda pts: (np.ones(pts.shape[0]), [np.zeros(pts.shape[0])], [np.zeros(pts.shape[0])], None)
    with pytest.raises(LiftMismatchError):
        boundary_check(lift, problem, n=100, seed=0)


def test_lift_values_matches_jet_values(rng):
    problem = get_problem("burgers")
    w = problem.sample_w(rng)
    pts = rng.uniform([-0.9, 0.1], [0.9, 0.9], size=(15, 2))
    raw = rng.normal(size=(15, 1))
    jets = [_const_field_jet(raw[:, 0], 2)]
    via_jets = boundary_lift_apply(problem.lift, jets, pts, w=w)[0].value
    via_vals = lift_values(problem.lift, raw, pts, w=w)
    assert np.allclose(via_vals[:, 0], via_jets)
