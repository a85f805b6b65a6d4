"""Low-rank Gaussian algebra vs dense oracles; sigma_t shape checks."""

import numpy as np
import pytest
import scipy.stats

from helpers import fd_scalar_grad, rel_err
from rgnp import tape
from rgnp.gauss import (
    DiagGaussian,
    ExpLinearBounds,
    LowRankGaussian,
    diag_logpdf,
    lr_logdet,
    lr_logpdf,
    lr_sample,
    lr_solve,
    sigma_t,
    sigma_t_inverse,
    sigma_t_with_derivs,
    stack_fields,
)
from rgnp.tape import SingularCovarianceError, Var, backward, value


def random_lowrank(rng, n, l):
    return LowRankGaussian(
        mean=rng.normal(size=n),
        lam=rng.uniform(0.2, 2.0, size=n),
        V=rng.normal(size=(n, l)) if l else None,
    ).validate()


# -- sigma_t -------------------------------------------------------------------


def test_sigma_t_limits():
    assert np.isclose(sigma_t(-1e3), 1e-5, atol=1e-12)
    assert np.isclose(sigma_t(1e6), 1.0, atol=2e-6)
    b = ExpLinearBounds(lo=0.5, hi=3.0)
    assert np.isclose(sigma_t(-1e3, b), 0.5, atol=1e-9)
    assert np.isclose(sigma_t(1e6, b), 3.0, atol=1e-5)


def test_sigma_t_monotone_and_bounded(rng):
    x = np.sort(rng.uniform(-30, 30, size=2000))
    y = sigma_t(x)
    assert np.all(np.diff(y) > 0)
    assert np.all(y > 1e-5) and np.all(y < 1.0)


def test_sigma_t_derivatives_positive_and_consistent(rng):
    x = rng.uniform(-10, 10, size=200)
    f, f1, f2 = sigma_t_with_derivs(x)
    assert np.allclose(f, sigma_t(x))
    assert np.all(f1 > 0)
    fd1 = (sigma_t(x + 1e-6) - sigma_t(x - 1e-6)) / 2e-6
    fd2 = (sigma_t(x + 1e-4) - 2 * sigma_t(x) + sigma_t(x - 1e-4)) / 1e-8
    assert rel_err(f1, fd1, floor=1e-10) < 1e-6
    assert rel_err(f2, fd2, floor=1e-8) < 1e-4


def test_sigma_t_inverse_round_trip():
    for y in (1.1e-5, 1e-3, 0.1, 0.5, 0.99):
        assert np.isclose(sigma_t(sigma_t_inverse(y)), y, rtol=1e-10)


# -- sampling ------------------------------------------------------------------


def test_sample_zero_noise_returns_mean(rng):
    g = random_lowrank(rng, 6, 2)
    out = lr_sample(g, np.zeros(6), np.zeros(2))
    assert np.array_equal(out, g.mean)


def test_sample_identity_diag_shift(rng):
    g = LowRankGaussian(mean=rng.normal(size=5), lam=np.ones(5), V=None)
    eps = rng.normal(size=5)
    assert np.allclose(lr_sample(g, eps), g.mean + eps)


def test_sample_empirical_covariance(rng):
    n, l, m = 8, 2, 200_000
    g = random_lowrank(rng, n, l)
    el = rng.standard_normal(size=(m, n))
    ev = rng.standard_normal(size=(m, l))
    draws = g.mean + np.sqrt(g.lam) * el + ev @ g.V.T
    emp = np.cov(draws.T)
    cov = g.dense_cov()
    frob = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
    assert frob < 0.05


def test_sample_shape_mismatch_raises(rng):
    g = random_lowrank(rng, 4, 2)
    with pytest.raises(ValueError):
        lr_sample(g, np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        lr_sample(g, np.zeros(4), np.zeros(3))


# -- solve / logdet / logpdf ---------------------------------------------------


def test_solve_hand_case():
    # Lambda = I, V = [1, 0]^T  =>  Sigma = diag(2, 1); Sigma x = [2, 1] -> x = [1, 1]
    g = LowRankGaussian(mean=np.zeros(2), lam=np.ones(2), V=np.array([[1.0], [0.0]]))
    assert np.allclose(lr_solve(g, np.array([2.0, 1.0])), [1.0, 1.0])
    assert np.isclose(lr_logdet(g), np.log(2.0))


def test_logpdf_at_mean_hand_case():
    g = LowRankGaussian(mean=np.zeros(2), lam=np.ones(2), V=np.array([[1.0], [0.0]]))
    expect = -np.log(2 * np.pi) - 0.5 * np.log(2.0)
    assert np.isclose(lr_logpdf(g, g.mean), expect, rtol=1e-14)


def test_solve_diag_shortcut(rng):
    g = random_lowrank(rng, 7, 0)
    a = rng.normal(size=7)
    assert np.allclose(lr_solve(g, a), a / g.lam)
    assert np.isclose(lr_logdet(g), np.sum(np.log(g.lam)))


def test_against_dense_oracles(rng):
    for n, l in [(64, 4), (32, 3), (128, 8), (16, 1)]:
        g = random_lowrank(rng, n, l)
        cov = g.dense_cov()
        a = rng.normal(size=n)
        assert rel_err(lr_solve(g, a), np.linalg.solve(cov, a)) < 1e-10
        assert abs(lr_logdet(g) - np.linalg.slogdet(cov)[1]) < 1e-8
        x = rng.normal(size=n)
        ref = scipy.stats.multivariate_normal(mean=g.mean, cov=cov).logpdf(x)
        assert abs(lr_logpdf(g, x) - ref) < 1e-8


def test_logpdf_translation_invariance(rng):
    g = random_lowrank(rng, 10, 2)
    x = rng.normal(size=10)
    shifted = LowRankGaussian(g.mean + 3.7, g.lam, g.V)
    assert np.isclose(lr_logpdf(g, x), lr_logpdf(shifted, x + 3.7), rtol=1e-9)


def test_duplicate_columns_raise():
    # duplicate columns + vanishing diagonal: the inner matrix I + V^T L^-1 V
    # is rank-one up to roundoff and its Cholesky must fail loudly
    col = np.ones((6, 1))
    lam = np.full(6, 1e-30)
    g = LowRankGaussian(mean=np.zeros(6), lam=lam, V=np.hstack([col, col]))
    with pytest.raises(SingularCovarianceError):
        lr_solve(g, np.ones(6))


def test_diag_logpdf_matches_lowrank_exactly(rng):
    mean = rng.normal(size=9)
    var = rng.uniform(0.1, 2.0, size=9)
    x = rng.normal(size=9)
    a = diag_logpdf(mean, var, x)
    b = lr_logpdf(LowRankGaussian(mean, var, None), x)
    assert float(a) == float(b)


def test_diag_gaussian_reference(rng):
    mean = rng.normal(size=5)
    var = rng.uniform(0.5, 1.5, size=5)
    x = rng.normal(size=5)
    ref = np.sum(scipy.stats.norm(loc=mean, scale=np.sqrt(var)).logpdf(x))
    assert np.isclose(DiagGaussian(mean, var).logpdf(x), ref, rtol=1e-12)


def test_logpdf_gradients_match_fd(rng):
    n, l = 12, 3
    g = random_lowrank(rng, n, l)
    x = rng.normal(size=n)

    def make(mean, lam, v):
        return lr_logpdf(LowRankGaussian(mean, lam, v), x)

    vm, vl_, vv = Var(g.mean), Var(g.lam), Var(g.V)
    out = make(vm, vl_, vv)
    backward(out)
    assert rel_err(vm.grad, fd_scalar_grad(lambda m: float(make(m, g.lam, g.V)), g.mean), floor=1e-5) < 1e-5
    assert rel_err(vl_.grad, fd_scalar_grad(lambda la: float(make(g.mean, la, g.V)), g.lam), floor=1e-5) < 1e-5
    assert rel_err(vv.grad, fd_scalar_grad(lambda v: float(make(g.mean, g.lam, v)), g.V), floor=1e-5) < 1e-5


# -- stacking ------------------------------------------------------------------


def test_stack_block_diagonal_when_v_zero(rng):
    m = rng.normal(size=4)
    lam = rng.uniform(0.5, 1.0, size=4)
    g = stack_fields([(m, lam, np.zeros((4, 1))), (m, lam, np.zeros((4, 1)))])
    cov = g.dense_cov()
    assert np.allclose(cov[:4, 4:], 0.0)
    assert np.allclose(cov[:4, :4], np.diag(lam))


def test_stack_shared_ones_column_cross_block(rng):
    m = rng.normal(size=3)
    lam = np.ones(3)
    v = np.ones((3, 1))
    g = stack_fields([(m, lam, v), (m, lam, v)])
    cov = g.dense_cov()
    assert np.allclose(cov[:3, 3:], np.ones((3, 3)))


def test_stack_matches_dense_blockwise_assembly(rng):
    fields = [(rng.normal(size=5), rng.uniform(0.2, 1.0, size=5), rng.normal(size=(5, 2))) for _ in range(3)]
    g = stack_fields(fields)
    vs = np.vstack([f[2] for f in fields])
    dense = np.diag(np.concatenate([f[1] for f in fields])) + vs @ vs.T
    assert np.allclose(g.dense_cov(), dense)
    assert np.allclose(value(g.mean), np.concatenate([f[0] for f in fields]))


def test_stack_rank_mismatch_raises(rng):
    with pytest.raises(ValueError):
        stack_fields([
            (np.zeros(3), np.ones(3), np.zeros((3, 1))),
            (np.zeros(3), np.ones(3), np.zeros((3, 2))),
        ])


def test_woodbury_round_trip_property(rng):
    for _ in range(20):
        n = int(rng.integers(4, 64))
        l = int(rng.integers(1, min(8, n)))
        g = random_lowrank(rng, n, l)
        a = rng.normal(size=n)
        x = lr_solve(g, a)
        back = g.lam * x + g.V @ (g.V.T @ x)
        assert rel_err(back, a) < 1e-9
