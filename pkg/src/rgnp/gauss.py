"""Structured multivariate Gaussians with diag-plus-low-rank covariance.

Covariances are Lambda + V V^T with positive diagonal Lambda (n,) and a
rectangular factor V (n, l), l << n.  Linear solves use the Woodbury
identity, log-determinants the matrix determinant lemma, and sampling
the factorized form  mean + sqrt(lambda) * eps_l + V eps_V,  so no
n x n matrix is ever formed.  All functions accept tape ``Var`` or
plain arrays.
"""

from dataclasses import dataclass

import numpy as np

from . import tape
from .tape import value

__all__ = [
    "DiagGaussian",
    "LowRankGaussian",
    "ExpLinearBounds",
    "sigma_t",
    "sigma_t_with_derivs",
    "lr_sample",
    "lr_solve",
    "lr_logdet",
    "lr_logpdf",
    "stack_fields",
    "diag_logpdf",
]

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ExpLinearBounds:
    """Positive interval (lo, hi) for squashed scale outputs."""

    lo: float = 1e-5
    hi: float = 1.0

    def validate(self):
        if not (0.0 < self.lo < self.hi):
            raise ValueError(f"need 0 < lo < hi, got ({self.lo}, {self.hi})")
        return self


@dataclass
class DiagGaussian:
    """Independent Gaussian with per-coordinate variance."""

    mean: object
    var: object

    def logpdf(self, x):
        return diag_logpdf(self.mean, self.var, x)

    def sample(self, eps):
        return self.mean + tape.sqrt(self.var) * eps


@dataclass
class LowRankGaussian:
    """Gaussian with covariance diag(lam) + V V^T (V may be None for diagonal)."""

    mean: object
    lam: object
    V: object = None

    @property
    def n(self):
        return value(self.mean).shape[0]

    @property
    def rank(self):
        return 0 if self.V is None else value(self.V).shape[1]

    def validate(self):
        n = self.n
        lam = value(self.lam)
        if lam.shape != (n,):
            raise ValueError("lambda shape mismatch")
        if np.any(lam <= 0.0):
            raise ValueError("lambda must be strictly positive")
        if self.V is not None:
            v = value(self.V)
            if v.ndim != 2 or v.shape[0] != n:
                raise ValueError("V shape mismatch")
            if v.shape[1] > n:
                raise ValueError("rank exceeds dimension")
        return self

    def marginal_std(self):
        """Pointwise standard deviations sqrt(lam_i + ||V_i||^2)."""
        lam = self.lam
        if self.V is None or self.rank == 0:
            return tape.sqrt(lam)
        return tape.sqrt(lam + tape.vsum(tape.square(self.V), axis=1))

    def dense_cov(self):
        """n x n covariance; test/diagnostic use only."""
        cov = np.diag(value(self.lam))
        if self.V is not None and self.rank > 0:
            v = value(self.V)
            cov = cov + v @ v.T
        return cov


def sigma_t(x, bounds=None):
    """Smooth monotone squash of the real line into (lo, hi).

    Exponential-like for large negative inputs, saturating toward hi:
    lo + (hi - lo) * t/(1+t) with t = softplus(x).
    """
    b = bounds or ExpLinearBounds()
    t = tape.softplus(x)
    return b.lo + (b.hi - b.lo) * t / (1.0 + t)


def sigma_t_with_derivs(x, bounds=None):
    """(value, d/dx, d2/dx2) of sigma_t, for jet composition."""
    b = bounds or ExpLinearBounds()
    t = tape.softplus(x)
    s = tape.sigmoid(x)
    den = 1.0 + t
    scale = b.hi - b.lo
    f = b.lo + scale * t / den
    f1 = scale * s / tape.square(den)
    f2 = scale * (s * (1.0 - s) / tape.square(den) - 2.0 * tape.square(s) / (den * tape.square(den)))
    return f, f1, f2


def sigma_t_inverse(y, bounds=None):
    """Raw value x with sigma_t(x) = y (plain float; used for initialization)."""
    b = bounds or ExpLinearBounds()
    s = (y - b.lo) / (b.hi - b.lo)
    if not 0.0 < s < 1.0:
        raise ValueError("target outside (lo, hi)")
    t = s / (1.0 - s)
    return float(np.log(np.expm1(t)))


def _check_vec(g, x, name):
    if value(x).shape != (g.n,):
        raise ValueError(f"{name} shape {value(x).shape} does not match dimension {g.n}")


def lr_sample(g, eps_lambda, eps_v=None):
    """Draw mean + sqrt(lam)*eps_lambda + V @ eps_v (caller supplies the noise)."""
    _check_vec(g, eps_lambda, "eps_lambda")
    out = g.mean + tape.sqrt(g.lam) * eps_lambda
    if g.V is not None and g.rank > 0:
        if eps_v is None or value(eps_v).shape != (g.rank,):
            raise ValueError("eps_v shape must match rank")
        out = out + tape.matmul(g.V, eps_v)
    return out


def _inner_matrix(g):
    """I_l + V^T diag(1/lam) V  (l x l), plus the Lambda^{-1} V factor."""
    ilam = 1.0 / g.lam
    scaled = g.V * tape.reshape(ilam, (-1, 1))
    return np.eye(g.rank) + tape.matmul(tape.transpose(g.V, (1, 0)), scaled), scaled


def lr_solve(g, a):
    """(Lambda + V V^T)^{-1} a via the Woodbury identity, O(n l^2 + l^3)."""
    _check_vec(g, a, "rhs")
    ia = a / g.lam
    if g.V is None or g.rank == 0:
        return ia
    inner, scaled = _inner_matrix(g)
    t = tape.matmul(tape.transpose(g.V, (1, 0)), ia)
    s = tape.posdef_solve(inner, t)
    return ia - tape.matmul(scaled, s)


def lr_logdet(g):
    """log det(Lambda + V V^T) via the matrix determinant lemma."""
    base = tape.vsum(tape.log(g.lam))
    if g.V is None or g.rank == 0:
        return base
    inner, _ = _inner_matrix(g)
    return base + tape.posdef_logdet(inner)


def lr_logpdf(g, x):
    """Gaussian log-density at x, composed from lr_solve and lr_logdet."""
    _check_vec(g, x, "x")
    a = x - g.mean
    quad = tape.vsum(a * lr_solve(g, a))
    return -0.5 * (g.n * LOG_2PI + lr_logdet(g) + quad)


def diag_logpdf(mean, var, x):
    """Log-density of independent Gaussians; identical formula to lr_logpdf with V=0."""
    a = x - mean
    n = value(a).shape[0] if value(a).ndim == 1 else value(a).size
    return -0.5 * (n * LOG_2PI + tape.vsum(tape.log(var)) + tape.vsum(tape.square(a) / var))


def stack_fields(fields):
    """Concatenate per-field (mean, lam, V) blocks into one joint Gaussian.

    V blocks are stacked row-wise, so the factor columns are shared
    across fields and cross-field covariance is V_a V_b^T.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("no fields to stack")
    ranks = {0 if v is None else value(v).shape[1] for _, _, v in fields}
    if len(ranks) != 1:
        raise ValueError(f"inconsistent ranks across fields: {sorted(ranks)}")
    rank = ranks.pop()
    mean = tape.concat([m for m, _, _ in fields], axis=0)
    lam = tape.concat([l for _, l, _ in fields], axis=0)
    v = None if rank == 0 else tape.concat([v for _, _, v in fields], axis=0)
    return LowRankGaussian(mean, lam, v)
