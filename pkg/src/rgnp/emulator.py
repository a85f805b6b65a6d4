"""Forward (alpha) and inverse (GICNet, beta) emulator networks.

The alpha net maps (x, z, w) pointwise to per-field Gaussian heads
(mean, bounded scale, low-rank factor rows); evaluated over a grid it
yields a structured Gaussian over stacked field values.  The GICNet
maps a field sampled at arbitrary locations to a Gaussian over the PDE
parameters z: a learned pointwise projection lifts (u(x), x) into d_v
channels, each channel is pushed onto a fixed coarse lattice by a
Nadaraya-Watson kernel average with its own learnable lengthscale, and
a small convolutional trunk plus dense head read off the posterior.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .gauss import DiagGaussian, ExpLinearBounds, LowRankGaussian, sigma_t, sigma_t_with_derivs, stack_fields
from .jet import Jet, jet_compose
from .mlp import MlpParams, mlp_eval, mlp_eval_jet, mlp_init, swish
from .tape import value

__all__ = [
    "AlphaNet",
    "GicNet",
    "alpha_init",
    "alpha_inputs",
    "alpha_forward",
    "alpha_heads",
    "alpha_sample_jets",
    "gicnet_init",
    "gicnet_forward",
    "nw_interpolate",
]


# -- alpha net -----------------------------------------------------------------


@dataclass
class AlphaNet:
    """Pointwise conditional-Gaussian network with per-field output heads."""

    mlp: MlpParams
    n_fields: int
    rank: int  # 0 = diagonal covariance
    bounds: ExpLinearBounds = field(default_factory=ExpLinearBounds)

    @property
    def head_width(self):
        return 2 + self.rank


def alpha_init(problem, hidden_layers=4, hidden_width=128, rank=0, bounds=None, rng=None):
    d_in = problem.dim + problem.z_dim + problem.w_dim
    d_out = problem.n_fields * (2 + rank)
    sizes = [d_in] + [hidden_width] * hidden_layers + [d_out]
    return AlphaNet(
        mlp=mlp_init(sizes, rng),
        n_fields=problem.n_fields,
        rank=rank,
        bounds=bounds or ExpLinearBounds(),
    )


def alpha_inputs(points, z, w):
    """Tile parameters next to coordinates: rows (x_j, z, w)."""
    n = points.shape[0]
    cols = [points]
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    cols.append(np.broadcast_to(z, (n, z.size)))
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if w.size:
        cols.append(np.broadcast_to(w, (n, w.size)))
    return np.ascontiguousarray(np.concatenate(cols, axis=1))


def _head_triplet(out, net, f):
    """Split one field's head columns out of the raw output (any array type)."""
    off = f * net.head_width
    mu = out[:, off]
    lam = sigma_t(out[:, off + 1], net.bounds)
    v = out[:, off + 2 : off + 2 + net.rank] if net.rank else None
    return mu, lam, v


def alpha_forward(net, z, w, grid):
    """Structured Gaussian over raw (pre-lift) field values, fields stacked."""
    out = mlp_eval(net.mlp, alpha_inputs(grid.points, z, w))
    parts = [_head_triplet(out, net, f) for f in range(net.n_fields)]
    if net.rank == 0:
        return stack_fields([(m, l, None) for m, l, _ in parts])
    return stack_fields(parts)


def alpha_heads(net, inputs, wrt, hess_slots, mixed=False):
    """Raw output jet of the alpha MLP at prepared input rows."""
    return mlp_eval_jet(net.mlp, inputs, wrt=wrt, hess=hess_slots, mixed=mixed)


def _jet_col(jet, col):
    """Select one output column of a batched jet."""

    def pick(e):
        if e is None or np.isscalar(e):
            return e
        if value(e).ndim == 1:  # constant row from a single-layer net
            return e[col]
        return e[:, col]

    mx = None if jet.mixed is None else {k: pick(v) for k, v in jet.mixed.items()}
    return Jet(pick(jet.value), [pick(g) for g in jet.grad], [pick(h) for h in jet.hess], mx)


def _sqrt_sigma_t_derivs(raw, bounds):
    """(value, d1, d2) of sqrt(sigma_t(raw)) for jet composition."""
    s0, s1, s2 = sigma_t_with_derivs(raw, bounds)
    g = tape.sqrt(s0)
    g1 = s1 / (2.0 * g)
    g2 = s2 / (2.0 * g) - tape.square(s1) / (4.0 * g * s0)
    return g, g1, g2


def alpha_sample_jets(net, out_jet, eps1, eps2):
    """Jets of the reparameterized sample field, one jet per field.

    The sampled field at x is mu(x) + sqrt(lambda(x)) * eps1 + V(x) eps2
    with the noise frozen, so spatial derivatives flow through all
    heads.  ``eps1`` is (n, n_fields); ``eps2`` is (n, rank) (column c
    holding each point's sample-shared factor noise).
    """
    jets = []
    for f in range(net.n_fields):
        off = f * net.head_width
        mu = _jet_col(out_jet, off)
        raw = _jet_col(out_jet, off + 1)
        g, g1, g2 = _sqrt_sigma_t_derivs(raw.value, net.bounds)
        u = mu + jet_compose(g, g1, g2, raw) * eps1[:, f]
        for c in range(net.rank):
            u = u + _jet_col(out_jet, off + 2 + c) * eps2[:, c]
        jets.append(u)
    return jets


# -- Nadaraya-Watson interpolation ------------------------------------------------


def _canonical_order(points):
    return np.lexsort(tuple(points[:, c] for c in reversed(range(points.shape[1]))))


def _kernel_weights(d2, ell, kernel):
    """(C, M, n) kernel matrix from squared distances (M, n) and scales (C,)."""
    inv = tape.reshape(1.0 / tape.square(ell), (-1, 1, 1))
    if kernel == "rbf":
        return tape.exp(-0.5 * d2[None, :, :] * inv)
    if kernel == "matern":
        a = np.sqrt(3.0) * np.sqrt(d2)[None, :, :] * tape.reshape(1.0 / ell, (-1, 1, 1))
        return (1.0 + a) * tape.exp(-a)
    raise ValueError(f"unknown kernel {kernel!r}")


def nw_interpolate(values, points, lattice, lengthscales, kernel="rbf", guard=1e-12, assume_sorted=False):
    """Normalized kernel average of scattered channel values onto a lattice.

    values (n, C), points (n, d), lattice (M, d), lengthscales (C,)
    -> (C, M).  Inputs are put in canonical point order first so the
    result is bitwise permutation-invariant.
    """
    n = points.shape[0]
    if n < 1:
        raise ValueError("need at least one input point")
    if value(values).ndim == 1:
        values = tape.reshape(values, (-1, 1))
    if not assume_sorted:
        order = _canonical_order(points)
        points = points[order]
        values = tape.take(values, order, axis=0)
    d2 = np.sum((lattice[:, None, :] - points[None, :, :]) ** 2, axis=2)  # (M, n)
    wts = _kernel_weights(d2, lengthscales, kernel)  # (C, M, n)
    vt = tape.reshape(tape.transpose(values, (1, 0)), (-1, n, 1))  # (C, n, 1)
    num = tape.reshape(tape.matmul(wts, vt), (-1, d2.shape[0]))  # (C, M)
    den = tape.vsum(wts, axis=2) + guard
    return num / den


# -- GICNet ----------------------------------------------------------------------


@dataclass
class GicNet:
    """Grid-invariant inversion network (projection, NW lattice, conv trunk, head)."""

    proj: MlpParams
    log_ell: object  # (d_v,)
    convs: list  # of {"kind": "1d"|"2d"|"time", "w": ..., "b": ...}
    head: MlpParams
    lattice_shape: tuple
    lattice: np.ndarray  # (M, d) fixed coarse grid over the closed box
    z_dim: int
    kernel: str = "rbf"
    bounds: ExpLinearBounds = field(default_factory=ExpLinearBounds)

    @property
    def d_v(self):
        return value(self.log_ell).shape[0]


def _conv_w_init(rng, c_out, c_in, *k):
    fan = c_in * int(np.prod(k))
    bound = 1.0 / np.sqrt(fan)
    return rng.uniform(-bound, bound, size=(c_out, c_in) + k), rng.uniform(-bound, bound, size=(c_out,))


def gicnet_init(
    problem,
    d_v=12,
    lattice_m=20,
    conv_layers=2,
    kernel_size=5,
    head_width=64,
    proj_width=32,
    bounds=None,
    kernel="rbf",
    ell_range=(1e-2, 1.0),
    rng=None,
):
    d = problem.dim
    axes = [np.linspace(problem.domain.lo[c], problem.domain.hi[c], lattice_m) for c in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    lattice = np.column_stack([m.ravel() for m in mesh])
    shape = (lattice_m,) * d
    proj = mlp_init([problem.n_fields + d, proj_width, d_v], rng)
    log_ell = np.log(np.geomspace(ell_range[0], ell_range[1], d_v))
    convs = []
    if problem.conv_plan == "1d":
        kinds = ["1d"] * conv_layers
    elif problem.conv_plan == "2d":
        kinds = ["2d"] * conv_layers
    else:  # alternated spatial-2d / time-1d stacks
        kinds = [("2d" if i % 2 == 0 else "time") for i in range(conv_layers)]
    for kind in kinds:
        if kind == "2d":
            w, b = _conv_w_init(rng, d_v, d_v, kernel_size, kernel_size)
        else:
            w, b = _conv_w_init(rng, d_v, d_v, kernel_size)
        convs.append({"kind": kind, "w": w, "b": b})
    head = mlp_init([d_v * lattice_m**d + problem.w_dim, head_width, 2 * problem.z_dim], rng)
    return GicNet(
        proj=proj,
        log_ell=log_ell,
        convs=convs,
        head=head,
        lattice_shape=shape,
        lattice=lattice,
        z_dim=problem.z_dim,
        kernel=kernel,
        bounds=bounds or ExpLinearBounds(),
    )


def _conv1d(x, w, b):
    """x (C_in, L), w (C_out, C_in, K) -> (C_out, L), 'same' zero padding."""
    c_out, c_in, k = value(w).shape
    L = value(x).shape[-1]
    p = k // 2
    xp = tape.pad_last(x, p, p)
    idx = np.arange(L)[:, None] + np.arange(k)[None, :]
    patches = tape.take(xp, idx, axis=1)  # (C_in, L, K)
    flat = tape.reshape(tape.transpose(patches, (1, 0, 2)), (L, c_in * k))
    wm = tape.reshape(tape.transpose(w, (1, 2, 0)), (c_in * k, c_out))
    out = tape.transpose(tape.matmul(flat, wm), (1, 0))
    return out + tape.reshape(b, (-1, 1))


def _conv2d(x, w, b):
    """x (C_in, H, W), w (C_out, C_in, kh, kw) -> (C_out, H, W)."""
    c_out, c_in, kh, kw = value(w).shape
    if kh != kw:
        raise ValueError("square kernels only")
    _, H, W = value(x).shape
    xp = tape.pad_last(x, kh // 2, kh // 2, n_axes=2)  # square kernels only
    Hp, Wp = H + 2 * (kh // 2), W + 2 * (kw // 2)
    xf = tape.reshape(xp, (c_in, Hp * Wp))
    site = (np.arange(H)[:, None, None, None] + np.arange(kh)[None, None, :, None]) * Wp + (
        np.arange(W)[None, :, None, None] + np.arange(kw)[None, None, None, :]
    )
    idx = site.reshape(H * W, kh * kw)
    patches = tape.take(xf, idx, axis=1)  # (C_in, H*W, kh*kw)
    flat = tape.reshape(tape.transpose(patches, (1, 0, 2)), (H * W, c_in * kh * kw))
    wm = tape.reshape(tape.transpose(w, (1, 2, 3, 0)), (c_in * kh * kw, c_out))
    out = tape.transpose(tape.matmul(flat, wm), (1, 0))
    return tape.reshape(out, (c_out, H, W)) + tape.reshape(b, (-1, 1, 1))


def _conv2d_slab(x, w, b):
    """x (C_in, X, Y, T): 2-D convolution over (X, Y) shared across time slabs."""
    c_out, c_in, kh, kw = value(w).shape
    _, X, Y, T = value(x).shape
    p = kh // 2
    # pad only the two spatial axes
    xp = tape.transpose(tape.pad_last(tape.transpose(x, (0, 3, 1, 2)), p, p, n_axes=2), (0, 2, 3, 1))
    Xp, Yp = X + 2 * p, Y + 2 * p
    xf = tape.reshape(xp, (c_in, Xp * Yp, T))
    site = (np.arange(X)[:, None, None, None] + np.arange(kh)[None, None, :, None]) * Yp + (
        np.arange(Y)[None, :, None, None] + np.arange(kw)[None, None, None, :]
    )
    idx = site.reshape(X * Y, kh * kw)
    patches = tape.take(xf, idx, axis=1)  # (C_in, X*Y, kh*kw, T)
    flat = tape.reshape(tape.transpose(patches, (1, 3, 0, 2)), (X * Y * T, c_in * kh * kw))
    wm = tape.reshape(tape.transpose(w, (1, 2, 3, 0)), (c_in * kh * kw, c_out))
    out = tape.matmul(flat, wm)  # (X*Y*T, C_out)
    out = tape.transpose(tape.reshape(out, (X * Y, T, c_out)), (2, 0, 1))
    return tape.reshape(out, (c_out, X, Y, T)) + tape.reshape(b, (-1, 1, 1, 1))


def _conv1d_time(x, w, b):
    """x (C_in, X, Y, T): 1-D convolution along the time axis."""
    c_out, c_in, k = value(w).shape
    _, X, Y, T = value(x).shape
    p = k // 2
    xp = tape.pad_last(x, p, p)
    idx = np.arange(T)[:, None] + np.arange(k)[None, :]
    patches = tape.take(xp, idx, axis=3)  # (C_in, X, Y, T, K)
    flat = tape.reshape(tape.transpose(patches, (1, 2, 3, 0, 4)), (X * Y * T, c_in * k))
    wm = tape.reshape(tape.transpose(w, (1, 2, 0)), (c_in * k, c_out))
    out = tape.matmul(flat, wm)
    out = tape.transpose(tape.reshape(out, (X * Y * T, c_out)), (1, 0))
    return tape.reshape(out, (c_out, X, Y, T)) + tape.reshape(b, (-1, 1, 1, 1))


_CONV_OPS = {"1d": _conv1d, "2d": _conv2d, "slab2d": _conv2d_slab, "time": _conv1d_time}


def gicnet_forward(net, values, points, w=None):
    """Gaussian posterior over z from a field sampled at arbitrary points.

    ``values`` is (n, n_fields) field values row-aligned with ``points``
    (n, d).  The computation is bitwise invariant to permutations of
    the (point, value) rows.
    """
    pv = value(values)
    if pv.ndim != 2 or pv.shape[0] != points.shape[0]:
        raise ValueError("values must be (n_points, n_fields)")
    order = _canonical_order(points)
    points = points[order]
    values = tape.take(values, order, axis=0)

    n = points.shape[0]
    proj_in = tape.concat([values, points], axis=1)
    feats = mlp_eval(net.proj, proj_in)  # (n, d_v)
    ell = tape.exp(net.log_ell)
    lat = nw_interpolate(feats, points, value(net.lattice), ell, kernel=net.kernel, assume_sorted=True)
    x = tape.reshape(lat, (net.d_v,) + net.lattice_shape)
    for conv in net.convs:
        kind = conv["kind"]
        op = _CONV_OPS["slab2d"] if (kind == "2d" and len(net.lattice_shape) == 3) else _CONV_OPS[kind]
        x = op(x, conv["w"], conv["b"])
        x = swish(x)
    flat = tape.reshape(x, (1, -1))
    if w is not None and np.atleast_1d(np.asarray(w)).size:
        wrow = np.atleast_1d(np.asarray(w, dtype=np.float64))[None, :]
        flat = tape.concat([flat, wrow], axis=1)
    out = mlp_eval(net.head, flat)
    mu = tape.reshape(out[:, : net.z_dim], (net.z_dim,))
    var = sigma_t(tape.reshape(out[:, net.z_dim :], (net.z_dim,)), net.bounds)
    return DiagGaussian(mu, var)
