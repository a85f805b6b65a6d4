"""Finite-difference reference solvers and noisy-dataset generation.

These are evaluation oracles only; they never participate in training.
The Poisson solver uses a conservative flux-form discretization with
damped Newton; Burgers uses Crank-Nicolson in time with Newton per
step.  Off-node queries go through cubic interpolants.
"""

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.linalg import solve_banded
from scipy.special import expit

from .domain import rng_stream, sample_grid
from .errors import SolverFailureError

__all__ = [
    "FdSolution",
    "Dataset",
    "solve_poisson",
    "solve_burgers",
    "solve_reference",
    "make_dataset",
    "save_dataset",
    "load_dataset",
    "worker_count",
]

log = logging.getLogger(__name__)

DATASET_MAGIC = b"RGND"
DATASET_VERSION = 1


def worker_count():
    """Worker cap from RGNP_THREADS (default 1: serial, deterministic)."""
    raw = os.environ.get("RGNP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class FdSolution:
    """Nodal solution plus a cubic interpolant for off-node queries."""

    axes: tuple  # per-dimension node vectors
    values: np.ndarray  # nodal values; (nx,) or (nt, nx)
    meta: dict
    _interp: object = None

    def __post_init__(self):
        if self._interp is None:
            if len(self.axes) == 1:
                self._interp = CubicSpline(self.axes[0], self.values)
            else:
                # values stored (nt, nx); spline axes are (x, t)
                self._interp = RectBivariateSpline(self.axes[0], self.axes[1], self.values.T, kx=3, ky=3)

    def __call__(self, points):
        """Evaluate at (n, d) query points (d matching the solution)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if len(self.axes) == 1:
            return self._interp(p[:, 0])
        return self._interp(p[:, 0], p[:, 1], grid=False)

    def derivative(self, points, dx=0, dt=0):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if len(self.axes) == 1:
            return self._interp.derivative(dx)(p[:, 0])
        return self._interp(p[:, 0], p[:, 1], dx=dx, dy=dt, grid=False)


def _poisson_k(u, phi):
    return np.logaddexp(0.0, u * phi) + 0.1


def solve_poisson(z, w, n_nodes=513, tol=1e-10, max_iter=200):
    """Conservative flux-form FD for d/dx(k(u,x) u_x) = w on [-1,1], u(+-1)=0."""
    if n_nodes < 33:
        raise ValueError("need n_nodes >= 33")
    z = np.asarray(z, dtype=np.float64)
    w = float(np.asarray(w).ravel()[0])
    x = np.linspace(-1.0, 1.0, n_nodes)
    h = x[1] - x[0]
    xm = 0.5 * (x[:-1] + x[1:])
    from numpy.polynomial import chebyshev as _cheb

    phim = _cheb.chebval(xm, z)
    u = np.zeros(n_nodes)

    def residual(u):
        um = 0.5 * (u[:-1] + u[1:])
        km = _poisson_k(um, phim)
        flux = km * (u[1:] - u[:-1])  # length n-1, face j between nodes j, j+1
        return (flux[1:] - flux[:-1]) / h**2 - w  # interior nodes 1..n-2

    fnorm = np.max(np.abs(residual(u)))
    iters = 0
    while fnorm > tol:
        if iters >= max_iter:
            raise SolverFailureError(f"Poisson Newton stagnated at |F| = {fnorm:.3e}", residual=fnorm)
        um = 0.5 * (u[:-1] + u[1:])
        km = _poisson_k(um, phim)
        dkm = expit(um * phim) * phim * 0.5  # d k_face / d u_node (either side)
        du = u[1:] - u[:-1]
        # tridiagonal Jacobian over interior unknowns
        lower = (km[:-1] - du[:-1] * dkm[:-1])[1:] / h**2  # dF_i/du_{i-1}, i = 2..n-2
        diag = (-km[1:] + du[1:] * dkm[1:] - km[:-1] - du[:-1] * dkm[:-1]) / h**2
        upper = (km[1:] + du[1:] * dkm[1:])[:-1] / h**2  # dF_i/du_{i+1}, i = 1..n-3
        f = residual(u)
        ab = np.zeros((3, n_nodes - 2))
        ab[0, 1:] = upper
        ab[1, :] = diag
        ab[2, :-1] = lower
        delta = solve_banded((1, 1), ab, -f)
        step = 1.0
        for _ in range(40):
            trial = u.copy()
            trial[1:-1] += step * delta
            tn = np.max(np.abs(residual(trial)))
            if tn < fnorm:
                u, fnorm = trial, tn
                break
            step *= 0.5
        else:
            raise SolverFailureError(f"Poisson line search failed at |F| = {fnorm:.3e}", residual=fnorm)
        iters += 1
    meta = {"n_nodes": n_nodes, "newton_iters": iters, "final_residual": float(fnorm)}
    return FdSolution(axes=(x,), values=u, meta=meta)


def solve_burgers(z0, z1, w, nx=256, nt=256, tol=1e-10, max_newton=50):
    """Crank-Nicolson / central-difference solve of u_t + z1 u u_x = z0 u_xx.

    Zero Dirichlet walls on [-1, 1]; initial profile sin(2 pi w x) sin(pi x).
    ``nt`` counts time levels on [0, 1] including t = 0.
    """
    if nx < 64 or nt < 64:
        raise ValueError("need nx, nt >= 64")
    z0 = float(z0)
    z1 = float(z1)
    x = np.linspace(-1.0, 1.0, nx)
    t = np.linspace(0.0, 1.0, nt)
    h = x[1] - x[0]
    dt = t[1] - t[0]
    from .pde import burgers_ic

    U = np.zeros((nt, nx))
    U[0] = burgers_ic(w, x)
    worst = 0.0

    def nonlin(v):
        # interior advection-diffusion operator
        vx = (v[2:] - v[:-2]) / (2 * h)
        vxx = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
        return z1 * v[1:-1] * vx - z0 * vxx

    for step_i in range(1, nt):
        un = U[step_i - 1]
        nu_n = nonlin(un)
        v = un.copy()
        ok = False
        for it in range(max_newton):
            g = (v[1:-1] - un[1:-1]) / dt + 0.5 * (nonlin(v) + nu_n)
            gn = np.max(np.abs(g))
            if gn <= tol:
                ok = True
                worst = max(worst, gn)
                break
            vx = (v[2:] - v[:-2]) / (2 * h)
            d_low = 0.5 * (-z1 * v[1:-1] / (2 * h) - z0 / h**2)
            d_diag = 1.0 / dt + 0.5 * (z1 * vx + 2 * z0 / h**2)
            d_up = 0.5 * (z1 * v[1:-1] / (2 * h) - z0 / h**2)
            ab = np.zeros((3, nx - 2))
            ab[0, 1:] = d_up[:-1]
            ab[1, :] = d_diag
            ab[2, :-1] = d_low[1:]
            delta = solve_banded((1, 1), ab, -g)
            scale = 1.0
            for _ in range(40):
                trial = v.copy()
                trial[1:-1] += scale * delta
                tg = (trial[1:-1] - un[1:-1]) / dt + 0.5 * (nonlin(trial) + nu_n)
                if np.max(np.abs(tg)) < gn:
                    v = trial
                    break
                scale *= 0.5
            else:
                break
        if not ok:
            raise SolverFailureError(f"Burgers Newton failed at time step {step_i}", step=step_i)
        U[step_i] = v
    meta = {"nx": nx, "nt": nt, "final_residual": float(worst)}
    return FdSolution(axes=(x, t), values=U, meta=meta)


def solve_reference(problem, z, w, **kw):
    """Dispatch to the reference solver for a problem (Poisson/Burgers only)."""
    if problem.name == "poisson1d":
        return solve_poisson(z, w, **kw)
    if problem.name == "burgers":
        return solve_burgers(z[0], z[1], w, **kw)
    raise ValueError(f"no reference solver for {problem.name!r}")


# -- datasets ---------------------------------------------------------------------


@dataclass
class Dataset:
    """Noisy observations of solution fields at scattered locations."""

    records: list  # of (z, w, X, y)
    sigma_n: float
    seed: int
    # indirect-observation extras (configured at run time, not serialized)
    obs_fn: str = "identity"
    eps_y: float = 0.0
    eps_z: float = 0.0
    eps_w: float = 0.0
    eps_x: float = 0.0

    def __len__(self):
        return len(self.records)


def _dataset_record(problem_name, n_z, seed, index, points_per_record, sigma_n, solver_kw):
    from .pde import get_problem

    problem = get_problem(problem_name, n_z=n_z)
    for attempt in range(5):
        rng = rng_stream(seed, "dataset", index, attempt)
        z = problem.sample_z(rng)
        w = problem.sample_w(rng)
        try:
            sol = solve_reference(problem, z, w, **solver_kw)
        except SolverFailureError as e:
            log.warning("record %d attempt %d: solver failed (%s); resampling", index, attempt, e)
            continue
        grid = sample_grid(problem.domain, points_per_record, rng)
        clean = sol(grid.points)
        y = clean + sigma_n * rng.standard_normal(points_per_record)
        return z, w, grid.points, y
    raise SolverFailureError(f"record {index}: solver failed on 5 consecutive draws")


def make_dataset(problem, n_records, points_per_record, sigma_n, seed, **solver_kw):
    """Draw (z, w) from the priors, solve, observe at random points with noise."""
    n_z = problem.z_dim
    args = [(problem.name, n_z, seed, i, points_per_record, sigma_n, solver_kw) for i in range(n_records)]
    workers = worker_count()
    if workers > 1 and n_records > 8:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_dataset_record_star, args, chunksize=8))
    else:
        records = [_dataset_record(*a) for a in args]
    return Dataset(records=records, sigma_n=float(sigma_n), seed=int(seed))


def _dataset_record_star(a):
    return _dataset_record(*a)


def save_dataset(ds, path):
    """Self-describing binary: magic, version, counts, records, noise footer."""
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        dim = ds.records[0][2].shape[1]
        f.write(struct.pack("<IQI", DATASET_VERSION, len(ds.records), dim))
        for z, w, x, y in ds.records:
            z = np.asarray(z, dtype="<f8")
            w = np.atleast_1d(np.asarray(w, dtype="<f8"))
            x = np.asarray(x, dtype="<f8")
            y = np.asarray(y, dtype="<f8")
            f.write(struct.pack("<III", z.size, w.size, y.size))
            f.write(z.tobytes())
            f.write(w.tobytes())
            f.write(x.tobytes())
            f.write(y.tobytes())
        f.write(struct.pack("<dQ", ds.sigma_n, ds.seed))


def load_dataset(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != DATASET_MAGIC:
            raise IOError(f"not a dataset file (magic {magic!r})")
        version, count, dim = struct.unpack("<IQI", f.read(16))
        if version != DATASET_VERSION:
            raise IOError(f"unsupported dataset version {version}")
        records = []
        for _ in range(count):
            zs, ws, ys = struct.unpack("<III", f.read(12))
            z = np.frombuffer(f.read(8 * zs), dtype="<f8").copy()
            w = np.frombuffer(f.read(8 * ws), dtype="<f8").copy()
            x = np.frombuffer(f.read(8 * ys * dim), dtype="<f8").copy().reshape(ys, dim)
            y = np.frombuffer(f.read(8 * ys), dtype="<f8").copy()
            records.append((z, w, x, y))
        sigma_n, seed = struct.unpack("<dQ", f.read(16))
    return Dataset(records=records, sigma_n=sigma_n, seed=seed)
