"""Monte-Carlo ELBO estimators and the training loop.

Each training step draws fresh collocation grids, parameters, and
reparameterized field samples, then averages

    log p(r = 0 | u, z, w, X) + log p_beta(z | u_bar, w, X)
        + log p(u | X) - log q_alpha(u | z, w, X)

over the Monte-Carlo batch.  The residual is evaluated pathwise: the
operator acts on the sampled field's smooth map x -> mu(x) +
sqrt(lambda(x)) eps1 + V(x) eps2 with the noise frozen per sample, so
derivatives flow through every head.  The uniform parameter priors make
-log q(z) a constant, which is dropped.  Data terms (direct or
indirect observations) are mini-batched and rescaled to be unbiased.
"""

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tape
from .domain import boundary_lift_apply, lift_gaussian, lift_values, rng_stream, sample_grid
from .emulator import alpha_heads, alpha_inputs, alpha_sample_jets, gicnet_forward
from .errors import ElboDivergedError, ResidualEvalError, TrainingDivergedError
from .gauss import LowRankGaussian, diag_logpdf, lr_logpdf, lr_sample, sigma_t, sigma_t_inverse, stack_fields
from .mlp import mlp_eval
from .optim import adam_init, adam_step, learning_rate, loss_grad
from .tape import value

__all__ = [
    "ElboConfig",
    "ModelParams",
    "SamplePack",
    "draw_pack",
    "elbo_physics",
    "elbo_physics_data",
    "elbo_indirect",
    "train",
    "TrainResult",
    "OBS_FUNCTIONS",
]

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ElboConfig:
    """Estimator settings; ``mode`` picks which terms are active."""

    mode: str = "physics"  # physics | physics+data | indirect
    mc_samples: int = 16
    collocation: int = 30
    eps_r: float = 1e-2
    eps_r_learnable: bool = False
    eps_r_init: float = 1e-1
    sigma_u: float = 1e3
    data_batch: int = 32
    stop_beta_grad_through_u: bool = False
    boundary_bias: float = 0.0
    retries: int = 3

    def validate(self):
        if self.mc_samples < 1 or self.collocation < 1:
            raise ValueError("mc_samples and collocation must be >= 1")
        if self.eps_r <= 0 or self.sigma_u <= 0:
            raise ValueError("eps_r and sigma_u must be positive")
        if self.mode not in ("physics", "physics+data", "indirect"):
            raise ValueError(f"unknown elbo mode {self.mode!r}")
        return self


@dataclass
class ModelParams:
    """Trainable bundle: forward net, inverse net, optional residual scale."""

    alpha: object
    beta: object
    rho: object = None  # raw learnable residual scale, squashed by sigma_t

    def eps_r(self, cfg):
        if self.rho is None:
            return cfg.eps_r
        return sigma_t(tape.reshape(self.rho, ()))


def init_rho(cfg):
    return np.array(sigma_t_inverse(cfg.eps_r_init)) if cfg.eps_r_learnable else None


@dataclass
class SamplePack:
    """Frozen Monte-Carlo draws, enabling common-random-number evaluation."""

    grids: list
    zs: list
    ws: list
    eps1: list  # per sample (n, n_fields)
    eps2: list  # per sample (rank,)


def draw_pack(problem, cfg, rank, seed, step=0, retry=0):
    n = cfg.collocation
    grids, zs, ws, e1, e2 = [], [], [], [], []
    for i in range(cfg.mc_samples):
        rng = rng_stream(seed, "mc", step, retry, i)
        grids.append(sample_grid(problem.domain, n, rng, boundary_bias=cfg.boundary_bias).points)
        zs.append(problem.sample_z(rng))
        ws.append(problem.sample_w(rng))
        e1.append(rng.standard_normal((n, problem.n_fields)))
        e2.append(rng.standard_normal(rank) if rank else np.zeros(0))
    return SamplePack(grids, zs, ws, e1, e2)


def _canonical_pack(pack):
    """Sort each grid's points lexicographically, keeping noise rows paired."""
    grids, e1 = [], []
    for pts, eps in zip(pack.grids, pack.eps1):
        order = np.lexsort(tuple(pts[:, c] for c in reversed(range(pts.shape[1]))))
        grids.append(pts[order])
        e1.append(eps[order])
    return replace(pack, grids=grids, eps1=e1)


def _stack_inputs(problem, pack):
    points = np.concatenate(pack.grids, axis=0)
    n = pack.grids[0].shape[0]
    z_pt = np.concatenate([np.broadcast_to(z, (n, z.size)) for z in pack.zs], axis=0)
    w_pt = np.concatenate([np.broadcast_to(w, (n, w.size)) for w in pack.ws], axis=0)
    cols = [points, z_pt] + ([w_pt] if w_pt.size else [])
    return points, z_pt, w_pt, np.ascontiguousarray(np.concatenate(cols, axis=1))


def physics_terms(params, problem, cfg, seed=0, step=0, retry=0, pack=None):
    """ELBO components as live tape nodes: residual, beta, prior, entropy."""
    alpha, beta = params.alpha, params.beta
    if pack is None:
        pack = draw_pack(problem, cfg, alpha.rank, seed, step, retry)
    pack = _canonical_pack(pack)
    N = len(pack.grids)
    n = pack.grids[0].shape[0]
    F = problem.n_fields
    rank = alpha.rank

    points, z_pt, w_pt, inputs = _stack_inputs(problem, pack)
    jets = alpha_heads(alpha, inputs, wrt=tuple(range(problem.dim)), hess_slots=problem.hess_coords)
    eps1 = np.concatenate(pack.eps1, axis=0)
    eps2 = np.concatenate([np.broadcast_to(e, (n, rank)) for e in pack.eps2], axis=0) if rank else np.zeros((N * n, 0))
    sample_jets = alpha_sample_jets(alpha, jets, eps1, eps2)
    lifted = boundary_lift_apply(problem.lift, sample_jets, points, w=w_pt)

    # residual likelihood with fixed or learnable noise scale
    r = problem.residual(z_pt, w_pt, lifted, points)
    eps_r = params.eps_r(cfg)
    n_res = n * problem.residual_arity
    log_eps = tape.log(eps_r) if params.rho is not None else float(np.log(eps_r))
    residual_term = -0.5 * n_res * LOG_2PI - n_res * log_eps - tape.vsum(tape.square(r)) / (
        2.0 * N * tape.square(eps_r) if params.rho is not None else 2.0 * N * eps_r**2
    )

    # entropy and uninformative field prior, on the raw (pre-lift) sample
    out = jets.value
    mus, lams, vs, us = [], [], [], []
    for f in range(F):
        off = f * alpha.head_width
        mus.append(out[:, off])
        lams.append(sigma_t(out[:, off + 1], alpha.bounds))
        vs.append(out[:, off + 2 : off + 2 + rank] if rank else None)
        us.append(sample_jets[f].value)
    u_all = tape.concat(us, axis=0)  # (F * N * n,) field-major
    prior_term = (
        -0.5 * (n * F) * (LOG_2PI + 2.0 * np.log(cfg.sigma_u))
        - tape.vsum(tape.square(u_all)) / (2.0 * N * cfg.sigma_u**2)
    )
    if rank == 0:
        lam_all = tape.concat(lams, axis=0)
        mu_all = tape.concat(mus, axis=0)
        quad = tape.vsum(tape.square(u_all - mu_all) / lam_all)
        entropy_term = -(-0.5 * (n * F) * LOG_2PI - 0.5 * tape.vsum(tape.log(lam_all)) / N - 0.5 * quad / N)
    else:
        logq = 0.0
        for i in range(N):
            sl = slice(i * n, (i + 1) * n)
            q_i = stack_fields([
                (mus[f][sl], lams[f][sl], vs[f][sl] if rank else None) for f in range(F)
            ])
            u_i = tape.concat([us[f][sl] for f in range(F)], axis=0)
            logq = logq + lr_logpdf(q_i, u_i)
        entropy_term = -(logq / N)

    # inverse-emulator cross term on the lifted field
    beta_term = 0.0
    for i in range(N):
        sl = slice(i * n, (i + 1) * n)
        cols = [tape.reshape(lifted[f].value[sl], (-1, 1)) for f in range(F)]
        vals = tape.concat(cols, axis=1)
        if cfg.stop_beta_grad_through_u:
            vals = tape.stop_gradient(vals)
        zq = gicnet_forward(beta, vals, pack.grids[i], pack.ws[i])
        beta_term = beta_term + zq.logpdf(pack.zs[i])
    beta_term = beta_term / N

    return {
        "residual_term": residual_term,
        "beta_term": beta_term,
        "prior_term": prior_term,
        "entropy_term": entropy_term,
        "eps_r": eps_r,
    }


def elbo_physics(params, problem, cfg, seed=0, step=0, retry=0, pack=None):
    """Physics-only ELBO estimate; returns (scalar, component dict)."""
    terms = physics_terms(params, problem, cfg, seed=seed, step=step, retry=retry, pack=pack)
    elbo = terms["residual_term"] + terms["beta_term"] + terms["prior_term"] + terms["entropy_term"]
    comps = {k: float(value(v)) for k, v in terms.items()}
    comps["data_term"] = 0.0
    if not np.isfinite(float(value(elbo))):
        raise ElboDivergedError("non-finite ELBO", components=comps, step=step)
    return elbo, comps


def _data_record_loglik(params, problem, cfg, sigma_n, record):
    """log N(y; lifted alpha mean, lifted K_alpha + sigma_n^2 I) for one record."""
    z, w, x, y = record
    alpha = params.alpha
    out = mlp_eval(alpha.mlp, alpha_inputs(x, z, w))
    parts = []
    for f in range(alpha.n_fields):
        off = f * alpha.head_width
        v = out[:, off + 2 : off + 2 + alpha.rank] if alpha.rank else None
        parts.append((out[:, off], sigma_t(out[:, off + 1], alpha.bounds), v))
    raw = stack_fields(parts)
    lifted = lift_gaussian(problem.lift, raw, x, w=w)
    noisy = LowRankGaussian(lifted.mean, lifted.lam + sigma_n**2, lifted.V)
    return lr_logpdf(noisy, np.asarray(y, dtype=np.float64))


def _batch_indices(dataset, cfg, seed, step):
    n_d = len(dataset)
    m = min(cfg.data_batch, n_d)
    rng = rng_stream(seed, "batch", step)
    return rng.choice(n_d, size=m, replace=False)


def elbo_physics_data(params, problem, cfg, dataset, seed=0, step=0, retry=0, pack=None, data_indices=None):
    """Physics ELBO plus the mini-batched direct-observation likelihood."""
    elbo, comps = elbo_physics(params, problem, cfg, seed=seed, step=step, retry=retry, pack=pack)
    idx = _batch_indices(dataset, cfg, seed, step) if data_indices is None else np.asarray(data_indices)
    total = 0.0
    for i in idx:
        total = total + _data_record_loglik(params, problem, cfg, dataset.sigma_n, dataset.records[i])
    data_term = (len(dataset) / len(idx)) * total
    elbo = elbo + data_term
    comps["data_term"] = float(value(data_term))
    if not np.isfinite(float(value(elbo))):
        raise ElboDivergedError("non-finite data term", components=comps, step=step)
    return elbo, comps


OBS_FUNCTIONS = {
    "identity": lambda u: u,
    "mean-of-field": lambda u: tape.vmean(u, axis=0),
    "pointwise-square": lambda u: tape.square(u),
}


def _indirect_record_loglik(params, problem, cfg, dataset, record, rng):
    """Nested single-sample bound E[log N(y; g(u_tilde), eps_y^2 I)]."""
    z_d, w_d, x_d, y = record
    g = OBS_FUNCTIONS[dataset.obs_fn]
    z_t = z_d + dataset.eps_z * rng.standard_normal(z_d.shape)
    w_t = w_d + dataset.eps_w * rng.standard_normal(np.atleast_1d(w_d).shape)
    x_t = x_d + dataset.eps_x * rng.standard_normal(x_d.shape)
    alpha = params.alpha
    out = mlp_eval(alpha.mlp, alpha_inputs(x_t, z_t, w_t))
    parts = []
    for f in range(alpha.n_fields):
        off = f * alpha.head_width
        v = out[:, off + 2 : off + 2 + alpha.rank] if alpha.rank else None
        parts.append((out[:, off], sigma_t(out[:, off + 1], alpha.bounds), v))
    raw = stack_fields(parts)
    eps1 = rng.standard_normal(raw.n)
    eps2 = rng.standard_normal(alpha.rank) if alpha.rank else None
    u_raw = lr_sample(raw, eps1, eps2)
    u_mat = tape.transpose(tape.reshape(u_raw, (alpha.n_fields, -1)), (1, 0))
    u_bar = lift_values(problem.lift, u_mat, x_t, w=w_t)
    obs = g(tape.reshape(u_bar, (-1,)) if alpha.n_fields == 1 else u_bar)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    resid = obs - y if np.ndim(value(obs)) else obs - float(y[0])
    n_obs = y.size
    return -0.5 * n_obs * (LOG_2PI + 2.0 * np.log(dataset.eps_y)) - tape.vsum(tape.square(resid)) / (
        2.0 * dataset.eps_y**2
    )


def elbo_indirect(params, problem, cfg, dataset, seed=0, step=0, retry=0, pack=None, data_indices=None):
    """Physics ELBO plus the indirect-observation lower bound (Monte Carlo)."""
    elbo, comps = elbo_physics(params, problem, cfg, seed=seed, step=step, retry=retry, pack=pack)
    idx = _batch_indices(dataset, cfg, seed, step) if data_indices is None else np.asarray(data_indices)
    total = 0.0
    for k, i in enumerate(idx):
        rng = rng_stream(seed, "indirect", step, retry, int(i))
        total = total + _indirect_record_loglik(params, problem, cfg, dataset, dataset.records[i], rng)
    data_term = (len(dataset) / len(idx)) * total
    elbo = elbo + data_term
    comps["data_term"] = float(value(data_term))
    if not np.isfinite(float(value(elbo))):
        raise ElboDivergedError("non-finite indirect term", components=comps, step=step)
    return elbo, comps


def elbo_for_mode(params, problem, cfg, dataset=None, **kw):
    if cfg.mode == "physics":
        return elbo_physics(params, problem, cfg, **kw)
    if cfg.mode == "physics+data":
        return elbo_physics_data(params, problem, cfg, dataset, **kw)
    return elbo_indirect(params, problem, cfg, dataset, **kw)


@dataclass
class TrainResult:
    params: object
    adam: object
    history: list
    seed: int
    checkpoints: list


def train(
    params,
    problem,
    cfg,
    steps,
    seed,
    dataset=None,
    lr0=1e-3,
    lr_decay=0.9,
    lr_decay_steps=1000.0,
    checkpoint_every=0,
    out_dir=None,
    metrics_name="metrics.csv",
    checkpoint_hook=None,
    log_every=100,
):
    """Maximize the configured ELBO with Adam; fully seeded and reproducible.

    Per-step component logs go to ``out_dir/metrics_name``; checkpoints
    (written via ``checkpoint_hook(params, adam, step, path)``) every
    ``checkpoint_every`` steps.  On a non-finite loss the Monte-Carlo
    batch is resampled up to cfg.retries times before aborting.
    """
    cfg.validate()
    adam = adam_init(params, lr0=lr0, decay=lr_decay, decay_steps=lr_decay_steps)
    history = []
    checkpoints = []
    writer = None
    fh = None
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        fh = open(f"{out_dir}/{metrics_name}", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "elbo", "residual_term", "beta_term", "entropy_term", "data_term", "eps_r", "lr", "wall_ms"])

    saved_steps = set()

    def save_ckpt(step):
        if checkpoint_hook is None or out_dir is None or step in saved_steps:
            return None
        path = f"{out_dir}/checkpoint_{step:07d}.rgnp"
        checkpoint_hook(params, adam, step, path)
        checkpoints.append(path)
        saved_steps.add(step)
        return path

    try:
        for t in range(1, steps + 1):
            t0 = time.perf_counter()
            got = None
            for retry in range(cfg.retries + 1):
                try:
                    loss_val, grads, comps = loss_grad(
                        params,
                        lambda p: _neg_elbo(p, problem, cfg, dataset, seed, t, retry),
                    )
                    got = (loss_val, grads, comps)
                    break
                except (TrainingDivergedError, ElboDivergedError, ResidualEvalError) as e:
                    log.warning("step %d retry %d: %s", t, retry, e)
            if got is None:
                last = checkpoints[-1] if checkpoints else None
                raise TrainingDivergedError(f"diverged at step {t} after {cfg.retries} retries", step=t, checkpoint=last)
            loss_val, grads, comps = got
            params, adam = adam_step(adam, params, grads)
            wall = (time.perf_counter() - t0) * 1e3
            row = dict(step=t, elbo=-loss_val, lr=learning_rate(adam), wall_ms=wall, **comps)
            history.append(row)
            if writer is not None:
                writer.writerow([t, -loss_val, comps["residual_term"], comps["beta_term"],
                                 comps["entropy_term"], comps["data_term"], comps["eps_r"],
                                 learning_rate(adam), f"{wall:.3f}"])
            if log_every and (t % log_every == 0 or t == 1):
                log.info("step %d elbo %.4e eps_r %.3e (%.0f ms)", t, -loss_val, comps["eps_r"], wall)
            if checkpoint_every and t % checkpoint_every == 0:
                save_ckpt(t)
        save_ckpt(steps)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(params=params, adam=adam, history=history, seed=seed, checkpoints=checkpoints)


def _neg_elbo(p, problem, cfg, dataset, seed, step, retry):
    elbo, comps = elbo_for_mode(p, problem, cfg, dataset=dataset, seed=seed, step=step, retry=retry)
    return -elbo, comps
