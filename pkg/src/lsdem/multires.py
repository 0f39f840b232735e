"""Multiresolution MCMC driver.

Resolution 1 runs local samplers only.  From resolution 2 on, every iteration
is either a local sweep or, with probability ``p_global``, a cross-resolution
move: an independence Metropolis-Hastings proposal that draws a stored
``(paths, params)`` pair from the previous resolution, fills the new
midpoints with bridge draws and accepts with

    r = [P_k(prop) / (P_{k-1}(coarse(prop)) q_fill(prop))]
        / [P_k(cur) / (P_{k-1}(coarse(cur)) q_fill(cur))]

where ``P_k`` is the level-k posterior kernel.  Since the previous level's
posterior is only available as stored draws, its normalizing constant is the
only part that cancels; the kernel itself is evaluated at both states.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .bridges import update_blocks, update_points
from .chains import ChainStore, ConfigurationError, LevelChain
from .grid import (LevelContext, build_level1, coarsen, fill_logdensity, lift_paths,
                   refine)
from .model import ModelParams, satisfies_constraints
from .parameters import (BetaSampler, PriorSpec, update_lambda_sigma, update_mu,
                         update_psi)

logger = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """The sampler reached a non-finite state."""


@dataclass
class MrSchedule:
    """Run layout of the multiresolution sampler."""

    n_resolutions: int = 4
    burn_in: int = 2000
    n_keep: int = 4000
    p_global: float = 0.3
    path_thin: int = 10
    target_dt: float = 0.07
    alpha: float = 0.0

    def __post_init__(self):
        if int(self.n_resolutions) < 1:
            raise ConfigurationError("n_resolutions must be at least 1")
        if not 0.0 <= self.p_global < 1.0:
            raise ConfigurationError("p_global must lie in [0, 1)")
        if self.burn_in < 0 or self.n_keep < 1:
            raise ConfigurationError("burn_in must be >= 0 and n_keep >= 1")
        if self.path_thin < 1:
            raise ConfigurationError("path_thin must be >= 1")
        if not self.target_dt > 0:
            raise ConfigurationError("target_dt must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def build_contexts(dataset, n_resolutions: int, target_dt: float,
                   standardize: bool = True) -> dict:
    """Level contexts ``1..n_resolutions`` for ``dataset``."""
    y = dataset.stacked_y(standardize)
    grid = build_level1(dataset.times, target_dt)
    out = {}
    for k in range(1, n_resolutions + 1):
        if k > 1:
            grid = refine(grid)
        out[k] = LevelContext(grid, y, dataset.covariates, dataset.windows)
    return out


def initialize(context: LevelContext):
    """Starting parameters and level-1 paths from a factor-analysis pass.

    Loadings come from the leading principal component of the standardized
    channels (channel 1 normalized to 1), factor scores from least squares;
    the first score of each subject becomes its fixed initial state and the
    paths interpolate the scores linearly.
    """
    y = context.y
    n_obs, p = y.shape
    mu = y.mean(axis=0)
    sd = y.std(axis=0)
    if np.any(sd == 0):
        raise ValueError(f"channel {int(np.argmin(sd)) + 1} has zero variance")
    if p == 1:
        lam = np.ones(1)
    else:
        z = (y - mu) / sd
        _, vecs = np.linalg.eigh(np.cov(z.T))
        v = vecs[:, -1] * sd
        if abs(v[0]) < 1e-8 * np.max(np.abs(v)):
            raise ValueError("first channel does not load on the common factor")
        lam = v / v[0]
    scores = (y - mu) @ lam / (lam @ lam)
    resid = y - mu - np.outer(scores, lam)
    sigma2 = np.maximum(resid.var(axis=0), 0.01 * sd ** 2)
    if p == 1:
        sigma2 = 0.1 * sd ** 2

    grid = context.grid
    x = np.empty(grid.n_points)
    obs = context.obs_index
    for i in range(grid.n_subjects):
        sl = slice(grid.offsets[i], grid.offsets[i + 1])
        mine = (obs >= sl.start) & (obs < sl.stop)
        x[sl] = np.interp(grid.times[sl], grid.times[obs[mine]], scores[mine])

    day_obs = context.day[obs]
    c = context.covariates.shape[1]
    beta = np.zeros((6, c))
    beta[[0, 2, 3, 5], 0] = 1.0
    beta[1, 0] = scores[day_obs].mean() if day_obs.any() else 0.0
    beta[4, 0] = scores[~day_obs].mean() if (~day_obs).any() else 0.0
    j_obs = np.flatnonzero(context.obs_row >= 0)
    d = np.diff(scores)
    dt = np.diff(grid.times[j_obs])
    same = context.subject[j_obs[1:]] == context.subject[j_obs[:-1]]
    psi = float(np.mean(d[same] ** 2 / dt[same])) if same.any() else 1.0
    params = ModelParams(beta, max(psi, 1e-3), mu, lam, sigma2)
    if not satisfies_constraints(context.covariates, beta):
        raise ValueError("initial drift coefficients violate the positivity constraints")
    return params, x


class LevelSampler:
    """State and kernels of the chain at one resolution."""

    def __init__(self, context: LevelContext, params: ModelParams, x, prior: PriorSpec,
                 rng, alpha=0.0, beta_sampler=None):
        self.ctx = context
        self.params = params
        self.x = np.array(x, dtype=float)
        self.prior = prior
        self.rng = rng
        self.alpha = alpha
        self.beta_sampler = beta_sampler or BetaSampler(context.covariates.shape[1])
        self.tally = {"block": [0, 0], "point": [0, 0], "beta": [0, 0], "cross": [0, 0]}

    def local_sweep(self):
        ctx, p, rng = self.ctx, self.params, self.rng
        cp = ctx.point_coeffs(p)
        st = update_blocks(self.x, ctx, p, self.alpha, rng, coeffs=cp)
        self.tally["block"][0] += st.accepted
        self.tally["block"][1] += st.attempted
        st = update_points(self.x, ctx, p, self.alpha, rng, coeffs=cp)
        self.tally["point"][0] += st.accepted
        self.tally["point"][1] += st.attempted
        x_obs = self.x[ctx.obs_index]
        p.mu = update_mu(ctx.y, x_obs, p, self.prior, rng)
        p.lam, p.sigma2 = update_lambda_sigma(ctx.y, x_obs, p, self.prior, rng)
        p.psi = update_psi(self.x, ctx, p, self.prior, rng)
        acc = self.beta_sampler.step(self.x, ctx, p, self.prior, rng)
        self.tally["beta"][0] += int(acc.sum())
        self.tally["beta"][1] += 6

    def log_posterior(self, x=None, params=None) -> float:
        return self.ctx.log_posterior(self.x if x is None else x,
                                      self.params if params is None else params, self.prior)


def cross_resolution_move(sampler: LevelSampler, coarse_ctx: LevelContext,
                          store: LevelChain, rng):
    """Independence MH move of ``(paths, params)`` from the level ``k - 1`` draws.

    Returns ``(accepted, log_ratio)`` and updates ``sampler`` in place.
    """
    if store is None or len(store.path_iteration) == 0:
        raise ConfigurationError(
            f"cross-resolution move at level {sampler.ctx.level} needs stored path draws "
            f"at level {sampler.ctx.level - 1}")
    ctx = sampler.ctx
    s = int(rng.integers(len(store.path_iteration)))
    params_c = ModelParams.from_vector(store.params[store.path_iteration[s]],
                                       ctx.covariates.shape[1], ctx.y.shape[1])
    x_prop, logq_prop = lift_paths(store.paths[s], ctx, params_c, rng, sampler.alpha)
    lp_prop = sampler.log_posterior(x_prop, params_c)
    lp_prop_coarse = float(store.path_logpost[s])

    lp_cur = sampler.log_posterior()
    lp_cur_coarse = coarse_ctx.log_posterior(coarsen(sampler.x, ctx.grid), sampler.params,
                                             sampler.prior)
    logq_cur = fill_logdensity(sampler.x, ctx, sampler.params, sampler.alpha)

    log_ratio = ((lp_prop - lp_prop_coarse - logq_prop)
                 - (lp_cur - lp_cur_coarse - logq_cur))
    if np.isnan(log_ratio):
        log_ratio = -np.inf if np.isfinite(lp_cur) else np.inf
    accepted = bool(np.log(rng.random()) < log_ratio)
    if accepted:
        sampler.x = x_prop
        sampler.params = params_c
    sampler.tally["cross"][0] += int(accepted)
    sampler.tally["cross"][1] += 1
    return accepted, float(log_ratio)


def run_mr(dataset, prior: PriorSpec = None, schedule: MrSchedule = None, seed: int = 0,
           standardize: bool = True, contexts: dict = None, progress=None) -> ChainStore:
    """Run the multiresolution sampler and collect draws at every level.

    ``progress(level, iteration, total, sampler)`` is called every 100
    iterations when given.
    """
    schedule = schedule or MrSchedule()
    K = int(schedule.n_resolutions)
    ctxs = contexts or build_contexts(dataset, K, schedule.target_dt, standardize)
    c, p = dataset.n_covariates, dataset.n_channels
    prior = (prior or PriorSpec()).resolve(p, c)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    names = ModelParams.vector_names(c, p)
    store = ChainStore(names, c, p, seed=int(seed), schedule=schedule.to_dict(),
                       prior=prior.to_dict(), standardize=bool(standardize),
                       center=dataset.center if standardize else None,
                       scale=dataset.scale if standardize else None,
                       subject_ids=list(dataset.subject_ids))

    params, x = initialize(ctxs[1])
    beta_sampler = None
    for k in range(1, K + 1):
        ctx = ctxs[k]
        if k > 1:
            x, _ = lift_paths(x, ctx, params, rng, schedule.alpha)
            beta_sampler.restart()
        sampler = LevelSampler(ctx, params, x, prior, rng, schedule.alpha, beta_sampler)
        beta_sampler = sampler.beta_sampler
        prev = store.levels.get(k - 1)
        if k > 1 and schedule.p_global > 0 and (prev is None or len(prev.path_iteration) == 0):
            raise ConfigurationError(f"level {k} needs stored path draws at level {k - 1}")
        total = schedule.burn_in + schedule.n_keep
        draws = np.empty((schedule.n_keep, len(names)))
        path_it, paths, path_lp = [], [], []
        for it in range(total):
            if k > 1 and schedule.p_global > 0 and rng.random() < schedule.p_global:
                cross_resolution_move(sampler, ctxs[k - 1], prev, rng)
            else:
                sampler.local_sweep()
            if it == schedule.burn_in - 1:
                beta_sampler.freeze()
            if not (np.isfinite(sampler.params.psi) and np.all(np.isfinite(sampler.x))):
                raise NumericalError(f"non-finite state at level {k}, iteration {it}")
            if it >= schedule.burn_in:
                kept = it - schedule.burn_in
                draws[kept] = sampler.params.to_vector()
                if kept % schedule.path_thin == schedule.path_thin - 1:
                    path_it.append(kept)
                    paths.append(sampler.x.copy())
                    path_lp.append(sampler.log_posterior())
            if progress is not None and (it + 1) % 100 == 0:
                progress(k, it + 1, total, sampler)
        if schedule.burn_in == 0:
            beta_sampler.freeze()
        store.levels[k] = LevelChain(
            k, ctx.grid, draws, np.asarray(path_it, dtype=np.int64),
            np.asarray(paths).reshape(len(paths), ctx.grid.n_points),
            np.asarray(path_lp, dtype=float),
            {name: tuple(v) for name, v in sampler.tally.items()})
        logger.info("level %d done: acceptance %s", k, store.levels[k].acceptance_rates())
        params, x = sampler.params.copy(), sampler.x.copy()
    return store
