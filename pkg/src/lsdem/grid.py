"""Imputation grids across resolutions and the flat layout used by the samplers.

All subjects are concatenated into one flat array of grid points; ``offsets``
delimit subjects.  Level ``k + 1`` inserts one midpoint into every interval
of level ``k``, so an observed point at level-1 index ``s`` sits at index
``s * 2**(k - 1)`` at level ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .bridges import bridge_moments
from .model import (DAY_BLOCKS, ModelParams, beta_star, drift_values,
                    euler_step_logdensity, gaussian_logpdf, measurement_loglik_rows,
                    measurement_pseudo_obs)


@dataclass(frozen=True, eq=False)
class ResolutionGrid:
    """Per-subject imputation times at one resolution level.

    Attributes
    ----------
    level : int
        Resolution index; 0 means observed times only.
    times : ndarray of shape (N,)
        Concatenated grid times of all subjects.
    offsets : ndarray of shape (n + 1,)
        Subject ``i`` owns ``times[offsets[i]:offsets[i + 1]]``.
    observed : ndarray of bool, shape (N,)
        True at observation times.
    parent : ndarray of int, shape (N,)
        Index into the level ``k - 1`` grid: the same time point for carried
        points, the left neighbour for inserted midpoints, ``-1`` at level <= 1.
    is_new : ndarray of bool, shape (N,)
        True for midpoints inserted relative to level ``k - 1``.
    """

    level: int
    times: np.ndarray
    offsets: np.ndarray
    observed: np.ndarray
    parent: np.ndarray
    is_new: np.ndarray

    @property
    def n_subjects(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_points(self) -> int:
        return len(self.times)

    @cached_property
    def subject(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_subjects), np.diff(self.offsets))

    @cached_property
    def obs_index(self) -> np.ndarray:
        """Flat indices of observed points, subject-major and time-ordered."""
        return np.flatnonzero(self.observed)

    @cached_property
    def is_first(self) -> np.ndarray:
        out = np.zeros(self.n_points, dtype=bool)
        out[self.offsets[:-1]] = True
        return out

    @cached_property
    def is_last(self) -> np.ndarray:
        out = np.zeros(self.n_points, dtype=bool)
        out[self.offsets[1:] - 1] = True
        return out

    @cached_property
    def step_left(self) -> np.ndarray:
        """Left index of every within-subject step ``j -> j + 1``."""
        return np.flatnonzero(~self.is_last)

    @cached_property
    def step_dt(self) -> np.ndarray:
        return self.times[self.step_left + 1] - self.times[self.step_left]

    def subject_times(self, i: int) -> np.ndarray:
        return self.times[self.offsets[i]:self.offsets[i + 1]]

    def subject_observed(self, i: int) -> np.ndarray:
        return self.observed[self.offsets[i]:self.offsets[i + 1]]

    def ancestors(self, index: int, grids) -> int:
        """Follow ``parent`` links down to the level-1 grid in ``grids``.

        ``grids`` maps level to grid and must contain every level between 1
        and this one.
        """
        g, j = self, int(index)
        while g.level > 1:
            j = int(g.parent[j])
            g = grids[g.level - 1]
        return j


def _from_pieces(level, subject_times, subject_observed, parents=None, new=None):
    counts = [len(t) for t in subject_times]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    times = np.concatenate(subject_times).astype(float)
    observed = np.concatenate(subject_observed).astype(bool)
    n = len(times)
    parent = np.concatenate(parents).astype(np.int64) if parents else np.full(n, -1)
    is_new = np.concatenate(new).astype(bool) if new else np.zeros(n, dtype=bool)
    return ResolutionGrid(level, times, offsets, observed, parent, is_new)


def _check_times(obs_times):
    out = []
    for i, t in enumerate(obs_times):
        t = np.asarray(t, dtype=float)
        if t.ndim != 1 or len(t) < 1:
            raise ValueError(f"subject {i}: need a 1-D list of observation times")
        if not np.all(np.isfinite(t)):
            raise ValueError(f"subject {i}: non-finite observation time")
        d = np.diff(t)
        if np.any(d == 0):
            raise ValueError(f"subject {i}: duplicate observation time {t[1:][d == 0][0]}")
        if np.any(d < 0):
            raise ValueError(f"subject {i}: observation times are not increasing")
        out.append(t)
    return out


def observation_grid(obs_times) -> ResolutionGrid:
    """Level-0 grid holding only the observation times."""
    obs_times = _check_times(obs_times)
    return _from_pieces(0, obs_times, [np.ones(len(t), dtype=bool) for t in obs_times])


def build_level1(obs_times, target_dt: float) -> ResolutionGrid:
    """First-resolution grid with evenly spaced imputations.

    Each observed interval of length ``dt`` is split into
    ``ceil(dt / target_dt)`` equal sub-intervals.

    Examples
    --------
    >>> build_level1([[0.0, 1.0]], 0.5).times
    array([0. , 0.5, 1. ])
    """
    if not target_dt > 0:
        raise ValueError(f"target_dt must be positive, got {target_dt}")
    obs_times = _check_times(obs_times)
    times, observed = [], []
    for t in obs_times:
        pieces, flags = [], []
        for a, b in zip(t[:-1], t[1:]):
            m = max(1, int(np.ceil((b - a) / target_dt - 1e-9)))
            pieces.append(a + (b - a) * np.arange(m) / m)
            flags.append(np.arange(m) == 0)
        pieces.append(t[-1:])
        flags.append(np.ones(1, dtype=bool))
        times.append(np.concatenate(pieces))
        observed.append(np.concatenate(flags))
    return _from_pieces(1, times, observed)


def refine(grid: ResolutionGrid) -> ResolutionGrid:
    """Insert the midpoint of every adjacent pair, producing level ``k + 1``."""
    times, observed, parents, new = [], [], [], []
    for i in range(grid.n_subjects):
        t = grid.subject_times(i)
        obs = grid.subject_observed(i)
        n = len(t)
        out = np.empty(2 * n - 1)
        out[0::2] = t
        out[1::2] = t[:-1] + (t[1:] - t[:-1]) / 2.0
        flag = np.zeros(2 * n - 1, dtype=bool)
        flag[0::2] = obs
        par = grid.offsets[i] + np.arange(2 * n - 1) // 2
        is_new = np.zeros(2 * n - 1, dtype=bool)
        is_new[1::2] = True
        times.append(out)
        observed.append(flag)
        parents.append(par)
        new.append(is_new)
    return _from_pieces(grid.level + 1, times, observed, parents, new)


@dataclass
class LatentPaths:
    """Latent states aligned one-to-one with a grid's points."""

    grid: ResolutionGrid
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape != (self.grid.n_points,):
            raise ValueError("path length does not match the grid")

    def subject(self, i: int) -> np.ndarray:
        return self.x[self.grid.offsets[i]:self.grid.offsets[i + 1]]

    @property
    def initial(self) -> np.ndarray:
        return self.x[self.grid.offsets[:-1]]


class LevelContext:
    """A grid bound to the data: regimes, covariates and observation rows.

    This is the object every sampler works against.  ``y`` must already be in
    the modelling scale (standardized or not) with rows ordered like
    ``grid.obs_index``.
    """

    def __init__(self, grid: ResolutionGrid, y, covariates, windows):
        self.grid = grid
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if self.y.shape[0] != len(grid.obs_index):
            raise ValueError("number of observation rows does not match the grid")
        if self.covariates.shape[0] != grid.n_subjects or len(windows) != grid.n_subjects:
            raise ValueError("covariates/windows must have one entry per subject")
        self.windows = list(windows)
        day = np.zeros(grid.n_points, dtype=bool)
        for i, w in enumerate(self.windows):
            sl = slice(grid.offsets[i], grid.offsets[i + 1])
            day[sl] = w.contains(grid.times[sl])
        self.day = day
        self.subject = grid.subject
        self.times = grid.times
        self.obs_index = grid.obs_index
        self.obs_row = np.full(grid.n_points, -1, dtype=np.int64)
        self.obs_row[self.obs_index] = np.arange(len(self.obs_index))
        self.step_left = grid.step_left
        self.step_dt = grid.step_dt
        self.step_day = day[self.step_left]
        self.step_subject = self.subject[self.step_left]
        self.updatable = np.flatnonzero(~grid.is_first)
        self._blocks = None

    @property
    def level(self) -> int:
        return self.grid.level

    @property
    def n_steps(self) -> int:
        return len(self.step_left)

    def bstar(self, params: ModelParams) -> np.ndarray:
        return beta_star(self.covariates, params.beta)

    def point_coeffs(self, params: ModelParams) -> np.ndarray:
        """Drift coefficients for every grid point, shape (N, 6)."""
        return self.bstar(params)[self.subject]

    def drift(self, x, params: ModelParams, coeffs=None) -> np.ndarray:
        cp = self.point_coeffs(params) if coeffs is None else coeffs
        return drift_values(x, self.day, cp)

    def step_logdensities(self, x, params: ModelParams, coeffs=None) -> np.ndarray:
        j = self.step_left
        cp = self.point_coeffs(params) if coeffs is None else coeffs
        f = drift_values(x[j], self.step_day, cp[j])
        return euler_step_logdensity(x[j + 1], x[j], self.step_dt, f, params.psi)

    def step_residuals(self, x, params: ModelParams) -> np.ndarray:
        """``dx - drift * dt`` for every step."""
        j = self.step_left
        f = drift_values(x[j], self.step_day, self.point_coeffs(params)[j])
        return x[j + 1] - x[j] - f * self.step_dt

    def regime_quadratic(self, x, params: ModelParams, block: int, beta_row=None):
        """``sum (dx - f dt)^2 / dt`` over the steps governed by ``block``.

        Only those steps depend on the coefficient vector of that block, which
        is replaced by ``beta_row`` when given.
        """
        day = block in DAY_BLOCKS
        sel = self._regime_steps(day)
        j = self.step_left[sel]
        if beta_row is None:
            beta = params.beta
        else:
            beta = params.beta.copy()
            beta[block] = beta_row
        bs = beta_star(self.covariates, beta)[self.step_subject[sel]]
        f = drift_values(x[j], day, bs)
        dt = self.step_dt[sel]
        r = x[j + 1] - x[j] - f * dt
        with np.errstate(over="ignore", invalid="ignore"):
            q = float(np.sum(r * r / dt))
        return q if np.isfinite(q) else np.inf

    def _regime_steps(self, day: bool) -> np.ndarray:
        key = "_day_steps" if day else "_night_steps"
        sel = getattr(self, key, None)
        if sel is None:
            sel = np.flatnonzero(self.step_day == day)
            setattr(self, key, sel)
        return sel

    def measurement_loglik(self, x, params: ModelParams) -> float:
        return float(np.sum(measurement_loglik_rows(self.y, x[self.obs_index], params)))

    def pseudo_obs(self, params: ModelParams):
        """Per-point Gaussian factor of the measurements, see
        :func:`~lsdem.model.measurement_pseudo_obs`."""
        return measurement_pseudo_obs(self.y, params)

    def log_posterior(self, x, params: ModelParams, prior) -> float:
        """Joint posterior kernel: Euler likelihood, measurement likelihood, priors."""
        lp = prior.logpdf(params, self.covariates)
        if not np.isfinite(lp):
            return -np.inf
        ll = np.sum(self.step_logdensities(x, params))
        if not np.isfinite(ll):
            return -np.inf
        return float(ll + self.measurement_loglik(x, params) + lp)

    @property
    def blocks(self):
        """``(start, n_steps)`` of every span between consecutive observed
        points that contains at least one imputed point."""
        if self._blocks is None:
            obs = self.obs_index
            same = self.subject[obs[:-1]] == self.subject[obs[1:]]
            start = obs[:-1][same]
            length = (obs[1:] - obs[:-1])[same]
            keep = length >= 2
            self._blocks = (start[keep], length[keep])
        return self._blocks


def fill_logdensity(x, context: LevelContext, params: ModelParams, alpha: float = 0.0,
                    coeffs=None) -> float:
    """Log proposal density of the inserted midpoints given their neighbours."""
    j = np.flatnonzero(context.grid.is_new)
    if len(j) == 0:
        return 0.0
    mean, var = _fill_moments(x, j, context, params, alpha, coeffs)
    return float(np.sum(gaussian_logpdf(x[j], mean, var)))


def _fill_moments(x, j, context, params, alpha, coeffs=None):
    cp = context.point_coeffs(params) if coeffs is None else coeffs
    t = context.times
    f = drift_values(x[j - 1], context.day[j - 1], cp[j - 1])
    return bridge_moments(x[j - 1], x[j + 1], t[j] - t[j - 1], t[j + 1] - t[j],
                          f, params.psi, alpha)


def lift_paths(x_coarse, context: LevelContext, params: ModelParams, rng,
               alpha: float = 0.0):
    """Carry level ``k - 1`` states to level ``k`` and fill the new midpoints.

    Each midpoint is drawn from the one-step bridge between its two carried
    neighbours.  Returns ``(x_fine, log_q)`` where ``log_q`` is the joint
    log-density of the filled values.
    """
    grid = context.grid
    x_coarse = np.asarray(x_coarse, dtype=float)
    old = ~grid.is_new
    x = np.empty(grid.n_points)
    x[old] = x_coarse[grid.parent[old]]
    j = np.flatnonzero(grid.is_new)
    mean, var = _fill_moments(x, j, context, params, alpha)
    x[j] = mean + np.sqrt(var) * rng.standard_normal(len(j))
    log_q = float(np.sum(gaussian_logpdf(x[j], mean, var)))
    return x, log_q


def coarsen(x, grid: ResolutionGrid) -> np.ndarray:
    """States at the level ``k - 1`` points, in level ``k - 1`` order."""
    return np.asarray(x)[~grid.is_new]
