"""Regularized Brownian-bridge samplers for latent path segments.

One-step proposal for a point at time ``t`` between ``(t_prev, x_prev)`` and
``(t_next, x_next)``, with ``d1 = t - t_prev``, ``d2 = t_next - t``,
``d = d1 + d2`` and ``f = drift(x_prev)``::

    mean = (d2 * x_prev + d1 * x_next) / d + alpha * f * d1 * d2 / d
    var  = psi * d1 * d2 / d

``alpha = 0`` gives the modified diffusion bridge, which is the exact
conditional law when the drift vanishes.  ``alpha > 0`` restores part of the
drift far from the pinned endpoint and fades it out as ``d2 -> 0``.

The block sampler chains one-step proposals from the left endpoint toward
the fixed right endpoint of a span, treating the right endpoint as the
``x_next`` of every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import (DayNightWindow, drift_values, euler_step_logdensity,
                    gaussian_logpdf)


def bridge_moments(x_prev, x_next, d1, d2, f_prev, psi, alpha=0.0):
    """Mean and variance of the one-step bridge proposal (vectorized)."""
    d = d1 + d2
    f = np.where(np.isfinite(f_prev), f_prev, 0.0)
    mean = (d2 * x_prev + d1 * x_next) / d
    if alpha:
        mean = mean + alpha * f * d1 * d2 / d
    var = psi * d1 * d2 / d
    return mean, var


@dataclass(frozen=True)
class BridgeProposal:
    """Gaussian proposal for one latent state."""

    mean: float
    variance: float
    fallback: bool = False

    def log_density(self, x):
        return gaussian_logpdf(x, self.mean, self.variance)

    def sample(self, rng, size=None):
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(size)


def one_step_proposal(x_prev: float, x_next: float, t_prev: float, t: float,
                      t_next: float, coeffs, window: DayNightWindow, psi: float,
                      alpha: float = 0.0) -> BridgeProposal:
    """Bridge proposal for the state at ``t`` given both neighbours.

    A non-finite drift at ``x_prev`` falls back to the driftless bridge and
    sets ``fallback``.
    """
    if not t_prev < t < t_next:
        raise ValueError("need t_prev < t < t_next")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    f = drift_values(x_prev, bool(window.contains(t_prev)), np.asarray(coeffs, float))
    fallback = not np.isfinite(f)
    mean, var = bridge_moments(x_prev, x_next, t - t_prev, t_next - t, f, psi, alpha)
    return BridgeProposal(float(mean), float(var), fallback)


class MoveStats(NamedTuple):
    accepted: int
    attempted: int
    log_ratio: np.ndarray


def _mh_accept(log_ratio, u):
    # an impossible current state accepts any proposal with a finite target
    lr = np.where(np.isnan(log_ratio), -np.inf, log_ratio)
    return np.log(u) < lr


def update_sites(x, context, params, sites, alpha=0.0, rng=None, coeffs=None,
                 pseudo=None) -> MoveStats:
    """MH update of a set of mutually non-adjacent grid points, in place.

    Interior points are proposed from the one-step bridge, the last point of
    a subject from the forward Euler step.  At observed points the proposal is
    additionally multiplied by the Gaussian measurement factor, which then
    cancels from the acceptance ratio.
    """
    sites = np.asarray(sites, dtype=np.int64)
    if len(sites) == 0:
        return MoveStats(0, 0, np.empty(0))
    t = context.times
    day = context.day
    psi = params.psi
    cp = context.point_coeffs(params) if coeffs is None else coeffs
    if pseudo is None:
        pseudo = context.pseudo_obs(params)
    m_y, v_y = pseudo

    j = sites
    prev = j - 1
    last = context.grid.is_last[j]
    nxt = np.where(last, j, j + 1)
    x_prev = x[prev]
    x_next = x[nxt]
    d1 = t[j] - t[prev]
    d2 = t[nxt] - t[j]
    f_prev = drift_values(x_prev, day[prev], cp[prev])
    finite = np.isfinite(f_prev)
    f_safe = np.where(finite, f_prev, 0.0)

    d2_safe = np.where(last, 1.0, d2)
    b_mean, b_var = bridge_moments(x_prev, x_next, d1, d2_safe, f_safe, psi, alpha)
    q_mean = np.where(last, x_prev + f_safe * d1, b_mean)
    q_var = np.where(last, psi * d1, b_var)

    row = context.obs_row[j]
    obs = row >= 0
    if np.any(obs):
        my = m_y[row[obs]]
        prec = 1.0 / q_var[obs] + 1.0 / v_y
        q_mean[obs] = (q_mean[obs] / q_var[obs] + my / v_y) / prec
        q_var[obs] = 1.0 / prec

    z = rng.standard_normal(len(j))
    x_new = q_mean + np.sqrt(q_var) * z

    def log_target(xj):
        lt = euler_step_logdensity(xj, x_prev, d1, f_prev, psi)
        f_here = drift_values(xj, day[j], cp[j])
        nxt_term = euler_step_logdensity(x_next, xj, d2_safe, f_here, psi)
        lt = lt + np.where(last, 0.0, nxt_term)
        if np.any(obs):
            meas = np.zeros(len(j))
            meas[obs] = gaussian_logpdf(xj[obs], m_y[row[obs]], v_y)
            lt = lt + meas
        return lt

    x_old = x[j]
    log_ratio = (log_target(x_new) - log_target(x_old)
                 - gaussian_logpdf(x_new, q_mean, q_var)
                 + gaussian_logpdf(x_old, q_mean, q_var))
    u = rng.random(len(j))
    acc = _mh_accept(log_ratio, u)
    x[j[acc]] = x_new[acc]
    return MoveStats(int(acc.sum()), len(j), log_ratio)


def update_point(x, context, index: int, params, alpha=0.0, rng=None) -> bool:
    """Single-site MH update of ``x[index]``; returns whether it was accepted."""
    if context.grid.is_first[index]:
        raise ValueError("the initial state of a subject is fixed")
    return bool(update_sites(x, context, params, [index], alpha, rng).accepted)


def update_points(x, context, params, alpha=0.0, rng=None, coeffs=None) -> MoveStats:
    """One pass of single-site updates over every non-initial point.

    Even and odd flat indices are updated in two vectorized half-sweeps; the
    points of one half-sweep are conditionally independent given the other.
    """
    cp = context.point_coeffs(params) if coeffs is None else coeffs
    pseudo = context.pseudo_obs(params)
    sites = context.updatable
    accepted, attempted, ratios = 0, 0, []
    for parity in (0, 1):
        s = sites[sites % 2 == parity]
        st = update_sites(x, context, params, s, alpha, rng, cp, pseudo)
        accepted += st.accepted
        attempted += st.attempted
        ratios.append(st.log_ratio)
    return MoveStats(accepted, attempted, np.concatenate(ratios))


def _block_proposal_logq(cols, t_cols, x_r, t_r, day_cols, coef, length, psi, alpha):
    """Log-density of ``cols[:, 1:length]`` under the chained bridge proposal."""
    lq = np.zeros(cols.shape[0])
    for m in range(1, cols.shape[1] - 1):
        active = m < length
        f = drift_values(cols[:, m - 1], day_cols[:, m - 1], coef)
        mean, var = bridge_moments(cols[:, m - 1], x_r,
                                   np.where(active, t_cols[:, m] - t_cols[:, m - 1], 1.0),
                                   np.where(active, t_r - t_cols[:, m], 1.0), f, psi, alpha)
        lq += np.where(active, gaussian_logpdf(cols[:, m], mean, var), 0.0)
    return lq


def update_blocks(x, context, params, alpha=0.0, rng=None, blocks=None,
                  coeffs=None) -> MoveStats:
    """Joint MH update of the imputed points between consecutive observations.

    ``blocks`` is ``(start, n_steps)``; defaults to every span of the grid.
    All spans are conditionally independent given the observed states, so
    they are proposed and accepted in one vectorized pass.
    """
    start, length = context.blocks if blocks is None else blocks
    start = np.asarray(start, dtype=np.int64)
    length = np.asarray(length, dtype=np.int64)
    if len(start) == 0:
        return MoveStats(0, 0, np.empty(0))
    psi = params.psi
    cp = context.point_coeffs(params) if coeffs is None else coeffs
    lmax = int(length.max())
    idx = start[:, None] + np.minimum(np.arange(lmax + 1)[None, :], length[:, None])
    t_cols = context.times[idx]
    day_cols = context.day[idx]
    coef = cp[start]
    old = x[idx]
    right = start + length
    x_r = x[right]
    t_r = context.times[right]

    new = old.copy()
    logq_new = np.zeros(len(start))
    for m in range(1, lmax):
        active = m < length
        f = drift_values(new[:, m - 1], day_cols[:, m - 1], coef)
        mean, var = bridge_moments(new[:, m - 1], x_r,
                                   np.where(active, t_cols[:, m] - t_cols[:, m - 1], 1.0),
                                   np.where(active, t_r - t_cols[:, m], 1.0), f, psi, alpha)
        prop = mean + np.sqrt(var) * rng.standard_normal(len(start))
        new[:, m] = np.where(active, prop, new[:, m])
        logq_new += np.where(active, gaussian_logpdf(prop, mean, var), 0.0)
    logq_old = _block_proposal_logq(old, t_cols, x_r, t_r, day_cols, coef, length,
                                    psi, alpha)

    def log_target(cols):
        total = np.zeros(len(start))
        for m in range(lmax):
            active = m < length
            f = drift_values(cols[:, m], day_cols[:, m], coef)
            dt = np.where(active, t_cols[:, m + 1] - t_cols[:, m], 1.0)
            lp = euler_step_logdensity(cols[:, m + 1], cols[:, m], dt, f, psi)
            total += np.where(active, lp, 0.0)
        return total

    log_ratio = log_target(new) - log_target(old) - logq_new + logq_old
    u = rng.random(len(start))
    acc = _mh_accept(log_ratio, u)
    if np.any(acc):
        interior = (np.arange(lmax + 1)[None, :] >= 1) & \
                   (np.arange(lmax + 1)[None, :] < length[:, None]) & acc[:, None]
        x[idx[interior]] = new[interior]
    return MoveStats(int(acc.sum()), len(start), log_ratio)


def update_block(x, context, start: int, n_steps: int, params, alpha=0.0,
                 rng=None) -> bool:
    """Block update of the single span ``start .. start + n_steps``."""
    st = update_blocks(x, context, params, alpha, rng,
                       blocks=(np.array([start]), np.array([n_steps])))
    return bool(st.accepted)
