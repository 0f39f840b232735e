"""Dual nonlinear Ornstein-Uhlenbeck model: drift, Euler transitions, measurement.

The latent process for subject ``i`` follows

    dx = [1{t in day} b1 (b2 - x)^b3 + 1{t not in day} b4 (b5 - x)^b6] dt + sqrt(psi) dB

with subject-specific coefficients ``b_j = w_i . beta_j``.  Powers of a
negative base are evaluated as signed powers ``sign(b) |b|^e`` so the drift
always points toward the regime equilibrium.

Everything here is a pure function of state and parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

#: Largest admissible |drift * dt| before a step is treated as impossible.
DRIFT_STEP_CAP = 1e6

#: Coefficient blocks whose per-subject value must stay strictly positive.
POSITIVE_BLOCKS = (0, 2, 3, 5)
DAY_BLOCKS = (0, 1, 2)
NIGHT_BLOCKS = (3, 4, 5)


class DriftOverflowError(FloatingPointError):
    """The drift evaluated to a non-finite value."""


@dataclass
class ModelParams:
    """Full parameter set of the latent SDE model.

    Attributes
    ----------
    beta : ndarray of shape (6, c)
        Slope vectors of the six drift coefficients; row ``j`` maps covariates
        to the ``j``-th coefficient.
    psi : float
        Variance rate of the Wiener term.
    mu : ndarray of shape (p,)
        Measurement intercepts.
    lam : ndarray of shape (p,)
        Factor loadings, ``lam[0] == 1`` for identification.
    sigma2 : ndarray of shape (p,)
        Measurement error variances (diagonal of the error covariance).
    """

    beta: np.ndarray
    psi: float
    mu: np.ndarray
    lam: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        self.psi = float(self.psi)
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if self.beta.shape[0] != 6:
            raise ValueError(f"beta must have 6 rows, got shape {self.beta.shape}")
        if not (self.mu.shape == self.lam.shape == self.sigma2.shape):
            raise ValueError("mu, lam and sigma2 must have the same length")

    @property
    def n_channels(self) -> int:
        return self.mu.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.beta.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(self.beta.copy(), self.psi, self.mu.copy(),
                           self.lam.copy(), self.sigma2.copy())

    def to_vector(self) -> np.ndarray:
        """Flatten to ``[beta (row-major), psi, mu, lam, sigma2]``."""
        return np.concatenate([self.beta.ravel(), [self.psi], self.mu,
                               self.lam, self.sigma2])

    @classmethod
    def from_vector(cls, vec, n_covariates: int, n_channels: int) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        c, p = n_covariates, n_channels
        nb = 6 * c
        if vec.shape != (nb + 1 + 3 * p,):
            raise ValueError("parameter vector has the wrong length")
        return cls(vec[:nb].reshape(6, c), vec[nb], vec[nb + 1:nb + 1 + p],
                   vec[nb + 1 + p:nb + 1 + 2 * p], vec[nb + 1 + 2 * p:])

    @staticmethod
    def vector_names(n_covariates: int, n_channels: int) -> list[str]:
        names = [f"beta{j + 1}_{k}" for j in range(6) for k in range(n_covariates)]
        names.append("psi")
        for prefix in ("mu", "lambda", "sigma2"):
            names += [f"{prefix}_{r + 1}" for r in range(n_channels)]
        return names


@dataclass
class DayNightWindow:
    """Daytime intervals ``[start, end)`` of one subject, in rescaled time units."""

    intervals: list = field(default_factory=list)

    def __post_init__(self):
        ivs = sorted((float(a), float(b)) for a, b in self.intervals)
        for a, b in ivs:
            if not b > a:
                raise ValueError(f"empty or reversed day interval [{a}, {b})")
        for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
            if a1 < b0:
                raise ValueError("day intervals overlap")
        self.intervals = ivs

    def contains(self, t) -> np.ndarray:
        """Boolean mask, True where ``t`` falls inside a daytime interval."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (t >= a) & (t < b)
        return out


def signed_power(base, exponent):
    """``sign(base) * |base| ** exponent`` elementwise."""
    base = np.asarray(base, dtype=float)
    return np.sign(base) * np.abs(base) ** exponent


def beta_star(covariates, beta) -> np.ndarray:
    """Per-subject drift coefficients ``W @ beta.T`` with shape (n, 6)."""
    return np.atleast_2d(np.asarray(covariates, dtype=float)) @ np.asarray(beta).T


def satisfies_constraints(covariates, beta) -> bool:
    """True when coefficients 1, 3, 4 and 6 are positive for every subject."""
    bs = beta_star(covariates, beta)
    return bool(np.all(bs[:, POSITIVE_BLOCKS] > 0))


def drift_values(x, day, bstar) -> np.ndarray:
    """Vectorized drift.

    Parameters
    ----------
    x : array_like
        Latent states.
    day : array_like of bool
        Regime indicator at the time of each state.
    bstar : array_like of shape (..., 6)
        Coefficients aligned with ``x`` (broadcastable).
    """
    x = np.asarray(x, dtype=float)
    bstar = np.asarray(bstar, dtype=float)
    day = np.asarray(day, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        f_day = bstar[..., 0] * signed_power(bstar[..., 1] - x, bstar[..., 2])
        f_night = bstar[..., 3] * signed_power(bstar[..., 4] - x, bstar[..., 5])
    return np.where(day, f_day, f_night)


def drift(x: float, t: float, coeffs, window: DayNightWindow) -> float:
    """Drift of one subject at state ``x`` and time ``t``.

    ``coeffs`` holds the six per-subject coefficients.  Raises
    :class:`DriftOverflowError` when the power overflows.
    """
    day = bool(window.contains(t))
    value = float(drift_values(x, day, np.asarray(coeffs, dtype=float)))
    if not math.isfinite(value):
        raise DriftOverflowError(f"non-finite drift at x={x}, t={t}")
    return value


def gaussian_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def euler_step_logdensity(x_next, x_curr, dt, f, psi):
    """Vectorized Euler transition log-density given precomputed drift ``f``.

    Steps whose drift is non-finite or whose ``|f dt|`` exceeds
    :data:`DRIFT_STEP_CAP` get ``-inf``.
    """
    dt = np.asarray(dt, dtype=float)
    f = np.asarray(f, dtype=float)
    step = f * dt
    bad = ~np.isfinite(step) | (np.abs(step) > DRIFT_STEP_CAP)
    safe_step = np.where(bad, 0.0, step)
    out = gaussian_logpdf(x_next, np.asarray(x_curr) + safe_step, psi * dt)
    return np.where(bad, -np.inf, out)


def euler_logdensity(x_next: float, x_curr: float, dt: float, coeffs,
                     window: DayNightWindow, psi: float, t: float = 0.0) -> float:
    """Log-density of one Euler-Maruyama step from ``(t, x_curr)`` to ``x_next``.

    The drift regime is taken at the left end ``t`` of the step.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not psi > 0:
        raise ValueError(f"psi must be positive, got {psi}")
    day = bool(window.contains(t))
    f = drift_values(x_curr, day, np.asarray(coeffs, dtype=float))
    return float(euler_step_logdensity(x_next, x_curr, dt, f, psi))


def measurement_logdensity(y, x: float, params: ModelParams) -> float:
    """Sum over channels of ``log N(y_r; mu_r + lam_r x, sigma2_r)``."""
    y = np.asarray(y, dtype=float)
    if y.shape != params.mu.shape:
        raise ValueError(f"y has shape {y.shape}, expected {params.mu.shape}")
    return float(np.sum(gaussian_logpdf(y, params.mu + params.lam * x, params.sigma2)))


def measurement_loglik_rows(y, x, params: ModelParams) -> np.ndarray:
    """Per-row measurement log-density for stacked observations.

    ``y`` has shape (m, p) and ``x`` shape (m,).
    """
    resid = y - params.mu - np.outer(x, params.lam)
    return -0.5 * np.sum(LOG_2PI + np.log(params.sigma2) + resid ** 2 / params.sigma2,
                         axis=1)


def measurement_precision(params: ModelParams) -> float:
    """Precision contributed to a latent state by one full observation vector."""
    return float(np.sum(params.lam ** 2 / params.sigma2))


def measurement_pseudo_obs(y, params: ModelParams):
    """Gaussian factor in ``x`` implied by observation rows ``y``.

    Returns ``(mean, var)`` with ``prod_r N(y_r; mu_r + lam_r x, s_r) \\propto
    N(x; mean, var)``.
    """
    prec = measurement_precision(params)
    mean = ((np.asarray(y) - params.mu) @ (params.lam / params.sigma2)) / prec
    return mean, 1.0 / prec


def path_loglik(paths, level, params: ModelParams) -> float:
    """Euler approximate log-likelihood of latent paths, summed over all steps.

    ``paths`` is a :class:`~lsdem.grid.LatentPaths` or a flat state array;
    ``level`` is the :class:`~lsdem.grid.LevelContext` the paths live on.
    Returns ``-inf`` when any step has a non-finite drift.
    """
    x = getattr(paths, "x", paths)
    return float(np.sum(level.step_logdensities(x, params)))
