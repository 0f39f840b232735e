"""Priors and full-conditional updates of the parameter blocks.

Measurement parameters and the diffusion variance have conjugate updates;
the drift slopes are sampled by blockwise adaptive random-walk Metropolis with
the positivity constraints enforced by rejection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .model import LOG_2PI, POSITIVE_BLOCKS, ModelParams, beta_star

logger = logging.getLogger(__name__)


def rng_stream(seed: int, *stream_id: int) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, stream_id)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(stream_id)))


def _inv_gamma(rng, shape, scale):
    return scale / rng.gamma(shape)


def _ig_logpdf(x, a, b):
    from scipy.special import gammaln
    x = np.asarray(x, dtype=float)
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


@dataclass
class PriorSpec:
    """Hyperparameters.

    Scalars broadcast over channels (``p``) and covariates (``c``).  Defaults
    are the vague values of the ambulatory blood-pressure analysis; the
    intercept prior ``mu0, sigma2_mu0`` is not published there and is set
    vague here.
    """

    mu0: object = 0.0
    sigma2_mu0: object = 1e6
    lambda0: object = 0.0
    sigma_lambda: object = 1e6
    a1: object = 3.0
    a2: object = 1.0
    b0: object = 0.0
    sigma_b0: object = 1e6
    a_psi1: float = 0.01
    a_psi2: float = 0.01
    _shape: tuple = field(default=None, repr=False, compare=False)

    def resolve(self, n_channels: int, n_covariates: int) -> "PriorSpec":
        """Broadcast every hyperparameter to its full shape and validate."""
        p, c = n_channels, n_covariates
        out = PriorSpec(
            mu0=np.broadcast_to(np.asarray(self.mu0, float), (p,)).copy(),
            sigma2_mu0=np.broadcast_to(np.asarray(self.sigma2_mu0, float), (p,)).copy(),
            lambda0=np.broadcast_to(np.asarray(self.lambda0, float), (p,)).copy(),
            sigma_lambda=np.broadcast_to(np.asarray(self.sigma_lambda, float), (p,)).copy(),
            a1=np.broadcast_to(np.asarray(self.a1, float), (p,)).copy(),
            a2=np.broadcast_to(np.asarray(self.a2, float), (p,)).copy(),
            b0=np.broadcast_to(np.asarray(self.b0, float), (6, c)).copy(),
            sigma_b0=np.broadcast_to(np.asarray(self.sigma_b0, float), (6, c)).copy(),
            a_psi1=float(self.a_psi1), a_psi2=float(self.a_psi2), _shape=(p, c))
        for name in ("sigma2_mu0", "sigma_lambda", "a1", "a2", "sigma_b0"):
            if np.any(getattr(out, name) <= 0):
                raise ValueError(f"prior {name} must be positive")
        if out.a_psi1 <= 0 or out.a_psi2 <= 0:
            raise ValueError("prior a_psi1 and a_psi2 must be positive")
        return out

    def to_dict(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name)).tolist()
                for f in fields(self) if not f.name.startswith("_")}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior keys: {sorted(unknown)}")
        return cls(**d)

    def _need(self, params: ModelParams):
        shape = (params.n_channels, params.n_covariates)
        return self if self._shape == shape else self.resolve(*shape)

    def logpdf(self, params: ModelParams, covariates) -> float:
        """Log prior density up to a constant; ``-inf`` outside the constraints."""
        pr = self._need(params)
        if params.psi <= 0 or np.any(params.sigma2 <= 0):
            return -np.inf
        if not np.all(beta_star(covariates, params.beta)[:, POSITIVE_BLOCKS] > 0):
            return -np.inf
        lp = -0.5 * np.sum((params.mu - pr.mu0) ** 2 / pr.sigma2_mu0
                           + np.log(pr.sigma2_mu0) + LOG_2PI)
        v = params.sigma2[1:] * pr.sigma_lambda[1:]
        lp += -0.5 * np.sum((params.lam[1:] - pr.lambda0[1:]) ** 2 / v + np.log(v) + LOG_2PI)
        lp += np.sum(_ig_logpdf(params.sigma2, pr.a1, pr.a2))
        lp += -0.5 * np.sum((params.beta - pr.b0) ** 2 / pr.sigma_b0
                            + np.log(pr.sigma_b0) + LOG_2PI)
        lp += float(_ig_logpdf(params.psi, pr.a_psi1, pr.a_psi2))
        return float(lp)


# -- measurement intercepts -------------------------------------------------

def mu_conditional(y, x_obs, params: ModelParams, prior: PriorSpec):
    """Gaussian full conditional of each intercept: ``(mean, var)`` arrays."""
    pr = prior._need(params)
    y = np.atleast_2d(y)
    n = y.shape[0]
    resid = y - np.outer(x_obs, params.lam)
    prec = 1.0 / pr.sigma2_mu0 + n / params.sigma2
    mean = (pr.mu0 / pr.sigma2_mu0 + resid.sum(axis=0) / params.sigma2) / prec
    return mean, 1.0 / prec


def update_mu(y, x_obs, params: ModelParams, prior: PriorSpec, rng) -> np.ndarray:
    mean, var = mu_conditional(y, x_obs, params, prior)
    return mean + np.sqrt(var) * rng.standard_normal(len(mean))


# -- loadings and error variances ---------------------------------------------

@dataclass
class LoadingConditional:
    """Normal-inverse-gamma conditional per channel.

    ``sigma2 ~ IG(shape, scale)`` and ``lam | sigma2 ~ N(mean, sigma2 * var)``;
    channel 0 has ``mean = 1`` and ``var = 0`` (loading fixed).
    """

    mean: np.ndarray
    var: np.ndarray
    shape: np.ndarray
    scale: np.ndarray


def lambda_sigma_conditional(y, x_obs, params: ModelParams, prior: PriorSpec):
    pr = prior._need(params)
    y = np.atleast_2d(y)
    n, p = y.shape
    x = np.asarray(x_obs, dtype=float)
    e = y - params.mu
    sxx = float(x @ x)
    if sxx == 0.0:
        logger.warning("latent states at observed times are all zero; "
                       "loadings fall back to their prior")
    var = 1.0 / (1.0 / pr.sigma_lambda + sxx)
    mean = var * (pr.lambda0 / pr.sigma_lambda + x @ e)
    shape = pr.a1 + n / 2.0
    scale = pr.a2 + 0.5 * (np.sum(e * e, axis=0) + pr.lambda0 ** 2 / pr.sigma_lambda
                           - mean ** 2 / var)
    # identification: first loading fixed at one
    mean[0] = 1.0
    var[0] = 0.0
    scale[0] = pr.a2[0] + 0.5 * np.sum((e[:, 0] - x) ** 2)
    return LoadingConditional(mean, var, shape, scale)


def update_lambda_sigma(y, x_obs, params: ModelParams, prior: PriorSpec, rng):
    """Draw ``(lam, sigma2)``; ``lam[0]`` stays exactly 1."""
    cond = lambda_sigma_conditional(y, x_obs, params, prior)
    sigma2 = _inv_gamma(rng, cond.shape, cond.scale)
    lam = cond.mean + np.sqrt(sigma2 * cond.var) * rng.standard_normal(len(cond.mean))
    lam[0] = 1.0
    return lam, sigma2


# -- diffusion variance -------------------------------------------------------

def psi_conditional(x, context, params: ModelParams, prior: PriorSpec):
    """Inverse-gamma ``(shape, scale)`` of the diffusion variance."""
    pr = prior._need(params)
    r = context.step_residuals(x, params)
    ss = float(np.sum(r * r / context.step_dt))
    return pr.a_psi1 + context.n_steps / 2.0, pr.a_psi2 + 0.5 * ss


def update_psi(x, context, params: ModelParams, prior: PriorSpec, rng) -> float:
    shape, scale = psi_conditional(x, context, params, prior)
    if not np.isfinite(scale):
        return params.psi
    return float(_inv_gamma(rng, shape, scale))


# -- drift slopes ---------------------------------------------------------------

class BetaSampler:
    """Blockwise random-walk Metropolis for the six drift slope vectors.

    Each block ``j`` proposes ``beta_j + scale_j * L_j z``.  While adapting,
    ``L_j`` tracks the Cholesky factor of the block's running covariance and
    ``scale_j`` is pushed toward a 30% acceptance rate; call :meth:`freeze`
    after burn-in.
    """

    target_rate = 0.3
    adapt_every = 50
    cov_after = 200

    def __init__(self, n_covariates: int, init_scale: float = 0.05):
        c = n_covariates
        self.n_covariates = c
        self.log_scale = np.full(6, np.log(init_scale))
        self.chol = np.tile(np.eye(c), (6, 1, 1))
        self.adapting = True
        self._history = [[] for _ in range(6)]
        self._recent = np.zeros(6)
        self._count = 0
        self._n_adapt = 0
        self._uses_cov = np.zeros(6, dtype=bool)

    def freeze(self):
        self.adapting = False
        self._history = [[] for _ in range(6)]

    def restart(self):
        self.adapting = True
        self._recent[:] = 0
        self._count = 0

    def log_accept_ratio(self, block: int, proposal, x, context, params: ModelParams,
                         prior: PriorSpec) -> float:
        """Log MH ratio for replacing ``beta[block]`` by ``proposal``."""
        pr = prior._need(params)
        proposal = np.asarray(proposal, dtype=float)
        if block in POSITIVE_BLOCKS and not np.all(context.covariates @ proposal > 0):
            return -np.inf
        cur = params.beta[block]
        if np.array_equal(proposal, cur):
            return 0.0
        q_new = context.regime_quadratic(x, params, block, proposal)
        if not np.isfinite(q_new):
            return -np.inf
        q_old = context.regime_quadratic(x, params, block)
        ll = -0.5 * (q_new - q_old) / params.psi
        lp = -0.5 * np.sum(((proposal - pr.b0[block]) ** 2 - (cur - pr.b0[block]) ** 2)
                           / pr.sigma_b0[block])
        return float(ll + lp)

    def step(self, x, context, params: ModelParams, prior: PriorSpec, rng) -> np.ndarray:
        """One sweep over the six blocks, updating ``params.beta`` in place."""
        accepted = np.zeros(6, dtype=bool)
        c = self.n_covariates
        for j in range(6):
            z = rng.standard_normal(c)
            prop = params.beta[j] + np.exp(self.log_scale[j]) * (self.chol[j] @ z)
            lr = self.log_accept_ratio(j, prop, x, context, params, prior)
            if np.log(rng.random()) < lr:
                params.beta[j] = prop
                accepted[j] = True
        if self.adapting:
            self._adapt(params, accepted)
        return accepted

    def _adapt(self, params, accepted):
        self._count += 1
        self._recent += accepted
        for j in range(6):
            self._history[j].append(params.beta[j].copy())
        if self._count % self.adapt_every:
            return
        self._n_adapt += 1
        gamma = min(1.0, 3.0 / np.sqrt(self._n_adapt))
        rate = self._recent / self.adapt_every
        self.log_scale += gamma * (rate - self.target_rate)
        self._recent[:] = 0
        c = self.n_covariates
        for j in range(6):
            h = np.asarray(self._history[j])
            if len(h) < max(self.cov_after, 10 * c):
                continue
            cov = np.atleast_2d(np.cov(h[len(h) // 2:].T)) + 1e-10 * np.eye(c)
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                continue
            if not self._uses_cov[j]:
                self.log_scale[j] = np.log(2.38 / np.sqrt(c))
                self._uses_cov[j] = True
            self.chol[j] = chol

    def state_dict(self) -> dict:
        return {"log_scale": self.log_scale.tolist(), "chol": self.chol.tolist()}
