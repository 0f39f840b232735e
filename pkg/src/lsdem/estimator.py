"""scikit-learn style front end to the multiresolution sampler."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_random_state

from .chains import ChainStore
from .data import PanelDataset
from .diagnostics import acf_ess, ppc_pvalue, predict_bands, summarize
from .multires import MrSchedule, build_contexts, run_mr
from .parameters import PriorSpec


def check_panel(X) -> PanelDataset:
    """Validate that ``X`` is a :class:`PanelDataset`."""
    if not isinstance(X, PanelDataset):
        raise TypeError(f"expected a PanelDataset, got {type(X).__name__}")
    return X


def check_is_fitted(est):
    if getattr(est, "chains_", None) is None:
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def _seed_of(random_state) -> int:
    # the sampler needs a reproducible integer seed, not a live generator
    if random_state is None:
        return 0
    if isinstance(random_state, (int, np.integer)):
        return int(random_state)
    return int(check_random_state(random_state).randint(2 ** 31))


class LatentSDE(BaseEstimator):
    """Bayesian dual-regime latent SDE factor model.

    Parameters
    ----------
    n_resolutions, burn_in, n_keep, p_global, path_thin, target_dt, alpha
        Sampler schedule, see :class:`lsdem.multires.MrSchedule`.
    standardize : bool
        Fit on per-channel standardized measurements.
    prior : PriorSpec or dict, optional
        Hyperparameters; vague defaults when omitted.
    random_state : int, optional
        Seed of the sampler.

    Attributes
    ----------
    chains_ : ChainStore
        Draws of every resolution.
    dataset_ : PanelDataset
        The fitted panel.
    """

    def __init__(self, n_resolutions=4, burn_in=2000, n_keep=4000, p_global=0.3,
                 path_thin=10, target_dt=0.07, alpha=0.0, standardize=True, prior=None,
                 random_state=None):
        self.n_resolutions = n_resolutions
        self.burn_in = burn_in
        self.n_keep = n_keep
        self.p_global = p_global
        self.path_thin = path_thin
        self.target_dt = target_dt
        self.alpha = alpha
        self.standardize = standardize
        self.prior = prior
        self.random_state = random_state

    def _schedule(self) -> MrSchedule:
        return MrSchedule(self.n_resolutions, self.burn_in, self.n_keep, self.p_global,
                          self.path_thin, self.target_dt, self.alpha)

    def _prior(self) -> PriorSpec:
        if self.prior is None:
            return PriorSpec()
        if isinstance(self.prior, dict):
            return PriorSpec.from_dict(self.prior)
        return self.prior

    def fit(self, X, y=None, progress=None):
        """Run the sampler on panel ``X``; ``y`` is ignored."""
        ds = check_panel(X)
        self.dataset_ = ds
        self.chains_: ChainStore = run_mr(ds, self._prior(), self._schedule(),
                                          seed=_seed_of(self.random_state),
                                          standardize=self.standardize, progress=progress)
        self.n_features_in_ = ds.n_channels
        return self

    # -- summaries -----------------------------------------------------------

    def summary(self, level: int = None):
        """Est/SE/Z table of the drift coefficients at ``level`` (finest default)."""
        check_is_fitted(self)
        ch = self.chains_.finest if level is None else self.chains_.level(level)
        return summarize(ch.params, self.chains_.n_covariates)

    def ess(self, level: int = None) -> dict:
        """Effective sample size of every stored parameter."""
        check_is_fitted(self)
        ch = self.chains_.finest if level is None else self.chains_.level(level)
        return {name: acf_ess(ch.params[:, j]).ess
                for j, name in enumerate(self.chains_.param_names)}

    def ppc(self, X=None, random_state=None, noise_scale: float = 1.0):
        """Chi-square posterior predictive check at the finest resolution."""
        check_is_fitted(self)
        ds = self.dataset_ if X is None else check_panel(X)
        ch = self.chains_.finest
        ctx = build_contexts(ds, 1, self.target_dt, self.standardize)[1]
        obs = ch.grid.obs_index
        if len(obs) != ctx.y.shape[0]:
            raise ValueError("dataset does not match the fitted panel")
        return ppc_pvalue(ctx.y, obs, ch.paths, ch.path_params, self.chains_.n_covariates,
                          np.random.default_rng(random_state), noise_scale)

    def predict(self, subject, level: float = 0.95, random_state=None):
        """Predictive median and central ``level`` band of a subject's channels.

        Returns ``(times, lower, median, upper)`` on the raw measurement scale.
        """
        check_is_fitted(self)
        i = self.dataset_.subject_index(subject)
        ch = self.chains_.finest
        g = ch.grid
        sl = slice(g.offsets[i], g.offsets[i + 1])
        idx = np.flatnonzero(g.observed[sl]) + g.offsets[i]
        rng = np.random.default_rng(random_state)
        st = self.chains_
        bands = predict_bands(ch.paths[:, idx], ch.path_params, st.n_covariates,
                              st.n_channels, rng, level,
                              st.center if st.standardize else None,
                              st.scale if st.standardize else None)
        return (g.times[idx], *bands)
