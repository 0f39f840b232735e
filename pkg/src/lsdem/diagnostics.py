"""Chain summaries, autocorrelation, predictive checks and predictive bands."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ModelParams


# -- significance screening ---------------------------------------------------

def benjamini_hochberg(pvalues, q: float) -> np.ndarray:
    """Boolean discovery mask of the BH step-up procedure at level ``q``."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    out = np.zeros(m, dtype=bool)
    if below.any():
        k = np.flatnonzero(below).max()
        out[order[: k + 1]] = True
    return out


@dataclass
class SummaryTable:
    """Posterior summary of the drift coefficients.

    ``bh05`` and ``bh10`` are only defined for slope coefficients (covariate
    columns 2..c); intercept rows carry ``False``.  ``degenerate`` marks rows
    whose chain has zero spread, where ``z`` is NaN.
    """

    names: list
    est: np.ndarray
    se: np.ndarray
    z: np.ndarray
    pvalue: np.ndarray
    bh05: np.ndarray
    bh10: np.ndarray
    degenerate: np.ndarray
    is_slope: np.ndarray

    def rows(self):
        for i, name in enumerate(self.names):
            yield {"name": name, "est": self.est[i], "se": self.se[i], "z": self.z[i],
                   "p": self.pvalue[i], "bh05": bool(self.bh05[i]),
                   "bh10": bool(self.bh10[i]), "degenerate": bool(self.degenerate[i])}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "est", "se", "z", "p", "bh05", "bh10", "degenerate"])
            for r in self.rows():
                w.writerow([r["name"], f"{r['est']:.6g}", f"{r['se']:.6g}", f"{r['z']:.6g}",
                            f"{r['p']:.6g}", int(r["bh05"]), int(r["bh10"]),
                            int(r["degenerate"])])

    def to_markdown(self, covariate_names=None) -> str:
        """Coefficient grid: one row per covariate, Est/SE/Z per drift block.

        Slopes passing BH at 0.05 get ``**``, at 0.10 only ``*``.
        """
        n_cov = len(self.names) // 6
        cov = covariate_names or ["Intercept"] + [f"w{k + 1}" for k in range(1, n_cov)]
        head = ["Covariate"] + [f"{s} b{j + 1}" for j in range(6) for s in ("Est", "SE", "Z")]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        for k in range(n_cov):
            cells = [str(cov[k])]
            for j in range(6):
                i = j * n_cov + k
                mark = "**" if self.bh05[i] else ("*" if self.bh10[i] else "")
                z = "NA" if self.degenerate[i] else f"{self.z[i]:.3f}{mark}"
                cells += [f"{self.est[i]:.3f}", f"{self.se[i]:.3f}", z]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def summarize(draws, n_covariates: int, names=None) -> SummaryTable:
    """Est/SE/Z of the ``6 * c`` drift coefficients from parameter draws.

    ``draws`` has one row per kept iteration; only its first ``6 * c``
    columns (the row-major drift coefficients) are used.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2:
        raise ValueError("summarize needs at least 2 kept draws")
    m = 6 * n_covariates
    b = draws[:, :m]
    degenerate = np.ptp(b, axis=0) == 0
    # constant columns are reported exactly, free of summation rounding
    est = np.where(degenerate, b[0], b.mean(axis=0))
    se = np.where(degenerate, 0.0, b.std(axis=0, ddof=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(degenerate, np.nan, est / np.where(degenerate, 1.0, se))
    pval = np.where(degenerate, np.nan, 2.0 * stats.norm.sf(np.abs(z)))
    is_slope = np.tile(np.arange(n_covariates) > 0, 6)
    screen = is_slope & ~degenerate
    bh05 = np.zeros(m, dtype=bool)
    bh10 = np.zeros(m, dtype=bool)
    bh05[screen] = benjamini_hochberg(pval[screen], 0.05)
    bh10[screen] = benjamini_hochberg(pval[screen], 0.10)
    if names is None:
        names = ModelParams.vector_names(n_covariates, 1)[:m]
    return SummaryTable(list(names)[:m], est, se, z, pval, bh05, bh10, degenerate, is_slope)


# -- autocorrelation ----------------------------------------------------------

@dataclass
class AcfResult:
    acf: np.ndarray
    ess: float
    degenerate: bool


def acf_ess(chain, max_lag: int = None) -> AcfResult:
    """Autocorrelations up to ``max_lag`` and the initial-positive-sequence ESS.

    The ESS sums autocorrelation pairs ``rho_{2m} + rho_{2m+1}`` while they
    stay positive and is capped at the chain length.  A constant chain gets
    ``ess = 1`` and ``degenerate = True``.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if max_lag is None:
        max_lag = min(n - 1, 1000)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    xc = x - x.mean()
    var = xc @ xc / n
    if not var > 0:
        acf = np.full(max_lag + 1, np.nan)
        acf[0] = 1.0
        return AcfResult(acf, 1.0, True)
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    rho = acov / acov[0]

    tau = -1.0
    for m in range(0, (n - 1) // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    ess = min(float(n), n / max(tau, 1e-12))
    return AcfResult(rho[: max_lag + 1], ess, False)


# -- posterior predictive checks ----------------------------------------------

@dataclass
class PpcResult:
    p_value: float
    d_rep: np.ndarray
    d_obs: np.ndarray


def chi2_discrepancy(y, x_obs, mu, lam, sigma2) -> float:
    """Sum over observations of the standardized squared measurement residuals."""
    r = y - mu - np.outer(x_obs, lam)
    return float(np.sum(r * r / sigma2))


def ppc_pvalue(y, obs_index, path_draws, param_rows, n_covariates: int, rng,
               noise_scale: float = 1.0) -> PpcResult:
    """Chi-square posterior predictive p-value over stored path draws.

    ``y`` is the (standardized, if the fit was) stacked measurement matrix,
    ``obs_index`` maps its rows into the path vectors and ``param_rows`` are
    the parameter vectors paired with ``path_draws``.  A replicate is drawn
    per draw; ``D_rep == D_obs`` counts as not greater.  ``noise_scale``
    multiplies the error variances of every draw before both the replicate
    and the discrepancies are formed.
    """
    y = np.asarray(y, dtype=float)
    p = y.shape[1]
    d_rep = np.empty(len(path_draws))
    d_obs = np.empty(len(path_draws))
    for s, (x, row) in enumerate(zip(path_draws, param_rows)):
        par = ModelParams.from_vector(row, n_covariates, p)
        s2 = par.sigma2 * noise_scale
        x_obs = np.asarray(x)[obs_index]
        mean = par.mu + np.outer(x_obs, par.lam)
        y_rep = mean + np.sqrt(s2) * rng.standard_normal(y.shape)
        d_obs[s] = chi2_discrepancy(y, x_obs, par.mu, par.lam, s2)
        d_rep[s] = chi2_discrepancy(y_rep, x_obs, par.mu, par.lam, s2)
    return PpcResult(float(np.mean(d_rep > d_obs)), d_rep, d_obs)


# -- predictive bands ---------------------------------------------------------

def predict_bands(subject_paths, param_rows, n_covariates: int, n_channels: int, rng,
                  level: float = 0.95, center=None, scale=None):
    """Pointwise median and central ``level`` interval of replicated measurements.

    ``subject_paths`` holds one subject's latent values at its observation
    times, one row per stored draw.  Returns ``(lower, median, upper)``,
    each of shape ``(T, p)``, on the raw measurement scale when ``center``
    and ``scale`` are given.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError(f"level must lie in [0, 1), got {level}")
    xs = np.atleast_2d(np.asarray(subject_paths, dtype=float))
    reps = np.empty((xs.shape[0], xs.shape[1], n_channels))
    for s, (x, row) in enumerate(zip(xs, param_rows)):
        par = ModelParams.from_vector(row, n_covariates, n_channels)
        mean = par.mu + np.outer(x, par.lam)
        reps[s] = mean + np.sqrt(par.sigma2) * rng.standard_normal(mean.shape)
    if center is not None:
        reps = reps * np.asarray(scale) + np.asarray(center)
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(reps, [tail, 0.5, 1.0 - tail], axis=0)
    return lo, med, hi


def write_bands_csv(path, times, bands, channel_names, level: float = 0.95):
    lo, med, hi = bands
    tail = (1.0 - level) / 2.0
    cols = [f"q{100 * tail:g}", "q50", f"q{100 * (1 - tail):g}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "channel", *cols])
        for i, t in enumerate(times):
            for r, name in enumerate(channel_names):
                w.writerow([repr(float(t)), name, repr(float(lo[i, r])),
                            repr(float(med[i, r])), repr(float(hi[i, r]))])
