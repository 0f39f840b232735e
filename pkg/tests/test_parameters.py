import numpy as np
import pytest
from scipy import integrate

from lsdem.grid import LevelContext, build_level1
from lsdem.model import DayNightWindow, ModelParams, measurement_loglik_rows
from lsdem.parameters import (BetaSampler, PriorSpec, lambda_sigma_conditional,
                              mu_conditional, psi_conditional, rng_stream, update_lambda_sigma,
                              update_mu, update_psi)

# tiny panel: one subject, three observation times, two channels
Y = np.array([[0.9, 0.2], [1.6, 0.9], [0.4, -0.3]])
X_OBS = np.array([0.7, 1.3, 0.1])
PARAMS = ModelParams(np.array([[1.2], [0.5], [1.3], [0.9], [-0.2], [1.1]]), 0.8,
                     [0.15, -0.25], [1.0, 0.8], [0.2, 0.3])
PRIOR = PriorSpec(mu0=[0.1, 0.0], sigma2_mu0=[2.0, 0.5], lambda0=[0.0, 0.5],
                  sigma_lambda=[1.0, 2.0], a1=3.0, a2=1.0, a_psi1=2.0, a_psi2=1.0)


def _moments(logpdf, lo, hi, positive=False):
    """Mean and variance of a 1-D unnormalized log-density by quadrature.

    With ``positive`` the integral runs over ``u = log v`` on ``(lo, hi)``
    so heavy right tails are covered.
    """
    if positive:
        to_v = np.exp
        jac = lambda u: u  # noqa: E731  (log of dv/du = e^u)
    else:
        to_v = lambda u: u  # noqa: E731
        jac = lambda u: 0.0  # noqa: E731
    ref = max(logpdf(to_v(u)) + jac(u) for u in np.linspace(lo, hi, 4001))
    dens = lambda u: np.exp(logpdf(to_v(u)) + jac(u) - ref)  # noqa: E731
    kw = dict(epsabs=0, epsrel=1e-11, limit=400)
    z = integrate.quad(dens, lo, hi, **kw)[0]
    m = integrate.quad(lambda u: to_v(u) * dens(u), lo, hi, **kw)[0] / z
    v = integrate.quad(lambda u: (to_v(u) - m) ** 2 * dens(u), lo, hi, **kw)[0] / z
    return m, v


def _loglik(params):
    return float(np.sum(measurement_loglik_rows(Y, X_OBS, params)))


def _rel(got, want):
    return abs(got / want - 1.0)


def mu_errors():
    """Relative errors of the mu conditional mean and variance per channel."""
    mean, var = mu_conditional(Y, X_OBS, PARAMS, PRIOR)
    out = []
    for r in range(2):
        def logpdf(v):
            p = PARAMS.copy()
            p.mu[r] = v
            return _loglik(p) - 0.5 * (v - PRIOR.mu0[r]) ** 2 / PRIOR.sigma2_mu0[r]
        m, v = _moments(logpdf, -6, 6)
        out += [_rel(mean[r], m), _rel(var[r], v)]
    return out


def _ig_from_moments(m, v):
    a = m * m / v + 2.0
    return a, m * (a - 1.0)


def _ig_log(v, a, b):
    return -(a + 1) * np.log(v) - b / v


def sigma2_first_channel_errors():
    """Relative errors of the inverse-gamma parameters of channel 1's variance."""
    cond = lambda_sigma_conditional(Y, X_OBS, PARAMS, PRIOR)
    assert cond.mean[0] == 1.0 and cond.var[0] == 0.0

    def logpdf(s):
        p = PARAMS.copy()
        p.sigma2[0] = s
        return _loglik(p) + _ig_log(s, PRIOR.a1, PRIOR.a2)
    m, v = _moments(logpdf, -12.0, 12.0, positive=True)
    a, b = _ig_from_moments(m, v)
    return [_rel(cond.shape[0], a), _rel(cond.scale[0], b)]


def loading_second_channel_errors():
    """Relative errors of the joint (loading, variance) block of channel 2.

    The oracle integrates the unnormalized joint density of ``(lam, log s)``
    on a dense tensor grid with Simpson's rule, writing the channel's
    Gaussian likelihood out by hand.
    """
    cond = lambda_sigma_conditional(Y, X_OBS, PARAMS, PRIOR)
    r = 1
    lam = np.linspace(-15.0, 15.0, 3001)[:, None]
    u = np.linspace(-14.0, 8.0, 3001)[None, :]
    s = np.exp(u)
    resid2 = sum((Y[t, r] - PARAMS.mu[r] - lam * X_OBS[t]) ** 2 for t in range(len(Y)))
    v = s * PRIOR.sigma_lambda[r]
    logd = (-0.5 * len(Y) * np.log(s) - 0.5 * resid2 / s
            - 0.5 * np.log(v) - 0.5 * (lam - PRIOR.lambda0[r]) ** 2 / v
            + _ig_log(s, PRIOR.a1, PRIOR.a2) + u)   # + u: Jacobian of s = e^u
    dens = np.exp(logd - logd.max())

    def integral(f):
        return integrate.simpson(integrate.simpson(f * dens, x=u[0], axis=1), x=lam[:, 0])
    z = integral(1.0)
    e_lam = integral(lam) / z
    e_s = integral(s) / z
    e_s2 = integral(s * s) / z
    a, b = _ig_from_moments(e_s, e_s2 - e_s ** 2)
    return [_rel(cond.mean[r], e_lam), _rel(cond.shape[r], a), _rel(cond.scale[r], b)]


def _psi_context():
    grid = build_level1([[0.0, 0.15, 0.4]], 0.1)
    ctx = LevelContext(grid, Y, [[1.0]], [DayNightWindow([(0.0, 0.2)])])
    return ctx


def psi_errors():
    """Relative errors of the inverse-gamma parameters of the psi conditional."""
    ctx = _psi_context()
    x = np.array([0.2, 0.5, 0.4, 0.6, 0.1, 0.0])[:ctx.grid.n_points]
    assert len(x) == ctx.grid.n_points
    shape, scale = psi_conditional(x, ctx, PARAMS, PRIOR)

    def logpdf(v):
        p = PARAMS.copy()
        p.psi = v
        return float(np.sum(ctx.step_logdensities(x, p))) + _ig_log(v, 2.0, 1.0)
    m, v = _moments(logpdf, -12.0, 12.0, positive=True)
    a, b = _ig_from_moments(m, v)
    return [_rel(shape, a), _rel(scale, b)]


def test_mu_conditional_matches_quadrature():
    assert max(mu_errors()) < 1e-3


def test_sigma2_first_channel_matches_quadrature():
    assert max(sigma2_first_channel_errors()) < 1e-3


def test_loading_and_variance_second_channel_match_quadrature():
    assert max(loading_second_channel_errors()) < 1e-3


def test_psi_conditional_matches_quadrature():
    assert max(psi_errors()) < 1e-3


def test_samplers_draw_from_their_conditionals():
    rng = np.random.default_rng(5)
    n = 40000
    mu = np.array([update_mu(Y, X_OBS, PARAMS, PRIOR, rng) for _ in range(n)])
    mean, var = mu_conditional(Y, X_OBS, PARAMS, PRIOR)
    assert np.all(np.abs(mu.mean(axis=0) - mean) < 4 * np.sqrt(var / n))
    np.testing.assert_allclose(mu.var(axis=0), var, rtol=0.03)

    draws = [update_lambda_sigma(Y, X_OBS, PARAMS, PRIOR, rng) for _ in range(n)]
    lam = np.array([d[0] for d in draws])
    s2 = np.array([d[1] for d in draws])
    cond = lambda_sigma_conditional(Y, X_OBS, PARAMS, PRIOR)
    assert np.all(lam[:, 0] == 1.0)
    np.testing.assert_allclose(s2.mean(axis=0), cond.scale / (cond.shape - 1), rtol=0.03)
    assert abs(lam[:, 1].mean() - cond.mean[1]) < 0.03 * abs(cond.mean[1]) + 0.01

    ctx = _psi_context()
    x = np.linspace(0.2, -0.1, ctx.grid.n_points)
    shape, scale = psi_conditional(x, ctx, PARAMS, PRIOR)
    psi = np.array([update_psi(x, ctx, PARAMS, PRIOR, rng) for _ in range(n)])
    assert psi.mean() == pytest.approx(scale / (shape - 1), rel=0.03)


def test_beta_log_ratio_equals_posterior_difference():
    ctx = _psi_context()
    x = np.linspace(0.2, -0.1, ctx.grid.n_points)
    prior = PriorSpec(b0=0.3, sigma_b0=2.0)
    sampler = BetaSampler(1)
    for block, value in [(0, 1.5), (1, 0.1), (2, 0.7), (4, -0.6), (5, 2.0)]:
        prop = PARAMS.copy()
        prop.beta[block, 0] = value
        want = ctx.log_posterior(x, prop, prior) - ctx.log_posterior(x, PARAMS, prior)
        got = sampler.log_accept_ratio(block, prop.beta[block], x, ctx, PARAMS, prior)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_beta_truncation_rejects_nonpositive_rates():
    ctx = _psi_context()
    x = np.zeros(ctx.grid.n_points)
    sampler = BetaSampler(1)
    for block in (0, 2, 3, 5):
        assert sampler.log_accept_ratio(block, np.array([-0.1]), x, ctx, PARAMS,
                                        PriorSpec()) == -np.inf
    assert np.isfinite(sampler.log_accept_ratio(1, np.array([-0.1]), x, ctx, PARAMS,
                                                PriorSpec()))


def test_beta_identical_proposal_has_zero_ratio():
    ctx = _psi_context()
    x = np.zeros(ctx.grid.n_points)
    assert BetaSampler(1).log_accept_ratio(0, PARAMS.beta[0].copy(), x, ctx, PARAMS,
                                           PriorSpec()) == 0.0


def test_beta_adaptation_reaches_target_rate():
    ctx = _psi_context()
    rng = np.random.default_rng(3)
    x = np.linspace(0.2, -0.1, ctx.grid.n_points)
    params = PARAMS.copy()
    prior = PriorSpec(b0=[[1.0], [0.5], [1.0], [1.0], [0.0], [1.0]], sigma_b0=0.25)
    sampler = BetaSampler(1, init_scale=5.0)
    for _ in range(3000):
        sampler.step(x, ctx, params, prior, rng)
    sampler.freeze()
    acc = np.mean([sampler.step(x, ctx, params, prior, rng) for _ in range(3000)], axis=0)
    assert np.all((acc > 0.15) & (acc < 0.5))


def test_prior_resolve_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        PriorSpec(sigma2_mu0=0.0).resolve(2, 1)
    with pytest.raises(ValueError):
        PriorSpec.from_dict({"nonsense": 1})


def test_prior_round_trip():
    pr = PriorSpec(a1=[2.0, 3.0]).resolve(2, 3)
    back = PriorSpec.from_dict(pr.to_dict()).resolve(2, 3)
    np.testing.assert_array_equal(back.a1, pr.a1)
    np.testing.assert_array_equal(back.b0, pr.b0)


def test_rng_streams_are_independent_and_reproducible():
    a = rng_stream(7, 1, 0).standard_normal(5)
    b = rng_stream(7, 1, 0).standard_normal(5)
    c = rng_stream(7, 1, 1).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
