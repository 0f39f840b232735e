from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdem.grid import (LevelContext, build_level1, coarsen, fill_logdensity, lift_paths,
                        observation_grid, refine)

from conftest import ALWAYS_DAY, linear_params


def test_level1_even_split():
    np.testing.assert_allclose(build_level1([[0.0, 1.0]], 0.5).times, [0.0, 0.5, 1.0])


def test_level1_no_insertion_below_target():
    np.testing.assert_array_equal(build_level1([[0.0, 0.1]], 0.5).times, [0.0, 0.1])


def test_level1_longest_reported_interval():
    g = build_level1([[0.0, 0.48]], 0.07)
    assert g.n_points == 8
    np.testing.assert_allclose(np.diff(g.times), 0.48 / 7, atol=1e-12)
    assert g.observed.tolist() == [True] + [False] * 6 + [True]


def test_level1_rejects_duplicate_times():
    with pytest.raises(ValueError, match="duplicate"):
        build_level1([[0.0, 0.5, 0.5]], 0.1)


def test_level1_rejects_decreasing_times():
    with pytest.raises(ValueError):
        build_level1([[0.0, 0.5, 0.2]], 0.1)


def test_refine_inserts_midpoints():
    g = refine(build_level1([[0.0, 1.0]], 0.5))
    np.testing.assert_allclose(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.level == 2
    assert g.is_new.tolist() == [False, True, False, True, False]


def test_refine_twice_from_two_points():
    g = refine(refine(build_level1([[0.0, 1.0]], 2.0)))
    np.testing.assert_allclose(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_observation_grid_is_level_zero():
    g = observation_grid([[0.0, 0.3], [0.1, 0.2, 0.4]])
    assert g.level == 0 and g.observed.all() and g.n_subjects == 2


obs_lists = st.lists(
    st.lists(st.floats(0.005, 0.6), min_size=1, max_size=8).map(
        lambda gaps: np.concatenate([[0.0], np.cumsum(gaps)])),
    min_size=1, max_size=4)


@settings(max_examples=60, deadline=None)
@given(obs=obs_lists, target=st.floats(0.02, 0.5), depth=st.integers(1, 3))
def test_grid_invariants(obs, target, depth):
    grids = {1: build_level1(obs, target)}
    for k in range(2, depth + 1):
        grids[k] = refine(grids[k - 1])
    g1 = grids[1]
    for k, g in grids.items():
        for i, t in enumerate(obs):
            ts = g.subject_times(i)
            assert np.all(np.diff(ts) > 0)
            # observed values are never relocated
            np.testing.assert_array_equal(ts[g.subject_observed(i)], t)
            assert ts[-1] - ts[0] == pytest.approx(t[-1] - t[0], abs=1e-12)
            n1 = len(g1.subject_times(i)) - 1
            assert len(ts) - 1 == n1 * 2 ** (k - 1)
            # observed points sit at s * 2**(k - 1) relative to level-1 anchors
            anchors = np.flatnonzero(g1.subject_observed(i))
            np.testing.assert_array_equal(np.flatnonzero(g.subject_observed(i)),
                                          anchors * 2 ** (k - 1))
        if k > 1:
            parent = grids[k - 1]
            old = ~g.is_new
            np.testing.assert_array_equal(g.times[old], parent.times)
            np.testing.assert_array_equal(g.parent[old], np.arange(parent.n_points))
            # every point reaches a level-1 anchor through the parent chain
            for j in range(g.n_points):
                a = g.ancestors(j, grids)
                assert 0 <= a < g1.n_points
                assert g1.subject[a] == g.subject[j]


def test_double_refinement_hits_quartiles_exactly():
    g = refine(refine(build_level1([[0.0, 0.75, 1.25]], 10.0)))
    want = [Fraction(0), Fraction(3, 16), Fraction(3, 8), Fraction(9, 16), Fraction(3, 4),
            Fraction(7, 8), Fraction(1), Fraction(9, 8), Fraction(5, 4)]
    assert [Fraction(t) for t in g.times] == want


def _ctx(grid, p=2):
    n_obs = int(grid.observed.sum())
    return LevelContext(grid, np.zeros((n_obs, p)), np.ones((grid.n_subjects, 1)),
                        [ALWAYS_DAY] * grid.n_subjects)


def _zero_drift(psi=0.9):
    params = linear_params(psi=psi)
    params.beta[[0, 3], 0] = 0.0
    return params


def test_lift_zero_drift_moments(rng):
    g = refine(build_level1([[0.0, 0.4]], 1.0))
    ctx = _ctx(g)
    params = _zero_drift()
    draws = np.array([lift_paths(np.array([0.2, 1.0]), ctx, params, rng)[0][1]
                      for _ in range(40000)])
    # bridge midpoint: mean of the endpoints, variance psi * dt / 4
    assert draws.mean() == pytest.approx(0.6, abs=4 * np.sqrt(0.09 / 40000))
    assert draws.var() == pytest.approx(params.psi * 0.4 / 4, rel=0.03)


def test_lift_carries_parent_values_and_reports_density(rng):
    g1 = build_level1([[0.0, 0.3, 0.5], [0.0, 0.2]], 0.1)
    g2 = refine(g1)
    params = linear_params()
    xc = rng.normal(size=g1.n_points)
    x, lq = lift_paths(xc, _ctx(g2), params, rng)
    np.testing.assert_array_equal(coarsen(x, g2), xc)
    assert lq == pytest.approx(fill_logdensity(x, _ctx(g2), params), rel=1e-12)
