import filecmp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsdem.data import (DatasetError, GroundTruth, PanelDataset, SimulationDesign,
                        SimulationError, load_dataset, make_design, save_dataset,
                        simulate_dataset)
from lsdem.model import DayNightWindow, ModelParams

from conftest import bench_params


def _write(tmp_path, obs, cov="subject_id,w1\nA,1\n", win="subject_id,day_start,day_end\n"
           "A,0,1\n"):
    paths = []
    for name, text in (("observations", obs), ("covariates", cov), ("windows", win)):
        p = tmp_path / f"{name}.csv"
        p.write_text(text)
        paths.append(str(p))
    return paths


def test_minimal_file_loads(tmp_path):
    ds = load_dataset(*_write(tmp_path, "subject_id,time,y1\nA,0,1.5\nA,0.5,2.0\n"))
    assert ds.n_subjects == 1 and len(ds.times[0]) == 2 and ds.n_channels == 1


def test_duplicate_time_names_the_row(tmp_path):
    paths = _write(tmp_path, "subject_id,time,y1\nA,0,1\nA,0.5,2\nA,0.5,3\n")
    with pytest.raises(DatasetError, match="line 4"):
        load_dataset(*paths)


@pytest.mark.parametrize("obs,cov,win,match", [
    ("subject_id,time,y1\nA,0,1\nA,0.5,nan\n", None, None, "line 3.*non-finite"),
    ("subject_id,time,y1\nA,0,1\nA,-0.5,2\n", None, None, "not increasing"),
    ("subject_id,time,y1\nA,0,1\nA,0.5\n", None, None, "line 3.*columns"),
    ("time,subject_id,y1\nA,0,1\n", None, None, "header"),
    ("subject_id,time,y1\nA,0,1\nA,0.5,2\n", "subject_id,w1\nB,1\n", None, "unknown subject"),
    ("subject_id,time,y1\nA,0,1\nA,0.5,2\n", "subject_id,w1\nA,2\n", None, "must be 1"),
    ("subject_id,time,y1\nA,0,1\nA,0.5,2\n", None, "subject_id,day_start,day_end\n",
     "no window rows"),
    ("subject_id,time,y1\nA,0,1\nA,0.5,2\n", None,
     "subject_id,day_start,day_end\nA,0,0.4\nA,0.3,0.6\n", "line 3.*overlaps"),
    ("subject_id,time,y1\nA,0,1\nA,0.5,2\n", None,
     "subject_id,day_start,day_end\nA,2,3\n", "outside"),
])
def test_load_errors(tmp_path, obs, cov, win, match):
    kw = {}
    if cov is not None:
        kw["cov"] = cov
    if win is not None:
        kw["win"] = win
    with pytest.raises(DatasetError, match=match):
        load_dataset(*_write(tmp_path, obs, **kw))


def test_missing_file_is_a_dataset_error(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nope.csv", tmp_path / "nope.csv", tmp_path / "nope.csv")


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=30, deadline=None)
@given(data=st.data())
def test_save_load_round_trip(tmp_path_factory, data):
    n = data.draw(st.integers(1, 3))
    p = data.draw(st.integers(1, 3))
    c = data.draw(st.integers(1, 3))
    times, ys, wins = [], [], []
    for _ in range(n):
        gaps = data.draw(st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=5))
        t = np.concatenate([[0.0], np.cumsum(gaps)])
        times.append(t)
        ys.append(np.array(data.draw(st.lists(st.lists(finite, min_size=p, max_size=p),
                                              min_size=len(t), max_size=len(t)))))
        wins.append([(0.0, float(t[-1]) / 2 + 1e-3)])
    w = np.ones((n, c))
    w[:, 1:] = np.array(data.draw(st.lists(st.lists(finite, min_size=c - 1, max_size=c - 1),
                                           min_size=n, max_size=n))).reshape(n, c - 1)
    ds = PanelDataset([f"s{i}" for i in range(n)], times, ys, w, wins)
    d = tmp_path_factory.mktemp("rt")
    back = load_dataset(*save_dataset(ds, d).values())
    assert back.subject_ids == ds.subject_ids
    for a, b in zip(ds.times, back.times):
        np.testing.assert_array_equal(a, b)
    for a, b in zip(ds.y, back.y):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(ds.covariates, back.covariates)
    assert [x.intervals for x in ds.windows] == [x.intervals for x in back.windows]
    np.testing.assert_array_equal(ds.center, back.center)


def test_standardization_inverts(small_panel):
    ds, _ = small_panel
    y = ds.stacked_y(standardize=False)
    np.testing.assert_allclose(ds.destandardize(ds.standardize(y)), y, rtol=0, atol=1e-12)
    z = ds.stacked_y()
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=0, ddof=1), 1, atol=1e-12)


def _linear_design(rate=1.7, level=0.4):
    times = [np.round(np.arange(0, 1.01, 0.05), 10), np.round(np.arange(0, 0.81, 0.1), 10)]
    design = SimulationDesign(["a", "b"], times, [DayNightWindow([(-1.0, 5.0)])] * 2,
                              np.ones((2, 1)))
    beta = np.array([[rate], [level], [1.0], [rate], [level], [1.0]])
    truth = GroundTruth(ModelParams(beta, 0.0, [0.0], [1.0], [1e-30]), x0=[1.5, -0.5])
    return design, truth


def _ode_error(sim_dt):
    design, truth = _linear_design()
    _, full = simulate_dataset(truth, design, sim_dt, seed=0)
    err = 0.0
    for i, t in enumerate(design.obs_times):
        exact = 0.4 + (truth.x0[i] - 0.4) * np.exp(-1.7 * t)
        err = max(err, float(np.max(np.abs(full.latent_at(i, t) - exact))))
    return err


def test_noise_free_simulation_matches_ou_solution():
    assert _ode_error(1e-3) < 10 * 1e-3


def test_noise_free_simulation_converges_at_first_order():
    e1, e2 = _ode_error(2e-3), _ode_error(1e-3)
    assert np.log2(e1 / e2) > 0.95


def test_noiseless_channels_are_affine_images():
    design = make_design(3, seed=2)
    params = bench_params()
    params.sigma2 = np.zeros(3)
    ds, truth = simulate_dataset(GroundTruth(params), design, 1e-3, seed=4)
    for i in range(3):
        x = truth.latent_at(i, ds.times[i])
        np.testing.assert_allclose(ds.y[i], np.outer(x, params.lam), atol=1e-12)


def test_simulation_is_deterministic_and_parallel_safe(tmp_path):
    design = make_design(6, seed=3)
    a, _ = simulate_dataset(GroundTruth(bench_params()), design, 1e-3, seed=9)
    b, _ = simulate_dataset(GroundTruth(bench_params()), design, 1e-3, seed=9, n_jobs=3)
    pa = save_dataset(a, tmp_path / "a")
    pb = save_dataset(b, tmp_path / "b")
    for k in pa:
        assert filecmp.cmp(pa[k], pb[k], shallow=False)


def test_simulation_rejects_coarse_step():
    design, truth = _linear_design()
    with pytest.raises(ValueError, match="one tenth"):
        simulate_dataset(truth, design, 0.01, seed=0)


def test_simulation_overflow_is_reported():
    design, _ = _linear_design()
    beta = np.array([[50.0], [0.0], [3.0], [50.0], [0.0], [3.0]])
    truth = GroundTruth(ModelParams(beta, 1.0, [0.0], [1.0], [0.1]), x0=[40.0, 40.0])
    with pytest.raises(SimulationError, match="drift coefficients"):
        simulate_dataset(truth, design, 1e-3, seed=0)


def test_benchmark_design_shape():
    design = make_design(20, seed=1)
    counts = [len(t) for t in design.obs_times]
    assert 30 <= np.mean(counts) <= 50
    gaps = np.concatenate([np.diff(t) for t in design.obs_times])
    assert gaps.min() >= 0.01 and gaps.max() <= 0.48
