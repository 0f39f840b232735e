import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lsdem.estimator import LatentSDE
from lsdem.multires import MrSchedule, run_mr

from conftest import SHORT


def test_params_round_trip():
    est = LatentSDE(n_resolutions=2, target_dt=0.05, random_state=3)
    params = est.get_params()
    assert params["n_resolutions"] == 2 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(alpha=0.5)
    assert est.alpha == 0.5


def test_unfitted_access_raises():
    est = LatentSDE()
    for call in (est.summary, est.ess, est.ppc, lambda: est.predict("S001")):
        with pytest.raises(NotFittedError):
            call()


def test_fit_rejects_arrays():
    with pytest.raises(TypeError, match="PanelDataset"):
        LatentSDE().fit(np.zeros((3, 2)))


@pytest.fixture(scope="module")
def fitted(small_panel):
    ds, _ = small_panel
    return LatentSDE(random_state=5, **SHORT).fit(ds)


def test_fit_matches_library_run(fitted, small_panel):
    ds, _ = small_panel
    ref = run_mr(ds, schedule=MrSchedule(**SHORT), seed=5)
    np.testing.assert_array_equal(fitted.chains_.finest.params, ref.finest.params)
    assert fitted.n_features_in_ == 3


def test_summary_and_ess(fitted):
    t = fitted.summary()
    assert len(t.names) == 18
    ess = fitted.ess(level=1)
    assert set(ess) == set(fitted.chains_.param_names)
    assert all(1 <= v <= SHORT["n_keep"] for v in ess.values())


def test_predict_on_raw_scale(fitted, small_panel):
    ds, _ = small_panel
    times, lo, med, hi = fitted.predict(ds.subject_ids[0], random_state=1)
    np.testing.assert_array_equal(times, ds.times[0])
    assert lo.shape == ds.y[0].shape
    assert np.all(lo <= med) and np.all(med <= hi)
    # raw-scale bands sit around the raw measurements, not around zero
    assert abs(np.median(med - ds.y[0])) < 3 * ds.scale.max()
    with pytest.raises(KeyError):
        fitted.predict("nobody")


def test_ppc_runs(fitted):
    res = fitted.ppc(random_state=0)
    assert 0.0 <= res.p_value <= 1.0
    assert len(res.d_rep) == len(fitted.chains_.finest.paths)
