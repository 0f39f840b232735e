import numpy as np
import pytest

from lsdem.data import GroundTruth, make_design, simulate_dataset
from lsdem.model import DayNightWindow, ModelParams

# intercept column of the ambulatory study, plus two modest covariate slopes
BENCH_BETA = np.array([
    [2.568, 0.606, 0.458],
    [0.377, 0.025, 0.206],
    [1.621, -0.203, -0.238],
    [2.737, 0.326, 0.269],
    [-1.206, 0.168, 0.298],
    [1.135, 0.702, 0.060],
])
BENCH_PSI = 2.992


def bench_params():
    return ModelParams(BENCH_BETA.copy(), BENCH_PSI, [0.0, 0.0, 0.0], [1.0, 0.9, 0.6],
                       [0.1, 0.1, 0.2])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_panel():
    """Five subjects on the ambulatory schedule, simulated from the benchmark truth."""
    design = make_design(5, seed=11)
    ds, truth = simulate_dataset(GroundTruth(bench_params()), design, 1e-3, seed=12)
    return ds, truth


def linear_params(rate=1.5, level=0.3, psi=0.8, c=1, p=2):
    beta = np.zeros((6, c))
    beta[:, 0] = [rate, level, 1.0, rate, level, 1.0]
    return ModelParams(beta, psi, np.zeros(p), np.r_[1.0, np.full(p - 1, 0.7)],
                       np.full(p, 0.2))


ALWAYS_DAY = DayNightWindow([(-1e9, 1e9)])


SHORT = dict(n_resolutions=2, burn_in=30, n_keep=60, p_global=0.3, path_thin=5,
             target_dt=0.1)


@pytest.fixture(scope="session")
def short_store(small_panel):
    """A brief two-level run on the small panel, shared by the storage tests."""
    from lsdem.multires import MrSchedule, run_mr
    ds, _ = small_panel
    return run_mr(ds, schedule=MrSchedule(**SHORT), seed=5)
