"""Panel datasets: CSV ingestion, validation, persistence and simulation.

File layout (all times in rescaled units, 1 unit = 12 hours)::

    observations.csv   subject_id,time,<channel_1>,...,<channel_p>
    covariates.csv     subject_id,<w_1>,...,<w_c>        (w_1 must equal 1)
    windows.csv        subject_id,day_start,day_end      (one row per daytime span)
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import DayNightWindow, ModelParams, beta_star, satisfies_constraints
from .parameters import rng_stream


class DatasetError(ValueError):
    """Input data violate the file schema or the dataset invariants."""


class SimulationError(RuntimeError):
    """Forward simulation produced non-finite states."""


@dataclass
class PanelDataset:
    """Irregularly sampled multichannel series of several subjects.

    ``y`` holds raw measurements; the per-channel standardization constants
    are computed once over all subjects and times and applied on request by
    :meth:`stacked_y`.
    """

    subject_ids: list
    times: list
    y: list
    covariates: np.ndarray
    windows: list
    channel_names: list = None
    covariate_names: list = None
    center: np.ndarray = field(init=False)
    scale: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.subject_ids)
        self.subject_ids = [str(s) for s in self.subject_ids]
        if len(set(self.subject_ids)) != n:
            raise DatasetError("duplicate subject ids")
        self.times = [np.asarray(t, dtype=float) for t in self.times]
        self.y = [np.atleast_2d(np.asarray(v, dtype=float)) for v in self.y]
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        self.windows = [w if isinstance(w, DayNightWindow) else DayNightWindow(w)
                        for w in self.windows]
        if not (len(self.times) == len(self.y) == len(self.windows)
                == self.covariates.shape[0] == n):
            raise DatasetError("times, y, covariates and windows need one entry per subject")
        if n == 0:
            raise DatasetError("dataset has no subjects")
        p = self.y[0].shape[1]
        for sid, t, v in zip(self.subject_ids, self.times, self.y):
            if v.shape != (len(t), p):
                raise DatasetError(f"subject {sid}: y has shape {v.shape}, "
                                   f"expected ({len(t)}, {p})")
            if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
                raise DatasetError(f"subject {sid}: non-finite time or measurement")
            d = np.diff(t)
            if np.any(d <= 0):
                raise DatasetError(f"subject {sid}: observation times must be strictly "
                                   "increasing")
        if not np.all(np.isfinite(self.covariates)):
            raise DatasetError("non-finite covariate")
        if not np.all(self.covariates[:, 0] == 1.0):
            raise DatasetError("the first covariate must be the constant 1")
        for sid, t, w in zip(self.subject_ids, self.times, self.windows):
            for a, b in w.intervals:
                if b <= t[0] or a > t[-1]:
                    raise DatasetError(f"subject {sid}: day window [{a}, {b}) lies outside "
                                       f"the observed range [{t[0]}, {t[-1]}]")
        if self.channel_names is None:
            self.channel_names = [f"y{r + 1}" for r in range(p)]
        if self.covariate_names is None:
            self.covariate_names = [f"w{k + 1}" for k in range(self.covariates.shape[1])]
        stacked = np.vstack(self.y)
        self.center = stacked.mean(axis=0)
        sd = stacked.std(axis=0, ddof=1) if len(stacked) > 1 else np.zeros(p)
        self.scale = np.where(sd > 0, sd, 1.0)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_channels(self) -> int:
        return self.y[0].shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_observations(self) -> int:
        return sum(len(t) for t in self.times)

    def subject_index(self, subject_id) -> int:
        try:
            return self.subject_ids.index(str(subject_id))
        except ValueError:
            raise KeyError(f"unknown subject {subject_id!r}") from None

    def stacked_y(self, standardize: bool = True) -> np.ndarray:
        """All observation rows, subject-major, in the modelling scale."""
        y = np.vstack(self.y)
        return self.standardize(y) if standardize else y

    def standardize(self, y):
        return (np.asarray(y) - self.center) / self.scale

    def destandardize(self, y):
        return np.asarray(y) * self.scale + self.center


# -- CSV ----------------------------------------------------------------------

def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DatasetError(f"{path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: empty file")
    return [c.strip() for c in rows[0]], rows[1:]


def _float(value, where):
    try:
        v = float(value)
    except ValueError:
        raise DatasetError(f"{where}: not a number: {value!r}") from None
    if not math.isfinite(v):
        raise DatasetError(f"{where}: non-finite value {value!r}")
    return v


def load_dataset(observations, covariates, windows) -> PanelDataset:
    """Read and validate the three CSV files.

    Errors name the file and the 1-based line number of the offending row.
    """
    name = os.path.basename(str(observations))
    header, rows = _read_rows(observations)
    if len(header) < 3 or header[0] != "subject_id" or header[1] != "time":
        raise DatasetError(f"{name} line 1: header must be subject_id,time,<channels...>")
    p = len(header) - 2
    order, t_by, y_by = [], {}, {}
    for lineno, row in enumerate(rows, start=2):
        where = f"{name} line {lineno}"
        if len(row) != p + 2:
            raise DatasetError(f"{where}: expected {p + 2} columns, got {len(row)}")
        sid = row[0].strip()
        t = _float(row[1], f"{where} column time")
        vals = [_float(v, f"{where} column {header[k + 2]}") for k, v in enumerate(row[2:])]
        if sid not in t_by:
            order.append(sid)
            t_by[sid], y_by[sid] = [], []
        elif t == t_by[sid][-1][0]:
            raise DatasetError(f"{where}: duplicate time {t} for subject {sid}")
        elif t < t_by[sid][-1][0]:
            raise DatasetError(f"{where}: time {t} is not increasing for subject {sid}")
        t_by[sid].append((t, lineno))
        y_by[sid].append(vals)

    cname = os.path.basename(str(covariates))
    cheader, crows = _read_rows(covariates)
    if len(cheader) < 2 or cheader[0] != "subject_id":
        raise DatasetError(f"{cname} line 1: header must be subject_id,<covariates...>")
    cov = {}
    for lineno, row in enumerate(crows, start=2):
        where = f"{cname} line {lineno}"
        if len(row) != len(cheader):
            raise DatasetError(f"{where}: expected {len(cheader)} columns, got {len(row)}")
        sid = row[0].strip()
        if sid not in t_by:
            raise DatasetError(f"{where}: unknown subject {sid!r}")
        if sid in cov:
            raise DatasetError(f"{where}: duplicate covariate row for subject {sid}")
        w = [_float(v, f"{where} column {cheader[k + 1]}") for k, v in enumerate(row[1:])]
        if w[0] != 1.0:
            raise DatasetError(f"{where}: first covariate must be 1, got {w[0]}")
        cov[sid] = w
    missing = [s for s in order if s not in cov]
    if missing:
        raise DatasetError(f"{cname}: no covariate row for subject {missing[0]!r}")

    wname = os.path.basename(str(windows))
    wheader, wrows = _read_rows(windows)
    if wheader != ["subject_id", "day_start", "day_end"]:
        raise DatasetError(f"{wname} line 1: header must be subject_id,day_start,day_end")
    spans = {s: [] for s in order}
    for lineno, row in enumerate(wrows, start=2):
        where = f"{wname} line {lineno}"
        if len(row) != 3:
            raise DatasetError(f"{where}: expected 3 columns, got {len(row)}")
        sid = row[0].strip()
        if sid not in t_by:
            raise DatasetError(f"{where}: unknown subject {sid!r}")
        a = _float(row[1], f"{where} column day_start")
        b = _float(row[2], f"{where} column day_end")
        if not b > a:
            raise DatasetError(f"{where}: day_end must exceed day_start")
        for a0, b0, line0 in spans[sid]:
            if a < b0 and a0 < b:
                raise DatasetError(f"{where}: window overlaps line {line0} for subject {sid}")
        times = [t for t, _ in t_by[sid]]
        if b <= times[0] or a > times[-1]:
            raise DatasetError(f"{where}: window [{a}, {b}) outside the observed range "
                               f"of subject {sid}")
        spans[sid].append((a, b, lineno))
    missing = [s for s in order if not spans[s]]
    if missing:
        raise DatasetError(f"{wname}: no window rows for subject {missing[0]!r}")

    return PanelDataset(
        subject_ids=order,
        times=[[t for t, _ in t_by[s]] for s in order],
        y=[y_by[s] for s in order],
        covariates=[cov[s] for s in order],
        windows=[DayNightWindow([(a, b) for a, b, _ in spans[s]]) for s in order],
        channel_names=header[2:],
        covariate_names=cheader[1:],
    )


def save_dataset(dataset: PanelDataset, directory) -> dict:
    """Write the three CSV files; floats are written with ``repr`` precision."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, f"{k}.csv")
             for k in ("observations", "covariates", "windows")}
    with open(paths["observations"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "time", *dataset.channel_names])
        for sid, t, y in zip(dataset.subject_ids, dataset.times, dataset.y):
            for tj, yj in zip(t, y):
                w.writerow([sid, repr(float(tj)), *(repr(float(v)) for v in yj)])
    with open(paths["covariates"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", *dataset.covariate_names])
        for sid, wi in zip(dataset.subject_ids, dataset.covariates):
            w.writerow([sid, *(repr(float(v)) for v in wi)])
    with open(paths["windows"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "day_start", "day_end"])
        for sid, win in zip(dataset.subject_ids, dataset.windows):
            for a, b in win.intervals:
                w.writerow([sid, repr(float(a)), repr(float(b))])
    return paths


# -- simulation -----------------------------------------------------------------

@dataclass
class SimulationDesign:
    """Observation schedule, regimes and covariates of a simulated panel."""

    subject_ids: list
    obs_times: list
    windows: list
    covariates: np.ndarray


@dataclass
class GroundTruth:
    """Parameters used to simulate, plus the fine-grid latent paths."""

    params: ModelParams
    x0: np.ndarray = None
    fine_times: list = None
    fine_paths: list = None

    def latent_at(self, i: int, times) -> np.ndarray:
        """True latent values of subject ``i`` at (a subset of) fine-grid times."""
        ft = self.fine_times[i]
        idx = np.searchsorted(ft, times)
        if not np.allclose(ft[np.minimum(idx, len(ft) - 1)], times, rtol=0, atol=1e-12):
            raise ValueError("requested times are not on the simulation grid")
        return self.fine_paths[i][idx]

    def to_dict(self) -> dict:
        p = self.params
        return {"beta": p.beta.tolist(), "psi": p.psi, "mu": p.mu.tolist(),
                "lam": p.lam.tolist(), "sigma2": p.sigma2.tolist(),
                "x0": None if self.x0 is None else np.asarray(self.x0).tolist()}


def make_design(n_subjects: int, seed: int, n_covariates: int = 3,
                day_gap=(0.02, 0.06), night_gap=(0.10, 0.30),
                day_end=1.1, night_end=1.8, span=2.0) -> SimulationDesign:
    """Ambulatory-style schedule: dense daytime readings, sparse night readings.

    Time 0 is the start of the day window; the night runs over
    ``[day_end, night_end)`` and the day resumes until ``span``.  Covariates
    are an intercept, then alternating uniform(-1, 1) and binary columns.
    """
    rng = rng_stream(seed, 0)
    ids, times, windows = [], [], []
    w = np.ones((n_subjects, n_covariates))
    for i in range(n_subjects):
        t, out = 0.0, [0.0]
        while True:
            in_night = day_end <= t < night_end
            lo, hi = night_gap if in_night else day_gap
            t = t + rng.uniform(lo, hi)
            if t > span:
                break
            out.append(round(t, 6))
        ids.append(f"S{i + 1:03d}")
        times.append(np.array(out))
        spans = [(0.0, day_end)]
        if out[-1] >= night_end:
            spans.append((night_end, span + 1.0))
        windows.append(DayNightWindow(spans))
        for k in range(1, n_covariates):
            w[i, k] = rng.uniform(-1, 1) if k % 2 == 1 else float(rng.random() < 0.5)
    return SimulationDesign(ids, times, windows, w)


def _simulate_subject(times, window, coeffs, x0, params, sim_dt, rng):
    fine_t = [times[0]]
    for a, b in zip(times[:-1], times[1:]):
        m = max(1, int(math.ceil((b - a) / sim_dt - 1e-9)))
        fine_t.extend(a + (b - a) * np.arange(1, m + 1) / m)
    fine_t = np.asarray(fine_t)
    fine_t[-1] = times[-1]
    day = window.contains(fine_t)
    b1, b2, b3, b4, b5, b6 = (float(v) for v in coeffs)
    sq = math.sqrt(params.psi)
    dts = np.diff(fine_t).tolist()
    noise = rng.standard_normal(len(dts)).tolist()
    x = np.empty(len(fine_t))
    x[0] = cur = float(x0)
    for k, dt in enumerate(dts):
        if day[k]:
            base, rate, ex = b2 - cur, b1, b3
        else:
            base, rate, ex = b5 - cur, b4, b6
        try:
            f = rate * math.copysign(abs(base) ** ex, base)
        except OverflowError:
            f = math.inf
        cur = cur + f * dt + sq * math.sqrt(dt) * noise[k]
        if not math.isfinite(cur):
            raise SimulationError(f"non-finite state at t={fine_t[k + 1]:.6g} with drift "
                                  f"coefficients {list(map(float, coeffs))}")
        x[k + 1] = cur
    obs_idx = np.searchsorted(fine_t, times)
    return fine_t, x, obs_idx


def simulate_dataset(truth: GroundTruth, design: SimulationDesign, sim_dt: float = 1e-3,
                     seed: int = 0, n_jobs: int = 1):
    """Euler-Maruyama simulation on a fine grid, sampled at the design times.

    Each subject uses its own random stream, so the result does not depend on
    ``n_jobs``.  ``truth.x0`` defaults to the daytime equilibrium.  Returns
    ``(dataset, truth)`` where the returned truth carries the fine paths.
    """
    params = truth.params
    if params.psi < 0:
        raise ValueError("psi must be non-negative")
    min_gap = min(float(np.min(np.diff(t))) for t in design.obs_times if len(t) > 1)
    if not 0 < sim_dt <= min_gap / 10 + 1e-15:
        raise ValueError(f"sim_dt={sim_dt} must be at most one tenth of the smallest "
                         f"design interval ({min_gap})")
    w = np.atleast_2d(design.covariates)
    if not satisfies_constraints(w, params.beta):
        raise SimulationError("true drift coefficients violate positivity for some subject")
    bstar = beta_star(w, params.beta)
    n = len(design.subject_ids)
    x0 = bstar[:, 1] if truth.x0 is None else np.broadcast_to(truth.x0, (n,))

    def work(i):
        rng = rng_stream(seed, 1, i)
        fine_t, x, obs_idx = _simulate_subject(design.obs_times[i], design.windows[i],
                                               bstar[i], x0[i], params, sim_dt, rng)
        lat = x[obs_idx]
        eps = rng.standard_normal((len(lat), params.n_channels)) * np.sqrt(params.sigma2)
        return fine_t, x, params.mu + np.outer(lat, params.lam) + eps

    if n_jobs == 1:
        results = [work(i) for i in range(n)]
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
            results = list(pool.map(work, range(n)))
    dataset = PanelDataset(
        subject_ids=list(design.subject_ids),
        times=[np.asarray(t, dtype=float) for t in design.obs_times],
        y=[r[2] for r in results],
        covariates=w,
        windows=list(design.windows),
    )
    full = GroundTruth(params.copy(), np.array(x0, dtype=float),
                       [r[0] for r in results], [r[1] for r in results])
    return dataset, full


def save_truth(truth: GroundTruth, path):
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
