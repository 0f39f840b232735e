"""Storage of MCMC draws per resolution and its on-disk format.

Directory layout written by :func:`save_chains`::

    manifest.json        schedule, seed, acceptance tallies, parameter names
    params_k<k>.csv      one row per kept draw: iteration, then every parameter
    paths_k<k>.bin       grid + thinned path draws (format below)

Path file, all little-endian::

    magic      8 bytes  b"LSDEMPTH"
    version    uint32   1
    level      uint32
    n_draws    uint32
    n_points   uint32
    n_subjects uint32
    n_params   uint32
    offsets    int64[n_subjects + 1]
    times      float64[n_points]
    observed   uint8[n_points]
    parent     int64[n_points]
    is_new     uint8[n_points]
    iteration  int64[n_draws]      kept-draw index each path belongs to
    logpost    float64[n_draws]    level-k posterior kernel at the draw
    params     float64[n_draws, n_params]
    paths      float64[n_draws, n_points]
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import ResolutionGrid
from .model import ModelParams

MAGIC = b"LSDEMPTH"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIII")


class ConfigurationError(ValueError):
    """The run configuration cannot be executed."""


@dataclass
class LevelChain:
    """Draws collected at one resolution."""

    level: int
    grid: ResolutionGrid
    params: np.ndarray                 # (n_keep, n_params)
    path_iteration: np.ndarray         # (n_paths,) index into params rows
    paths: np.ndarray                  # (n_paths, n_points)
    path_logpost: np.ndarray           # (n_paths,)
    acceptance: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.params.shape[0]

    @property
    def path_params(self) -> np.ndarray:
        return self.params[self.path_iteration]

    def acceptance_rates(self) -> dict:
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.acceptance.items()}


@dataclass
class ChainStore:
    """All resolutions of one multiresolution run."""

    param_names: list
    n_covariates: int
    n_channels: int
    levels: dict = field(default_factory=dict)
    seed: int = None
    schedule: dict = None
    prior: dict = None
    standardize: bool = False
    center: np.ndarray = None
    scale: np.ndarray = None
    subject_ids: list = None

    @property
    def finest(self) -> LevelChain:
        return self.levels[max(self.levels)]

    def level(self, k: int) -> LevelChain:
        return self.levels[k]

    def unpack(self, row) -> ModelParams:
        return ModelParams.from_vector(row, self.n_covariates, self.n_channels)

    def acceptance_rates(self) -> dict:
        return {k: ch.acceptance_rates() for k, ch in sorted(self.levels.items())}

    def manifest(self) -> dict:
        """Deterministic description of the run (no wall-clock data)."""
        return {
            "format": "lsdem-chains",
            "version": VERSION,
            "seed": self.seed,
            "schedule": self.schedule,
            "prior": self.prior,
            "standardize": self.standardize,
            "center": None if self.center is None else np.asarray(self.center).tolist(),
            "scale": None if self.scale is None else np.asarray(self.scale).tolist(),
            "subject_ids": self.subject_ids,
            "param_names": self.param_names,
            "n_covariates": self.n_covariates,
            "n_channels": self.n_channels,
            "levels": {
                str(k): {
                    "n_points": int(ch.grid.n_points),
                    "n_draws": int(ch.n_draws),
                    "n_path_draws": int(len(ch.path_iteration)),
                    "acceptance": {s: [int(a), int(n)] for s, (a, n) in ch.acceptance.items()},
                    "acceptance_rates": ch.acceptance_rates(),
                }
                for k, ch in sorted(self.levels.items())
            },
        }


def _write_paths(path, ch: LevelChain):
    g = ch.grid
    n_draws, n_points = ch.paths.shape if ch.paths.size else (0, g.n_points)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, ch.level, n_draws, n_points,
                              g.n_subjects, ch.params.shape[1]))
        fh.write(np.asarray(g.offsets, "<i8").tobytes())
        fh.write(np.asarray(g.times, "<f8").tobytes())
        fh.write(np.asarray(g.observed, "u1").tobytes())
        fh.write(np.asarray(g.parent, "<i8").tobytes())
        fh.write(np.asarray(g.is_new, "u1").tobytes())
        fh.write(np.asarray(ch.path_iteration, "<i8").tobytes())
        fh.write(np.asarray(ch.path_logpost, "<f8").tobytes())
        fh.write(np.asarray(ch.path_params, "<f8").reshape(n_draws, -1).tobytes())
        fh.write(np.asarray(ch.paths, "<f8").reshape(n_draws, n_points).tobytes())


def read_paths(path):
    """Parse a path file into ``(grid, iteration, logpost, params, paths)``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, version, level, n_draws, n_points, n_subj, n_params = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a path file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = _HEADER.size

    def take(dtype, count):
        nonlocal pos
        dt = np.dtype(dtype)
        out = np.frombuffer(buf, dtype=dt, count=count, offset=pos).copy()
        pos += dt.itemsize * count
        return out

    offsets = take("<i8", n_subj + 1)
    times = take("<f8", n_points)
    observed = take("u1", n_points).astype(bool)
    parent = take("<i8", n_points)
    is_new = take("u1", n_points).astype(bool)
    iteration = take("<i8", n_draws)
    logpost = take("<f8", n_draws)
    params = take("<f8", n_draws * n_params).reshape(n_draws, n_params)
    paths = take("<f8", n_draws * n_points).reshape(n_draws, n_points)
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes")
    grid = ResolutionGrid(int(level), times, offsets, observed, parent, is_new)
    return grid, iteration, logpost, params, paths


def save_chains(store: ChainStore, directory) -> dict:
    """Write every level of ``store``; returns the manifest."""
    if not store.levels or all(ch.n_draws == 0 for ch in store.levels.values()):
        raise ValueError("chain store is empty; nothing written")
    try:
        os.makedirs(directory, exist_ok=True)
        for k, ch in sorted(store.levels.items()):
            with open(os.path.join(directory, f"params_k{k}.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iteration", *store.param_names])
                for i, row in enumerate(ch.params):
                    w.writerow([i, *(repr(float(v)) for v in row)])
            _write_paths(os.path.join(directory, f"paths_k{k}.bin"), ch)
        manifest = store.manifest()
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(exc.errno, f"writing chains to {directory}: {exc.strerror}") from exc
    return manifest


def load_chains(directory) -> ChainStore:
    mpath = os.path.join(directory, "manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"no manifest.json in {directory}")
    with open(mpath) as fh:
        man = json.load(fh)
    store = ChainStore(man["param_names"], man["n_covariates"], man["n_channels"],
                       seed=man.get("seed"), schedule=man.get("schedule"),
                       prior=man.get("prior"), standardize=man.get("standardize", False),
                       center=None if man.get("center") is None else np.array(man["center"]),
                       scale=None if man.get("scale") is None else np.array(man["scale"]),
                       subject_ids=man.get("subject_ids"))
    for key, info in man["levels"].items():
        k = int(key)
        with open(os.path.join(directory, f"params_k{k}.csv"), newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        params = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(
            len(rows), len(store.param_names))
        grid, iteration, logpost, _, paths = read_paths(
            os.path.join(directory, f"paths_k{k}.bin"))
        acc = {s: tuple(v) for s, v in info["acceptance"].items()}
        store.levels[k] = LevelChain(k, grid, params, iteration, paths, logpost, acc)
    return store
