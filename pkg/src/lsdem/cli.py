"""Command line front end: ``lsdem {simulate,fit,diagnose,predict} CONFIG``.

The configuration file (JSON, or TOML by extension ``.toml``) holds every
setting of a run; the few command line flags only override its keys.
Relative paths are resolved against the configuration file's directory.

Exit codes: 0 success, 2 configuration or input error, 3 simulation
failure, 4 numerical failure during fitting.  Set ``LSDEM_LOG_LEVEL`` to
change verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .chains import ConfigurationError, load_chains, save_chains
from .data import (DatasetError, GroundTruth, SimulationError, load_dataset, make_design,
                   save_dataset, save_truth, simulate_dataset)
from .diagnostics import acf_ess, ppc_pvalue, predict_bands, summarize, write_bands_csv
from .model import ModelParams
from .multires import MrSchedule, NumericalError, build_contexts, run_mr
from .parameters import PriorSpec

logger = logging.getLogger("lsdem")

EXIT_CONFIG, EXIT_SIMULATION, EXIT_NUMERIC = 2, 3, 4


class RunConfig(dict):
    """Parsed configuration with path resolution relative to its file."""

    def __init__(self, data: dict, base_dir: str):
        super().__init__(data)
        self.base_dir = base_dir

    def path(self, value):
        return value if os.path.isabs(value) else os.path.join(self.base_dir, value)

    def require(self, key):
        if self.get(key) is None:
            raise ConfigurationError(f"configuration field '{key}' is required")
        return self[key]

    def section(self, key) -> dict:
        sec = self.get(key) or {}
        if not isinstance(sec, dict):
            raise ConfigurationError(f"configuration field '{key}' must be a table")
        return sec


def read_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigurationError(f"configuration file {path} does not exist")
    try:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(path) as fh:
                data = json.load(fh)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a table")
    return RunConfig(data, os.path.dirname(os.path.abspath(path)))


def _output_dir(cfg: RunConfig) -> str:
    out = cfg.path(cfg.require("output_dir"))
    os.makedirs(out, exist_ok=True)
    return out


def _dataset(cfg: RunConfig):
    data = cfg.section("data")
    files = {}
    for key in ("observations", "covariates", "windows"):
        if key not in data:
            raise ConfigurationError(f"configuration field 'data.{key}' is required")
        files[key] = cfg.path(data[key])
        if not os.path.exists(files[key]):
            raise ConfigurationError(f"data.{key}: file {files[key]} does not exist")
    return load_dataset(files["observations"], files["covariates"], files["windows"])


def _schedule(cfg: RunConfig) -> MrSchedule:
    sec = dict(cfg.section("schedule"))
    for key in ("target_dt", "alpha"):
        if key in cfg:
            sec[key] = cfg[key]
    try:
        return MrSchedule(**sec)
    except TypeError as exc:
        raise ConfigurationError(f"schedule: {exc}") from exc


def _prior(cfg: RunConfig) -> PriorSpec:
    try:
        return PriorSpec.from_dict(cfg.section("prior"))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def _chains_dir(cfg: RunConfig) -> str:
    d = cfg.get("chains") or cfg.get("output_dir")
    if d is None:
        raise ConfigurationError("configuration field 'chains' is required")
    d = cfg.path(d)
    if not os.path.exists(os.path.join(d, "manifest.json")):
        raise ConfigurationError(f"no chains found in {d}")
    return d


# -- commands -------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> int:
    seed = int(cfg.require("seed"))
    sim = cfg.section("simulate")
    if "truth" not in sim:
        raise ConfigurationError("configuration field 'simulate.truth' is required")
    t = sim["truth"]
    try:
        params = ModelParams(np.array(t["beta"], float), float(t["psi"]), t["mu"], t["lam"],
                             t["sigma2"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigurationError(f"simulate.truth: {exc}") from exc
    design = make_design(int(sim.get("n_subjects", 20)), seed,
                         n_covariates=params.n_covariates,
                         **{k: sim[k] for k in ("day_gap", "night_gap", "day_end",
                                                "night_end", "span") if k in sim})
    truth = GroundTruth(params, t.get("x0"))
    try:
        dataset, truth = simulate_dataset(truth, design, float(sim.get("sim_dt", 1e-3)),
                                          seed=seed, n_jobs=int(sim.get("n_jobs", 1)))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    out = _output_dir(cfg)
    dataset.channel_names = list(sim.get("channel_names", dataset.channel_names))
    save_dataset(dataset, out)
    save_truth(truth, os.path.join(out, "truth.json"))
    logger.info("simulated %d subjects, %d observations into %s", dataset.n_subjects,
                dataset.n_observations, out)
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    seed = int(cfg.require("seed"))
    dataset = _dataset(cfg)
    schedule = _schedule(cfg)
    prior = _prior(cfg)
    out = _output_dir(cfg)
    timing, started = {}, {}

    def progress(level, it, total, sampler):
        started.setdefault(level, time.perf_counter())
        if it == total:
            timing[str(level)] = time.perf_counter() - started[level]
        logger.info("level %d: %d/%d", level, it, total)

    store = run_mr(dataset, prior, schedule, seed=seed,
                   standardize=bool(cfg.get("standardize", True)), progress=progress)
    save_chains(store, out)
    # wall-clock lives outside the manifest so reruns stay byte-identical
    with open(os.path.join(out, "timing.json"), "w") as fh:
        json.dump({"seconds_per_level": timing}, fh, indent=2, sort_keys=True)
    for k, rates in store.acceptance_rates().items():
        print(f"level {k}: " + ", ".join(f"{n}={r:.3f}" for n, r in sorted(rates.items())
                                         if np.isfinite(r)))
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    store = load_chains(_chains_dir(cfg))
    out = _output_dir(cfg)
    level = cfg.get("level")
    ch = store.finest if level is None else store.levels.get(int(level))
    if ch is None:
        raise ConfigurationError(f"no chains stored at level {level}")
    table = summarize(ch.params, store.n_covariates, store.param_names)
    table.to_csv(os.path.join(out, "summary.csv"))
    dataset = None
    if cfg.get("data"):
        dataset = _dataset(cfg)
    cov_names = None
    if dataset is not None:
        cov_names = ["Intercept"] + list(dataset.covariate_names[1:])
    with open(os.path.join(out, "summary.md"), "w") as fh:
        fh.write(table.to_markdown(cov_names))
    with open(os.path.join(out, "ess.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "ess", "acf1", "degenerate"])
        for j, name in enumerate(store.param_names):
            r = acf_ess(ch.params[:, j], min(50, ch.n_draws - 1))
            acf1 = r.acf[1] if len(r.acf) > 1 else float("nan")
            w.writerow([name, f"{r.ess:.6g}", f"{acf1:.6g}", int(r.degenerate)])
    if dataset is not None:
        y = dataset.stacked_y(store.standardize)
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        res = ppc_pvalue(y, ch.grid.obs_index, ch.paths, ch.path_params, store.n_covariates,
                         rng)
        with open(os.path.join(out, "ppc.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw", "d_rep", "d_obs"])
            for s, (a, b) in enumerate(zip(res.d_rep, res.d_obs)):
                w.writerow([s, repr(float(a)), repr(float(b))])
        with open(os.path.join(out, "ppc.json"), "w") as fh:
            json.dump({"p_value": res.p_value, "n_draws": len(res.d_rep)}, fh, indent=2)
        print(f"posterior predictive p-value: {res.p_value:.3f}")
    print(table.to_markdown(cov_names), end="")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    store = load_chains(_chains_dir(cfg))
    subject = cfg.require("subject")
    level = float(cfg.get("level", 0.95))
    ids = store.subject_ids or []
    if str(subject) not in ids:
        raise ConfigurationError(f"unknown subject {subject!r}")
    i = ids.index(str(subject))
    ch = store.finest
    g = ch.grid
    idx = np.flatnonzero(g.observed[g.offsets[i]:g.offsets[i + 1]]) + g.offsets[i]
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    bands = predict_bands(ch.paths[:, idx], ch.path_params, store.n_covariates,
                          store.n_channels, rng, level,
                          store.center if store.standardize else None,
                          store.scale if store.standardize else None)
    out = _output_dir(cfg)
    names = cfg.get("channel_names")
    if names is None and cfg.get("data"):
        names = _dataset(cfg).channel_names
    names = names or [f"y{r + 1}" for r in range(store.n_channels)]
    path = os.path.join(out, f"bands_{subject}.csv")
    write_bands_csv(path, g.times[idx], bands, names, level)
    print(path)
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "diagnose": cmd_diagnose,
            "predict": cmd_predict}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsdem", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="JSON or TOML run configuration")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--output-dir")
    ap.add_argument("--chains", help="directory of stored chains")
    ap.add_argument("--subject")
    ap.add_argument("--level", type=float)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LSDEM_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = read_config(args.config)
        cwd = os.getcwd()
        for key in ("seed", "output_dir", "chains", "subject", "level"):
            value = getattr(args, key)
            if value is not None:
                # flag values are relative to the working directory
                cfg[key] = os.path.join(cwd, value) if key in ("output_dir", "chains") \
                    else value
        if args.command == "diagnose" and args.level is not None:
            cfg["level"] = int(args.level)
        return COMMANDS[args.command](cfg)
    except (ConfigurationError, DatasetError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
