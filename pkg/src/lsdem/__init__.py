"""Bayesian inference for latent dual Ornstein-Uhlenbeck models of irregular panels."""

from .chains import ChainStore, ConfigurationError, load_chains, save_chains
from .data import (DatasetError, GroundTruth, PanelDataset, SimulationError, load_dataset,
                   make_design, save_dataset, simulate_dataset)
from .diagnostics import acf_ess, ppc_pvalue, predict_bands, summarize
from .estimator import LatentSDE
from .model import DayNightWindow, ModelParams
from .multires import MrSchedule, NumericalError, run_mr
from .parameters import PriorSpec

__version__ = "0.1.0"

__all__ = [
    "ChainStore", "ConfigurationError", "DatasetError", "DayNightWindow", "GroundTruth",
    "LatentSDE", "ModelParams", "MrSchedule", "NumericalError", "PanelDataset", "PriorSpec",
    "SimulationError", "acf_ess", "load_chains", "load_dataset", "make_design", "ppc_pvalue",
    "predict_bands", "run_mr", "save_chains", "save_dataset", "simulate_dataset", "summarize",
]
