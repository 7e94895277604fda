"""Change-point estimation between a nonstationary trend and a long-memory equilibrium."""

from .core import (SCHEMA_VERSION, CandidateWindow, ChangePointFit, EstimationError, FIFit,
                   InsufficientDataError, MultiSeries, SplineBasisSpec, TimeSeries, TrendFit,
                   index_of, read_series_csv, write_series_csv)
from .detect import (SigmoidConfig, StepSearchConfig, TrendConfig, fit_fixed_tau,
                     fit_multivariate, fit_sigmoid, fit_step)
from .fiproc import fit_fi, frac_weights, simulate_arfima, simulate_fi
from .simgen import ScenarioSpec, gen_scenario

__version__ = "0.1.0"

__all__ = [
    "SCHEMA_VERSION", "CandidateWindow", "ChangePointFit", "EstimationError", "FIFit",
    "InsufficientDataError", "MultiSeries", "SplineBasisSpec", "TimeSeries", "TrendFit",
    "index_of", "read_series_csv", "write_series_csv", "SigmoidConfig", "StepSearchConfig",
    "TrendConfig", "fit_fixed_tau", "fit_multivariate", "fit_sigmoid", "fit_step", "fit_fi",
    "frac_weights", "simulate_arfima", "simulate_fi", "ScenarioSpec", "gen_scenario",
]
