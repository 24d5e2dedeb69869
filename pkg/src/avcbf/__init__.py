"""Safety filters built from auxiliary-variable adaptive control barrier functions.

The package solves one small QP per control instant, holds its inputs over
the sampling interval and integrates the plant; ``autotune`` adjusts the
auxiliary-input targets whenever the safety-feasibility criterion runs low.
"""

from .autotune import TuningConfig, TuningReport, tune_full_horizon
from .engine import Trajectory, simulate_scenario
from .numkit import QpProblem, QpSolution, QpStatus, qp_kkt_residual, qp_solve
from .scenarios import SCENARIOS, make_scenario
from .simkit import ConfigError, RunConfig, compare, export_csv, read_csv, simulate

__all__ = [
    "ConfigError", "QpProblem", "QpSolution", "QpStatus", "RunConfig", "SCENARIOS", "Trajectory",
    "TuningConfig", "TuningReport", "compare", "export_csv", "make_scenario", "qp_kkt_residual",
    "qp_solve", "read_csv", "simulate", "simulate_scenario", "tune_full_horizon",
]
