"""Stochastic reduction of quantum states on a 1D grid.

A realized wavefunction evolves under the Schrodinger equation while capture
channels feed square modulus into frozen ready branches.  A stochastic trigger
with hazard proportional to the inflow current picks one branch, which becomes
the new realized state.
"""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    EnsembleSummary,
    TrajectoryRecord,
    compute_prefix,
    localization_report,
    oracle_first_hit_cdf,
    run_ensemble,
    run_trajectory,
)
from .config import ScenarioConfig, parse_config  # noqa: E402
from .reduction_engine import RngStream, run_step  # noqa: E402
from .scenarios import Scenario, build_scenario, default_config  # noqa: E402

__all__ = [
    "EnsembleSummary",
    "RngStream",
    "Scenario",
    "ScenarioConfig",
    "TrajectoryRecord",
    "build_scenario",
    "compute_prefix",
    "default_config",
    "localization_report",
    "oracle_first_hit_cdf",
    "parse_config",
    "run_ensemble",
    "run_step",
    "run_trajectory",
]
