"""Multiclass queueing networks under static buffer priority: heavy-traffic toolkit.

Modules
-------
network      network specification, validation, traffic equations, families
transforms   moment-generating-function roots for the test functions
analysis     reflection matrix, covariance, completely-S and tightness checks
sim          discrete-event simulator with time and event averages
ctmc         exact stationary oracle for all-exponential networks
srbm         reflected Brownian motion simulation
verify       sweeps, BAR residuals, Palm identities, SSC diagnostics
"""

from .analysis import AnalysisReport, SrbmData, analyze, build_reflection, check_tight, extract_sigma
from .ctmc import exact_functionals, solve_ctmc
from .distributions import DistributionModel, parse_distribution
from .network import (
    HeavyTrafficFamily,
    NetworkError,
    NetworkSpec,
    ValidatedNetwork,
    instantiate_at,
    load_network,
    validate_spec,
)
from .sim import Estimate, SteadyStats, simulate, test_function
from .srbm import simulate_srbm
from .verify import abar_residual, palm_identity_check, run_sweep, ssc_diagnostics

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "DistributionModel",
    "Estimate",
    "HeavyTrafficFamily",
    "NetworkError",
    "NetworkSpec",
    "SrbmData",
    "SteadyStats",
    "ValidatedNetwork",
    "abar_residual",
    "analyze",
    "build_reflection",
    "check_tight",
    "exact_functionals",
    "extract_sigma",
    "instantiate_at",
    "load_network",
    "palm_identity_check",
    "parse_distribution",
    "run_sweep",
    "simulate",
    "simulate_srbm",
    "solve_ctmc",
    "ssc_diagnostics",
    "test_function",
    "validate_spec",
]
