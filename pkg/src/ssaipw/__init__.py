"""Semi-supervised and covariate-shift regression with calibrated AIPW estimators."""

from ._jit import backend
from .basis import BasisSpec, KnotPlacement, build_or_basis, build_ps_basis
from .diagnostics import ks_two_sample_bootstrap, mmd_permutation_test
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateFitError,
    EstimandError,
    EstimationError,
    ParseError,
    RankError,
    SolverError,
    SSAIPWError,
)
from .estimators import (
    Variant,
    crossfit_aipw,
    evaluate_tau,
    solve_beta_aipw,
    solve_beta_ipw,
    solve_beta_stratified,
)
from .inference import EstimateReport, gamma_hat, lambda_hat, sandwich_ci
from .model import Dataset, Estimand, Link, TargetSpec, extract_z
from .nuisance import (
    fit_or_rwl,
    fit_or_unweighted,
    fit_ps_constant,
    fit_ps_rcal,
    fit_ps_rml,
)
from .pipeline import FitOptions, Method, estimate
from .simulation import Case, SimConfig, run_replications, simulate_dataset, true_beta
from .solver import Loss, PenalizedProblem, SolverConfig, minimize_l1

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "Case", "ConfigurationError", "DataError", "Dataset", "DegenerateFitError",
    "Estimand", "EstimandError", "EstimateReport", "EstimationError", "FitOptions",
    "KnotPlacement", "Link", "Loss", "Method", "ParseError", "PenalizedProblem", "RankError",
    "SSAIPWError", "SimConfig", "SolverConfig", "SolverError", "TargetSpec", "Variant",
    "backend", "build_or_basis", "build_ps_basis", "crossfit_aipw", "estimate", "evaluate_tau",
    "extract_z", "fit_or_rwl", "fit_or_unweighted", "fit_ps_constant", "fit_ps_rcal",
    "fit_ps_rml", "gamma_hat", "ks_two_sample_bootstrap", "lambda_hat", "minimize_l1",
    "mmd_permutation_test", "run_replications", "sandwich_ci", "simulate_dataset",
    "solve_beta_aipw", "solve_beta_ipw", "solve_beta_stratified", "true_beta",
]
