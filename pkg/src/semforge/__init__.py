"""Two-stage penalized least squares for large systems of structural equations."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .alasso import (
    EquationFit,
    EquationProblem,
    annihilator,
    cv_select_lambda,
    fit_equation,
    initial_estimate,
    weighted_lasso_cd,
    weights,
)
from .core import (
    DataSet,
    EdgeFrequencyTable,
    ExoAssignment,
    StageOneResult,
    SystemEstimate,
    ValidationError,
    center_columns,
    validate,
)
from .pipeline import BootstrapConfig, FitConfig, bootstrap_edges, fit_system
from .ridge import (
    DesignFactorization,
    GcvSearchConfig,
    StageOneStrategy,
    decompose_design,
    gcv_value,
    ridge_fit,
    select_tau,
    stage_one,
)
from .simgen import ErrorSpec, NetworkSpec, gen_dataset, gen_network, run_experiment, score

__all__ = [
    "BACKEND",
    "BootstrapConfig",
    "DataSet",
    "DesignFactorization",
    "EdgeFrequencyTable",
    "EquationFit",
    "EquationProblem",
    "ErrorSpec",
    "ExoAssignment",
    "FitConfig",
    "GcvSearchConfig",
    "NetworkSpec",
    "StageOneResult",
    "StageOneStrategy",
    "SystemEstimate",
    "ValidationError",
    "annihilator",
    "bootstrap_edges",
    "center_columns",
    "cv_select_lambda",
    "decompose_design",
    "fit_equation",
    "fit_system",
    "gcv_value",
    "gen_dataset",
    "gen_network",
    "initial_estimate",
    "ridge_fit",
    "run_experiment",
    "score",
    "select_tau",
    "stage_one",
    "validate",
    "weighted_lasso_cd",
    "weights",
]
