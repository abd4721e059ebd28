"""Compositional covariance-kernel search for Gaussian-process regression."""

__version__ = "0.1.0"

from .errors import (ConditioningError, DataError, DimensionError, ExprSyntaxError,
                     KernelForgeError, ParamLengthError)
from .kernels import (Base, Product, Sum, add, canonical_form, canonical_string,
                      cov_matrix, multiply, pack, to_sum_of_products, unpack)
from .syntax import format_expr, parse
from .gp import Dataset, GpModel, log_marginal_likelihood, posterior_predict
from .decomposition import decompose_posterior
from .search import SearchConfig, bic_score, expand, greedy_search, optimize_params
from .data import SyntheticSpec, generate_synthetic, load_csv
from .experiments import (LearningCurveSpec, run_learning_curve,
                          run_recovery_experiment)
from .report import RunReport, emit_report, load_report

__all__ = [
    "Base", "Sum", "Product", "add", "multiply", "pack", "unpack", "cov_matrix",
    "canonical_form", "canonical_string", "to_sum_of_products", "parse", "format_expr",
    "Dataset", "GpModel", "log_marginal_likelihood", "posterior_predict",
    "decompose_posterior", "SearchConfig", "expand", "bic_score", "greedy_search",
    "optimize_params", "SyntheticSpec", "generate_synthetic", "load_csv",
    "LearningCurveSpec", "run_learning_curve", "run_recovery_experiment",
    "RunReport", "emit_report", "load_report", "KernelForgeError", "ConditioningError",
    "DataError", "DimensionError", "ExprSyntaxError", "ParamLengthError",
]
