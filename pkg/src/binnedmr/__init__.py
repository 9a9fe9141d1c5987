"""Penalized multinomial regression on labels binned at dataset-specific resolutions."""

from .binning import (
    AnnotatedDataset,
    BinningSpec,
    CategorySet,
    DatasetCollection,
    UnknownLabelError,
    read_binning,
    unbin,
    validate_binning,
    write_binning,
)
from .estimator import BinnedMultinomialRegression
from .likelihood import Coefficients, ProbMatrix, negative_log_likelihood
from .path import build_grid, fit_path, lambda_max
from .solver import FitResult, SolverConfig, fit, prox_group_rows

__version__ = "0.1.0"

__all__ = [
    "AnnotatedDataset",
    "BinningSpec",
    "CategorySet",
    "DatasetCollection",
    "UnknownLabelError",
    "read_binning",
    "write_binning",
    "unbin",
    "validate_binning",
    "BinnedMultinomialRegression",
    "Coefficients",
    "ProbMatrix",
    "negative_log_likelihood",
    "build_grid",
    "fit_path",
    "lambda_max",
    "FitResult",
    "SolverConfig",
    "fit",
    "prox_group_rows",
]
