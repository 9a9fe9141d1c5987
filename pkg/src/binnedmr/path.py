"""Regularization paths over (lambda, rho) with warm starts.

The lambda sequence starts at the smallest value for which ``beta = 0``
satisfies the group-lasso stationarity condition and decreases
geometrically.  Tuning parameters are selected by validation negative
log-likelihood with the batch term dropped.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .binning import DatasetCollection
from .likelihood import Coefficients, negative_log_likelihood
from .solver import (
    FitResult,
    NumericalError,
    SolverConfig,
    SolverState,
    fit,
    fit_null_model,
)

__all__ = [
    "DEFAULT_RHOS",
    "TuningGrid",
    "PathResult",
    "PathError",
    "lambda_max",
    "build_grid",
    "fit_path",
    "validation_nll",
    "write_path_report",
    "read_path_report",
]

logger = logging.getLogger(__name__)

DEFAULT_RHOS = (0.01, 0.1, 1.0, 10.0)

# lambda_max is padded by this relative amount so that rounding in a solve
# started from the null model cannot activate a row
_KKT_PAD = 1e-6


class PathError(RuntimeError):
    pass


@dataclass(frozen=True)
class TuningGrid:
    lambdas: tuple
    rhos: tuple
    lambda_max: float
    lambda_min_ratio: float = 1e-3

    def __post_init__(self):
        lams = np.asarray(self.lambdas, dtype=float)
        if lams.size == 0 or np.any(lams <= 0):
            raise ValueError("lambdas must be a nonempty positive sequence")
        if np.any(np.diff(lams) >= 0):
            raise ValueError("lambdas must be strictly decreasing")
        if len(self.rhos) == 0 or any(r < 0 for r in self.rhos):
            raise ValueError("rhos must be a nonempty nonnegative sequence")

    @property
    def n_lambda(self) -> int:
        return len(self.lambdas)


def lambda_max(collection: DatasetCollection, rho: float = 0.0) -> float:
    """Smallest lambda at which ``beta = 0`` is stationary.

    Fits the beta-free model, then returns the largest row norm of the beta
    gradient there, padded by a relative ``1e-6``.
    """
    null = fit_null_model(collection, rho)
    state = SolverState(collection, null.coeffs, 0.0, rho)
    g = state.grad_beta()
    if g.shape[0] == 0:
        return 0.0
    return float(np.sqrt(np.einsum("ij,ij->i", g, g)).max()) * (1.0 + _KKT_PAD)


def build_grid(
    collection: DatasetCollection,
    n_lambda: int = 25,
    lambda_min_ratio: float = 1e-3,
    rhos: Sequence[float] = DEFAULT_RHOS,
) -> TuningGrid:
    """Log-spaced lambdas from lambda_max down to ``lambda_min_ratio * lambda_max``.

    lambda_max is computed once, at the smallest rho.
    """
    if n_lambda < 2:
        raise ValueError("n_lambda must be at least 2")
    if not 0 < lambda_min_ratio < 1:
        raise ValueError("lambda_min_ratio must be in (0, 1)")
    rhos = tuple(float(r) for r in rhos)
    lmax = lambda_max(collection, min(rhos))
    lams = lmax * np.geomspace(1.0, lambda_min_ratio, n_lambda)
    lams[0] = lmax
    return TuningGrid(tuple(float(l) for l in lams), rhos, lmax, lambda_min_ratio)


def validation_nll(coeffs: Coefficients, validation: DatasetCollection) -> float:
    """Validation NLL using only alpha and beta (batch term set to zero)."""
    return negative_log_likelihood(coeffs.without_batch(), validation)


@dataclass
class PathResult:
    grid: TuningGrid
    fits: dict = field(default_factory=dict)
    validation_nll: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    selected: tuple | None = None

    @property
    def best(self) -> FitResult:
        return self.fits[self.selected]

    def rows(self):
        """One record per grid point, in fitting order."""
        for rho in self.grid.rhos:
            for lam in self.grid.lambdas:
                key = (lam, rho)
                if key in self.fits:
                    f = self.fits[key]
                    yield {
                        "lambda": lam,
                        "rho": rho,
                        "train_objective": f.objective,
                        "validation_nll": self.validation_nll[key],
                        "active_rows": int(f.active_rows.size),
                        "iterations": f.iterations,
                        "converged": f.converged,
                        "status": f.status,
                    }
                else:
                    status = ("skipped" if key in self.skipped
                              else "failed: " + str(self.failures.get(key, "")))
                    yield {
                        "lambda": lam, "rho": rho,
                        "train_objective": np.nan, "validation_nll": np.nan,
                        "active_rows": -1, "iterations": 0, "converged": False,
                        "status": status,
                    }


def _select(validation: dict):
    # ties go to larger lambda, then larger rho
    return min(validation, key=lambda key: (validation[key], -key[0], -key[1]))


def fit_path(
    train: DatasetCollection,
    validation: DatasetCollection,
    grid: TuningGrid,
    config: SolverConfig | None = None,
    patience: int | None = None,
) -> PathResult:
    """Fit every grid point, warm-starting along decreasing lambda per rho.

    When the training data carry no batch covariates rho cannot affect any
    fit, so one lambda path is computed and shared across all rhos.

    With ``patience`` set, a lambda path stops once the validation NLL has
    failed to improve on its running minimum for that many consecutive grid
    points; the remaining points are recorded as skipped.
    """
    if tuple(validation.categories) != tuple(train.categories):
        raise ValueError("training and validation collections use different fine categories")
    if validation.p != train.p:
        raise ValueError(
            f"validation has p={validation.p} features, training has p={train.p}"
        )
    if patience is not None and patience < 1:
        raise ValueError("patience must be a positive integer or None")
    config = config or SolverConfig()
    result = PathResult(grid)
    shared = None
    for rho in grid.rhos:
        if train.r == 0 and shared is not None:
            for lam in grid.lambdas:
                src = (lam, shared)
                if src in result.fits:
                    result.fits[(lam, rho)] = result.fits[src]
                    result.validation_nll[(lam, rho)] = result.validation_nll[src]
                elif src in result.failures:
                    result.failures[(lam, rho)] = result.failures[src]
                else:
                    result.skipped.append((lam, rho))
            continue
        init = "null"
        best, since_best = np.inf, 0
        for i, lam in enumerate(grid.lambdas):
            key = (lam, rho)
            if patience is not None and since_best >= patience:
                result.skipped.extend((l, rho) for l in grid.lambdas[i:])
                break
            try:
                res = fit(train, config.replace(lam=lam, rho=rho, init=init))
            except (NumericalError, FloatingPointError, ArithmeticError) as exc:
                logger.warning("fit failed at lambda=%g rho=%g: %s", lam, rho, exc)
                result.failures[key] = exc
                since_best += 1
                continue
            result.fits[key] = res
            v = validation_nll(res.coeffs, validation)
            result.validation_nll[key] = v
            if v < best:
                best, since_best = v, 0
            else:
                since_best += 1
            init = res.coeffs
        shared = rho
    if not result.fits:
        raise PathError("every grid point failed to fit")
    result.selected = _select(result.validation_nll)
    return result


_REPORT_COLUMNS = ("lambda", "rho", "train_objective", "validation_nll",
                   "active_rows", "iterations", "converged", "status")


def write_path_report(result: PathResult, path) -> None:
    """Tab-delimited path table, one row per grid point."""
    from ._tsv import fmt
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_REPORT_COLUMNS)
        for row in result.rows():
            w.writerow([
                fmt(row["lambda"]), fmt(row["rho"]), fmt(row["train_objective"]),
                fmt(row["validation_nll"]), row["active_rows"], row["iterations"],
                int(row["converged"]), row["status"],
            ])


def read_path_report(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        out = []
        for row in reader:
            out.append({
                "lambda": float(row["lambda"]),
                "rho": float(row["rho"]),
                "train_objective": float(row["train_objective"]),
                "validation_nll": float(row["validation_nll"]),
                "active_rows": int(row["active_rows"]),
                "iterations": int(row["iterations"]),
                "converged": bool(int(row["converged"])),
                "status": row["status"],
            })
    return out
