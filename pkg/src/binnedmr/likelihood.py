"""Binned multinomial likelihood, probability matrices and gradients.

All softmax evaluations subtract the row maximum before exponentiating.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import NamedTuple

import numpy as np

from .binning import AnnotatedDataset, BinningSpec, DatasetCollection

__all__ = [
    "Coefficients",
    "ProbMatrix",
    "Gradients",
    "DimensionError",
    "linear_predictor",
    "softmax",
    "unconditional_probs",
    "conditional_probs",
    "bin_probabilities",
    "coarse_label_probs",
    "negative_log_likelihood",
    "gradients",
]

# below this a bin probability is recomputed in log space
_UNDERFLOW = 1e-280


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Coefficients:
    """Parameter triple: intercepts, feature coefficients, batch coefficients.

    ``alpha`` has shape ``(C,)``, ``beta`` ``(p, C)`` and ``gamma`` is a tuple
    of ``(r, C)`` matrices, one per training dataset, or empty when the model
    carries no batch term.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: tuple = ()

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        gamma = tuple(np.asarray(g, dtype=float) for g in self.gamma)
        if alpha.ndim != 1:
            raise DimensionError(f"alpha must be a vector, got shape {alpha.shape}")
        C = alpha.shape[0]
        if beta.ndim != 2 or beta.shape[1] != C:
            raise DimensionError(
                f"beta must have shape (p, {C}) to match alpha, got {beta.shape}"
            )
        rs = set()
        for g in gamma:
            if g.ndim != 2 or g.shape[1] != C:
                raise DimensionError(
                    f"gamma blocks must have shape (r, {C}), got {g.shape}"
                )
            rs.add(g.shape[0])
        if len(rs) > 1:
            raise DimensionError(f"gamma blocks disagree on r: {sorted(rs)}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def zeros(cls, p: int, n_categories: int, n_datasets: int = 0, r: int = 0):
        gamma = tuple(np.zeros((r, n_categories)) for _ in range(n_datasets)) if r else ()
        return cls(np.zeros(n_categories), np.zeros((p, n_categories)), gamma)

    @classmethod
    def for_collection(cls, collection: DatasetCollection) -> "Coefficients":
        return cls.zeros(collection.p, len(collection.categories), collection.K, collection.r)

    @property
    def n_categories(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def r(self) -> int:
        return self.gamma[0].shape[0] if self.gamma else 0

    def active_rows(self) -> np.ndarray:
        """Indices of nonzero rows of ``beta``."""
        return np.flatnonzero(np.any(self.beta != 0, axis=1))

    def without_batch(self) -> "Coefficients":
        """Drop the batch term, as used for prediction on new data."""
        return Coefficients(self.alpha, self.beta, ())

    def centered(self) -> "Coefficients":
        """Gauge-fixed copy: alpha and every beta/gamma row sum to zero."""
        beta = self.beta - self.beta.mean(axis=1, keepdims=True)
        # keep pruned rows bit-exactly zero
        beta[~np.any(self.beta != 0, axis=1)] = 0.0
        return Coefficients(
            self.alpha - self.alpha.mean(),
            beta,
            tuple(g - g.mean(axis=1, keepdims=True) for g in self.gamma),
        )

    def copy(self) -> "Coefficients":
        return Coefficients(self.alpha.copy(), self.beta.copy(),
                            tuple(g.copy() for g in self.gamma))

    def replace(self, **changes) -> "Coefficients":
        fields = {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}
        fields.update(changes)
        return Coefficients(**fields)


@dataclass(frozen=True)
class ProbMatrix:
    """Rows of category probabilities, either unconditional or conditional."""

    values: np.ndarray
    kind: str = "unconditional"

    def __post_init__(self):
        if self.kind not in ("unconditional", "conditional", "coarse"):
            raise ValueError(f"unknown probability kind {self.kind!r}")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def shape(self):
        return self.values.shape


class Gradients(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray
    gamma: tuple


def _check_dims(coeffs: Coefficients, X: np.ndarray, Z: np.ndarray | None, k: int | None):
    if X.shape[1] != coeffs.p:
        raise DimensionError(
            f"feature axis: data has p={X.shape[1]} but coefficients have p={coeffs.p}"
        )
    if coeffs.gamma and Z is not None and k is not None:
        if k >= len(coeffs.gamma):
            raise DimensionError(
                f"dataset axis: no batch coefficients for dataset index {k}"
            )
        if Z.shape[1] != coeffs.r:
            raise DimensionError(
                f"batch axis: data has r={Z.shape[1]} but coefficients have r={coeffs.r}"
            )


def linear_predictor(coeffs: Coefficients, X, Z=None, dataset_index: int | None = None):
    """``alpha + X beta + Z gamma_k`` for each row; gamma is skipped when absent."""
    X = np.asarray(X, dtype=float)
    _check_dims(coeffs, X, Z, dataset_index)
    eta = X @ coeffs.beta
    eta += coeffs.alpha
    if coeffs.gamma and Z is not None and dataset_index is not None and Z.shape[1]:
        eta += Z @ coeffs.gamma[dataset_index]
    return eta


# Row reductions over the short category axis fold the columns left to
# right.  This is several times faster than numpy's axis=1 reductions and
# fixes the summation order, so every bin sum is reproducible bit for bit.

def _row_max(a: np.ndarray) -> np.ndarray:
    return reduce(np.maximum, a.T[1:], a[:, 0].copy())


def _row_sum(a: np.ndarray) -> np.ndarray:
    acc = a[:, 0].copy()
    for col in a.T[1:]:
        acc += col
    return acc


def softmax(eta: np.ndarray) -> np.ndarray:
    e = eta - _row_max(eta)[:, None]
    np.exp(e, out=e)
    e /= _row_sum(e)[:, None]
    return e


def _masked_softmax(eta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    masked = np.where(mask, eta, -np.inf)
    e = np.exp(masked - masked.max(axis=1, keepdims=True))
    e /= e.sum(axis=1, keepdims=True)
    singleton = mask.sum(axis=1) == 1
    if singleton.any():
        e[singleton] = mask[singleton]
    return e


def _masked_logsumexp(eta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    masked = np.where(mask, eta, -np.inf)
    m = masked.max(axis=1)
    return m + np.log(np.exp(masked - m[:, None]).sum(axis=1))


def bin_probabilities(P: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probability of each row's observed label: the sum of P over its bin.

    Terms are added in category order and the result is capped at 1 (a
    full bin can round just above it); the likelihood uses this same path.
    """
    return np.minimum(_row_sum(P * mask), 1.0)


def _row_nll(eta: np.ndarray, P: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-row ``-log P(Y = y_i)`` with a log-space fallback on underflow."""
    pb = bin_probabilities(P, mask)
    out = np.empty_like(pb)
    ok = pb > _UNDERFLOW
    out[ok] = -np.log(pb[ok])
    if not ok.all():
        bad = ~ok
        e = eta[bad]
        lse_all = _masked_logsumexp(e, np.ones_like(mask[bad]))
        out[bad] = lse_all - _masked_logsumexp(e, mask[bad])
    return out


def unconditional_probs(
    coeffs: Coefficients, dataset: AnnotatedDataset, dataset_index: int | None = None
) -> ProbMatrix:
    eta = linear_predictor(coeffs, dataset.X, dataset.Z, dataset_index)
    return ProbMatrix(softmax(eta), "unconditional")


def conditional_probs(
    coeffs: Coefficients,
    dataset: AnnotatedDataset,
    dataset_index: int,
    spec: BinningSpec,
) -> ProbMatrix:
    eta = linear_predictor(coeffs, dataset.X, dataset.Z, dataset_index)
    mask = spec.bin_mask(dataset_index, dataset.y)
    return ProbMatrix(_masked_softmax(eta, mask), "conditional")


def coarse_label_probs(
    coeffs: Coefficients,
    dataset: AnnotatedDataset,
    dataset_index: int,
    spec: BinningSpec,
) -> ProbMatrix:
    """Probability of every label of dataset k: bin sums of the fine probabilities.

    Columns follow ``spec.labels(dataset_index)``.
    """
    P = softmax(linear_predictor(coeffs, dataset.X, dataset.Z, dataset_index))
    M = spec.membership(dataset_index)
    out = np.column_stack([bin_probabilities(P, np.broadcast_to(m, P.shape)) for m in M])
    return ProbMatrix(out, "coarse")


def rowwise_nll_and_residual(eta: np.ndarray, mask: np.ndarray, singleton=None):
    """Per-row NLL and residual ``P - C`` from one softmax evaluation.

    The conditional rows are the unconditional rows masked to the bin and
    divided by the bin probability, which is also what enters the NLL.
    Rows whose bin probability underflows are redone in log space.
    """
    P = softmax(eta)
    Cm = P * mask
    pb = np.minimum(_row_sum(Cm), 1.0)  # same arithmetic as bin_probabilities
    ok = pb > _UNDERFLOW
    nll = np.empty_like(pb)
    nll[ok] = -np.log(pb[ok])
    if ok.all():
        Cm /= pb[:, None]
    else:
        bad = ~ok
        nll[bad] = _row_nll(eta[bad], P[bad], mask[bad])
        Cm[ok] /= pb[ok, None]
        Cm[bad] = _masked_softmax(eta[bad], mask[bad])
    if singleton is None:
        singleton = mask.sum(axis=1) == 1
    if singleton.any():
        Cm[singleton] = mask[singleton]
    P -= Cm
    return nll, P


def dataset_nll_and_residual(eta: np.ndarray, mask: np.ndarray, need_residual=True):
    """Summed NLL of one dataset and its residual ``P - C`` (unscaled)."""
    if not need_residual:
        P = softmax(eta)
        return float(_row_nll(eta, P, mask).sum()), None
    nll, R = rowwise_nll_and_residual(eta, mask)
    return float(nll.sum()), R


def negative_log_likelihood(coeffs: Coefficients, collection: DatasetCollection) -> float:
    """Binned negative log-likelihood scaled by ``1/N``."""
    total = 0.0
    for k, ds in enumerate(collection.datasets):
        eta = linear_predictor(coeffs, ds.X, ds.Z, k)
        total += dataset_nll_and_residual(eta, collection.bin_mask(k), False)[0]
    return total / collection.N


def gradients(coeffs: Coefficients, collection: DatasetCollection) -> Gradients:
    """Gradients of the scaled NLL with respect to alpha, beta and each gamma."""
    N = collection.N
    g_alpha = np.zeros(coeffs.n_categories)
    g_beta = np.zeros_like(coeffs.beta)
    g_gamma = []
    for k, ds in enumerate(collection.datasets):
        eta = linear_predictor(coeffs, ds.X, ds.Z, k)
        _, R = dataset_nll_and_residual(eta, collection.bin_mask(k))
        g_alpha += R.sum(axis=0)
        g_beta += ds.X.T @ R
        if coeffs.gamma:
            g_gamma.append(ds.Z.T @ R / N)
    return Gradients(g_alpha / N, g_beta / N, tuple(g_gamma))
