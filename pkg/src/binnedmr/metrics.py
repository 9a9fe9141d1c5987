"""Fine, conditional and coarse predictions, evaluation metrics, rankings.

Predictions on new data always drop the batch term: probabilities use
only the intercepts and feature coefficients.
"""

from __future__ import annotations

import csv
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._tsv import fmt
from .binning import BinningSpec, CategorySet
from .likelihood import (
    Coefficients,
    DimensionError,
    ProbMatrix,
    _masked_logsumexp,
    _masked_softmax,
    linear_predictor,
    softmax,
)

__all__ = [
    "PredictionSet",
    "ObservedTestLabelSet",
    "predict_fine",
    "predict_conditional",
    "predict_coarse",
    "error_rate",
    "kl_divergence",
    "hellinger_distance",
    "standardized_coefficient_ranking",
    "confusion_percentages",
    "write_predictions",
    "read_predictions",
    "write_confusion",
]

# estimated probabilities are clamped here before taking logs in KL
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictionSet:
    mode: str
    labels: np.ndarray
    probs: ProbMatrix
    support: tuple

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class ObservedTestLabelSet:
    """Test labels that actually occur, in the test dataset's label order."""

    labels: tuple

    def __post_init__(self):
        if len(self.labels) == 0:
            raise ValueError("observed test label set is empty")

    @classmethod
    def from_labels(cls, y, spec: BinningSpec, dataset_index: int = 0):
        present = set(np.asarray(y, dtype=object).tolist())
        for lab in present:
            spec.g(dataset_index, lab)  # raises on unknown labels
        return cls(tuple(l for l in spec.labels(dataset_index) if l in present))


def _names(categories, n):
    if categories is None:
        return tuple(range(n))
    return tuple(categories.names if isinstance(categories, CategorySet) else categories)


def _eta_no_batch(coeffs: Coefficients, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-d, got shape {X.shape}")
    return linear_predictor(coeffs.without_batch(), X)


def predict_fine(coeffs: Coefficients, X_test, categories=None) -> PredictionSet:
    """Argmax over all fine categories; ties go to the lowest index."""
    P = softmax(_eta_no_batch(coeffs, X_test))
    names = _names(categories, P.shape[1])
    idx = np.argmax(P, axis=1)
    return PredictionSet("fine", np.asarray(names, dtype=object)[idx],
                         ProbMatrix(P, "unconditional"), names)


def predict_conditional(coeffs: Coefficients, X_test, y_coarse,
                        spec_test: BinningSpec, dataset_index: int = 0) -> PredictionSet:
    """Argmax within each observation's bin.

    A fine-labelled observation always gets its own label back.
    """
    eta = _eta_no_batch(coeffs, X_test)
    if len(y_coarse) != eta.shape[0]:
        raise DimensionError(f"{len(y_coarse)} labels for {eta.shape[0]} rows")
    mask = spec_test.bin_mask(dataset_index, list(y_coarse))
    Cm = _masked_softmax(eta, mask)
    names = spec_test.fine.names
    idx = np.argmax(Cm, axis=1)
    return PredictionSet("conditional", np.asarray(names, dtype=object)[idx],
                         ProbMatrix(Cm, "conditional"), names)


def coarse_probabilities(eta, spec_test: BinningSpec, observed: ObservedTestLabelSet,
                         dataset_index: int = 0) -> np.ndarray:
    """Bin-summed probabilities over the observed test labels, renormalized."""
    M = spec_test.membership(dataset_index)
    pos = {lab: j for j, lab in enumerate(spec_test.labels(dataset_index))}
    try:
        rows = [pos[lab] for lab in observed.labels]
    except KeyError as exc:
        raise ValueError(f"observed label {exc.args[0]!r} is not a test label") from None
    # log of each bin's unnormalized mass, then softmax across bins
    log_mass = np.column_stack([
        _masked_logsumexp(eta, np.broadcast_to(M[j], eta.shape)) for j in rows
    ])
    return softmax(log_mass)


def predict_coarse(coeffs: Coefficients, X_test, spec_test: BinningSpec,
                   observed_set: ObservedTestLabelSet,
                   dataset_index: int = 0) -> PredictionSet:
    """Argmax over the observed test labels after summing fine probabilities."""
    if not observed_set.labels:
        raise ValueError("observed test label set is empty")
    eta = _eta_no_batch(coeffs, X_test)
    Q = coarse_probabilities(eta, spec_test, observed_set, dataset_index)
    labels = np.asarray(observed_set.labels, dtype=object)[np.argmax(Q, axis=1)]
    return PredictionSet("coarse", labels, ProbMatrix(Q, "coarse"),
                         tuple(observed_set.labels))


def error_rate(predictions: PredictionSet, y_observed) -> float:
    """Fraction of predictions that differ from the observed labels."""
    y = np.asarray(y_observed, dtype=object)
    if y.shape[0] != len(predictions):
        raise DimensionError(f"{y.shape[0]} labels for {len(predictions)} predictions")
    support = set(predictions.support)
    unknown = {v for v in y.tolist() if v not in support}
    if unknown:
        raise ValueError(
            f"observed labels outside the {predictions.mode} prediction space: "
            f"{sorted(map(str, unknown))[:5]}"
        )
    if y.shape[0] == 0:
        return 0.0
    return float(np.mean(predictions.labels != y))


def _pair(true_probs, est_probs):
    P = np.asarray(true_probs, dtype=float)
    Q = np.asarray(est_probs, dtype=float)
    if P.shape != Q.shape or P.ndim != 2:
        raise DimensionError(f"shape mismatch: {P.shape} vs {Q.shape}")
    return P, Q


def kl_divergence(true_probs, est_probs) -> float:
    """Row-averaged KL(true || estimated), with ``0 log 0 = 0``."""
    P, Q = _pair(true_probs, est_probs)
    Q = np.maximum(Q, PROB_FLOOR)
    pos = P > 0
    terms = np.zeros_like(P)
    terms[pos] = P[pos] * (np.log(P[pos]) - np.log(Q[pos]))
    return float(max(terms.sum(axis=1).mean(), 0.0))


def hellinger_distance(true_probs, est_probs) -> float:
    """Row-averaged ``sqrt(1 - sum_l sqrt(p_l q_l))``."""
    P, Q = _pair(true_probs, est_probs)
    bc = np.sqrt(P * Q).sum(axis=1)
    return float(np.sqrt(np.clip(1.0 - bc, 0.0, 1.0)).mean())


def standardized_coefficient_ranking(coeffs: Coefficients, feature_sds, top_n: int = 10,
                                     feature_names=None, categories=None) -> dict:
    """Top features per category by ``|beta_jl| * sd_j``.

    Returns ``{category: [(feature, score), ...]}`` in descending score
    order; equal scores keep feature order.
    """
    sds = np.asarray(feature_sds, dtype=float)
    if sds.shape != (coeffs.p,):
        raise DimensionError(f"need {coeffs.p} feature sds, got shape {sds.shape}")
    if np.any(~(sds > 0)):
        raise ValueError("feature standard deviations must be positive")
    feats = list(range(coeffs.p)) if feature_names is None else list(feature_names)
    cats = _names(categories, coeffs.n_categories)
    scores = np.abs(coeffs.beta) * sds[:, None]
    out = {}
    for l, cat in enumerate(cats):
        order = np.argsort(-scores[:, l], kind="stable")[:top_n]
        out[cat] = [(feats[j], float(scores[j, l])) for j in order]
    return out


def confusion_percentages(observed, predicted, row_labels=None, col_labels=None):
    """Percentage of each observed label falling in each predicted label.

    Returns ``(row_labels, col_labels, matrix)``; rows sum to 100.
    """
    observed = np.asarray(observed, dtype=object)
    predicted = np.asarray(predicted, dtype=object)
    if observed.shape != predicted.shape:
        raise DimensionError("observed and predicted lengths differ")
    if row_labels is None:
        row_labels = sorted(set(observed.tolist()), key=str)
    if col_labels is None:
        col_labels = sorted(set(predicted.tolist()), key=str)
    ri = {v: i for i, v in enumerate(row_labels)}
    ci = {v: i for i, v in enumerate(col_labels)}
    counts = np.zeros((len(row_labels), len(col_labels)))
    for o, p in zip(observed.tolist(), predicted.tolist()):
        counts[ri[o], ci[p]] += 1
    totals = counts.sum(axis=1, keepdims=True)
    pct = np.divide(100.0 * counts, totals, out=np.zeros_like(counts), where=totals > 0)
    return list(row_labels), list(col_labels), pct


def write_predictions(predictions: PredictionSet, path, ids: Sequence | None = None) -> None:
    """Tab-delimited: id, mode, predicted label, then the probability row.

    ``path`` may also be an open text stream.
    """
    n = len(predictions)
    ids = list(range(n)) if ids is None else list(ids)
    with _open_out(path) as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["id", "mode", "prediction", *map(str, predictions.support)])
        for i, lab, row in zip(ids, predictions.labels, predictions.probs.values):
            w.writerow([i, predictions.mode, lab, *(fmt(v) for v in row)])


def _open_out(path):
    if hasattr(path, "write"):
        return nullcontext(path)
    return Path(path).open("w", newline="", encoding="utf-8")


def read_predictions(path) -> PredictionSet:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    header, body = rows[0], rows[1:]
    support = tuple(header[3:])
    mode = body[0][1] if body else "fine"
    labels = np.array([r[2] for r in body], dtype=object)
    probs = np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), len(support))
    kind = {"fine": "unconditional", "conditional": "conditional", "coarse": "coarse"}[mode]
    return PredictionSet(mode, labels, ProbMatrix(probs, kind), support)


def write_confusion(path, observed, predicted, row_labels=None, col_labels=None) -> None:
    rows, cols, pct = confusion_percentages(observed, predicted, row_labels, col_labels)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["observed", *map(str, cols)])
        for lab, row in zip(rows, pct):
            w.writerow([lab, *(fmt(v) for v in row)])
