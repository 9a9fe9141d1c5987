"""scikit-learn style front end to the binned multinomial solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .baselines import make_ibmr_int, make_ibmr_ng
from .binning import AnnotatedDataset, BinningSpec, DatasetCollection
from .metrics import ObservedTestLabelSet, predict_coarse, predict_conditional, predict_fine
from .path import DEFAULT_RHOS, build_grid, fit_path
from .solver import SolverConfig, fit

__all__ = ["BinnedMultinomialRegression", "split_by_group"]

_BATCH_MODES = ("intercept", "none", "covariates")


def split_by_group(X, y, groups, binning: BinningSpec, Z=None) -> DatasetCollection:
    """Stack-form data to a :class:`DatasetCollection`.

    ``groups[i]`` names the dataset of row ``i``: either one of
    ``binning.dataset_ids`` or an integer position.  Datasets appear in
    binning order; every one must have at least one row.
    """
    X = check_array(X, dtype=float)
    y = np.asarray(y, dtype=object)
    groups = np.asarray(groups)
    if y.shape != (X.shape[0],) or groups.shape != (X.shape[0],):
        raise ValueError("y and groups must be 1-d with one entry per row of X")
    if Z is not None:
        Z = check_array(Z, dtype=float, ensure_min_features=0)
        if Z.shape[0] != X.shape[0]:
            raise ValueError("Z must have one row per row of X")
    ids = list(binning.dataset_ids)
    pos = {str(d): k for k, d in enumerate(ids)}
    datasets = []
    for k, did in enumerate(ids):
        if groups.dtype.kind in "iu":
            rows = np.flatnonzero(groups == k)
        else:
            rows = np.flatnonzero(groups.astype(str) == str(did))
        if rows.size == 0:
            raise ValueError(f"dataset {did!r} has no rows")
        datasets.append(AnnotatedDataset(X[rows], y[rows], None if Z is None else Z[rows]))
    known = set(range(len(ids))) if groups.dtype.kind in "iu" else set(pos)
    extra = set(groups.tolist() if groups.dtype.kind in "iu" else groups.astype(str).tolist()) - known
    if extra:
        raise ValueError(f"groups not in the binning: {sorted(map(str, extra))[:5]}")
    return DatasetCollection(datasets, binning)


class BinnedMultinomialRegression(ClassifierMixin, BaseEstimator):
    """Group-lasso multinomial regression trained on binned (coarse) labels.

    Parameters
    ----------
    lam : float or None
        Group-lasso weight.  ``None`` tunes (lam, rho) over a path on the
        ``validation`` data passed to :meth:`fit`.
    rho : float
        Ridge weight on the batch coefficients (ignored when tuning).
    batch : {"intercept", "none", "covariates"}
        Batch term: a per-dataset intercept, none, or the ``Z`` passed to
        :meth:`fit`.
    n_lambda, lambda_min_ratio, rhos, patience
        Path settings, used only when ``lam`` is None.
    max_iter, tol
        Solver controls.

    Attributes
    ----------
    classes_ : ndarray of str
        Fine categories in canonical order.
    coef_ : ndarray of shape (n_features, n_classes)
    intercept_ : ndarray of shape (n_classes,)
    gamma_ : list of ndarray
        Batch coefficients per training dataset (empty for ``batch="none"``).
    lam_, rho_ : float
        Penalty weights of the returned model.
    """

    def __init__(self, lam=None, rho=0.1, batch="intercept", n_lambda=25,
                 lambda_min_ratio=1e-3, rhos=DEFAULT_RHOS, patience=None,
                 max_iter=2000, tol=1e-8):
        self.lam = lam
        self.rho = rho
        self.batch = batch
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.rhos = rhos
        self.patience = patience
        self.max_iter = max_iter
        self.tol = tol

    def _prepare(self, coll: DatasetCollection) -> DatasetCollection:
        if self.batch == "intercept":
            return make_ibmr_int(coll)
        if self.batch == "none":
            return make_ibmr_ng(coll)
        if coll.r == 0:
            raise ValueError('batch="covariates" needs Z')
        return coll

    def fit(self, X, y, *, groups, binning: BinningSpec, Z=None, validation=None):
        """Fit on stacked data.

        ``validation`` is ``(X_val, y_val, groups_val, binning_val)`` and is
        required when ``lam`` is None.
        """
        if self.batch not in _BATCH_MODES:
            raise ValueError(f"batch must be one of {_BATCH_MODES}, got {self.batch!r}")
        train = self._prepare(split_by_group(X, y, groups, binning, Z))
        cfg = SolverConfig(max_iter=self.max_iter, tol=self.tol)
        self.path_result_ = None
        if self.lam is None:
            if validation is None:
                raise ValueError("lam=None tunes on validation data; pass validation=")
            Xv, yv, gv, bv = validation
            val = split_by_group(Xv, yv, gv, bv)
            rhos = tuple(self.rhos) if train.r else (min(self.rhos),)
            grid = build_grid(train, self.n_lambda, self.lambda_min_ratio, rhos)
            self.path_result_ = fit_path(train, val, grid, cfg, self.patience)
            self.fit_result_ = self.path_result_.best
        else:
            self.fit_result_ = fit(train, cfg.replace(lam=float(self.lam), rho=float(self.rho)))
        c = self.fit_result_.coeffs
        self.coefficients_ = c
        self.coef_ = c.beta
        self.intercept_ = c.alpha
        self.gamma_ = list(c.gamma)
        self.lam_ = self.fit_result_.lam
        self.rho_ = self.fit_result_.rho
        self.classes_ = np.asarray(binning.fine.names, dtype=object)
        self.categories_ = binning.fine
        self.n_features_in_ = train.p
        return self

    def _X(self, X):
        check_is_fitted(self, "coefficients_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        """Fine-category probabilities with the batch term off."""
        X = self._X(X)
        return predict_fine(self.coefficients_, X, self.categories_).probs.values

    def predict(self, X):
        X = self._X(X)
        return predict_fine(self.coefficients_, X, self.categories_).labels

    def predict_conditional(self, X, y_observed, binning: BinningSpec, dataset_index=0):
        """Most probable fine category inside each row's observed bin."""
        X = self._X(X)
        return predict_conditional(self.coefficients_, X, y_observed,
                                   binning, dataset_index).labels

    def predict_coarse(self, X, binning: BinningSpec, observed_labels=None, dataset_index=0):
        """Most probable label among ``observed_labels`` after bin-summing.

        ``observed_labels`` defaults to every label of the test binning.
        """
        X = self._X(X)
        labels = (binning.labels(dataset_index) if observed_labels is None
                  else list(observed_labels))
        obs = ObservedTestLabelSet(tuple(labels))
        return predict_coarse(self.coefficients_, X, binning, obs,
                              dataset_index).labels
