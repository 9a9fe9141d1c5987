"""Competing estimators as data transformations over the one solver.

``IBMR-int``      batch intercept (z = 1) for every dataset
``IBMR-NG``       no batch term
``subset``        only observations whose label is already fine
``relabel``       subset fit, then refit on conditional-argmax labels
``IBMR-int-ORC``  IBMR-int on the true fine labels (simulation only)
``GL-ORC``        group lasso on the true fine labels (simulation only)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .binning import AnnotatedDataset, BinningSpec, DatasetCollection, validate_binning
from .likelihood import Coefficients, _masked_softmax, linear_predictor
from .path import DEFAULT_RHOS, PathResult, build_grid, fit_path
from .solver import SolverConfig

__all__ = [
    "METHODS",
    "ORACLE_METHODS",
    "MethodSpec",
    "CoverageError",
    "make_ibmr_int",
    "make_ibmr_ng",
    "make_subset",
    "make_relabel",
    "make_oracle",
    "MethodFit",
    "run_method",
]


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    name: str
    transform: str
    oracle: bool = False


METHODS = {
    "IBMR-int": MethodSpec("IBMR-int", "intercept"),
    "IBMR-NG": MethodSpec("IBMR-NG", "no_gamma"),
    "subset": MethodSpec("subset", "subset"),
    "relabel": MethodSpec("relabel", "relabel"),
    "IBMR-int-ORC": MethodSpec("IBMR-int-ORC", "oracle_intercept", oracle=True),
    "GL-ORC": MethodSpec("GL-ORC", "oracle_no_gamma", oracle=True),
}
ORACLE_METHODS = tuple(n for n, m in METHODS.items() if m.oracle)


def make_ibmr_int(collection: DatasetCollection) -> DatasetCollection:
    """Replace every batch covariate matrix by a column of ones."""
    return collection.replace(
        datasets=[ds.replace(Z=np.ones((ds.n, 1))) for ds in collection]
    )


def make_ibmr_ng(collection: DatasetCollection) -> DatasetCollection:
    """Drop batch covariates entirely."""
    return collection.replace(datasets=[ds.replace(Z=None) for ds in collection])


def _fine_binning(spec: BinningSpec) -> BinningSpec:
    return BinningSpec.identity(spec.fine, spec.n_datasets, spec.dataset_ids)


def make_subset(collection: DatasetCollection) -> DatasetCollection:
    """Keep only fine-labelled rows, relabelled with their fine category.

    The likelihood of the result is scaled by the retained count, and no
    batch term is fitted.
    """
    spec = collection.binning
    names = spec.fine.names
    out = []
    retained = np.zeros(len(names), dtype=bool)
    for k, ds in enumerate(collection):
        mask = collection.bin_mask(k)
        keep = mask.sum(axis=1) == 1
        fine_idx = np.argmax(mask[keep], axis=1)
        retained[fine_idx] = True
        y = np.asarray(names, dtype=object)[fine_idx]
        out.append(AnnotatedDataset(ds.X[keep], y, None))
    if not retained.any():
        raise CoverageError("no fine-labelled observations to subset")
    if not retained.all():
        missing = [names[l] for l in np.flatnonzero(~retained)]
        raise CoverageError(
            f"categories never observed at the finest resolution: {missing}"
        )
    return DatasetCollection(out, _fine_binning(spec))


def relabel_targets(collection: DatasetCollection, coeffs: Coefficients) -> list:
    """Conditional-argmax fine labels under ``coeffs`` with the batch term off."""
    names = np.asarray(collection.categories.names, dtype=object)
    nb = coeffs.without_batch()
    labels = []
    for k, ds in enumerate(collection):
        eta = linear_predictor(nb, ds.X)
        labels.append(names[np.argmax(_masked_softmax(eta, collection.bin_mask(k)), axis=1)])
    return labels


def make_relabel(collection: DatasetCollection, subset_fit: Coefficients) -> DatasetCollection:
    """All rows, relabelled by the subset fit, every label fine, no batch term."""
    labels = relabel_targets(collection, subset_fit)
    datasets = [AnnotatedDataset(ds.X, y, None) for ds, y in zip(collection, labels)]
    return DatasetCollection(datasets, _fine_binning(collection.binning))


def make_oracle(collection: DatasetCollection, truth, variant: str,
                split: str = "train") -> DatasetCollection:
    """Swap every label for the true fine label.

    ``truth`` is a :class:`~binnedmr.simulation.SimTruth` (``split`` picks
    its training or validation labels) or a sequence of fine-label arrays.
    """
    if truth is None:
        raise ValueError("oracle methods need the simulation truth")
    if variant not in ORACLE_METHODS:
        raise ValueError(f"unknown oracle variant {variant!r}")
    if isinstance(truth, Sequence):
        fine = list(truth)
    else:
        fine = truth.train_fine_labels if split == "train" else truth.validation_fine_labels
    if len(fine) != collection.K:
        raise ValueError(f"{len(fine)} label vectors for {collection.K} datasets")
    datasets = []
    for ds, y in zip(collection, fine):
        Z = np.ones((ds.n, 1)) if variant == "IBMR-int-ORC" else None
        datasets.append(AnnotatedDataset(ds.X, y, Z))
    return DatasetCollection(datasets, _fine_binning(collection.binning))


@dataclass
class MethodFit:
    name: str
    coeffs: Coefficients
    path: PathResult
    stages: list = field(default_factory=list)

    @property
    def selected(self):
        return self.path.selected


def _transform(name: str, collection: DatasetCollection, truth, split: str):
    if name == "IBMR-int":
        return make_ibmr_int(collection)
    if name in ("IBMR-NG", "relabel"):
        return make_ibmr_ng(collection)
    if name == "subset":
        return make_subset(collection)
    if name in ORACLE_METHODS:
        return make_oracle(collection, truth, name, split)
    raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}")


def _path(train, validation, n_lambda, lambda_min_ratio, rhos, config, patience):
    rhos = tuple(rhos) if train.r > 0 else (min(rhos),)
    grid = build_grid(train, n_lambda, lambda_min_ratio, rhos)
    return fit_path(train, validation, grid, config, patience)


def run_method(
    name: str,
    train: DatasetCollection,
    validation: DatasetCollection,
    truth=None,
    n_lambda: int = 25,
    lambda_min_ratio: float = 1e-3,
    rhos=DEFAULT_RHOS,
    config: SolverConfig | None = None,
    patience: int | None = None,
) -> MethodFit:
    """Tune and fit one method; returns the validation-selected coefficients.

    Every method is tuned on the same validation data (coarse labels, batch
    term off), except the oracles, which see the true fine validation labels.
    ``patience`` is passed to :func:`~binnedmr.path.fit_path`.
    """
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}")
    val = validation
    if name in ORACLE_METHODS:
        val = make_oracle(validation, truth, "GL-ORC", split="validation")
    if name == "relabel":
        first = _path(make_subset(train), val, n_lambda, lambda_min_ratio, rhos, config, patience)
        relabelled = make_relabel(train, first.best.coeffs)
        second = _path(relabelled, val, n_lambda, lambda_min_ratio, rhos, config, patience)
        return MethodFit(name, second.best.coeffs, second, stages=[first, second])
    data = _transform(name, train, truth, "train")
    violations = validate_binning(data)
    if violations:
        raise CoverageError("; ".join(map(str, violations)))
    res = _path(data, val, n_lambda, lambda_min_ratio, rhos, config, patience)
    return MethodFit(name, res.best.coeffs, res, stages=[res])
