"""Finest-resolution categories, per-dataset binning functions and datasets.

A binning function maps every finest-resolution category to the label used
when annotating one dataset.  Its inverse image (the "unbin" map) gives the
set of fine categories compatible with an observed label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CategorySet",
    "BinningSpec",
    "AnnotatedDataset",
    "DatasetCollection",
    "Violation",
    "UnknownLabelError",
    "validate_binning",
    "unbin",
    "read_binning",
    "write_binning",
]


class UnknownLabelError(KeyError):
    """An observed label is not part of a dataset's label set."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class CategorySet:
    """Ordered set of finest-resolution category names.

    Position in ``names`` is the numeric encoding used by every matrix
    column in the package.
    """

    names: tuple[str, ...]

    def __init__(self, names: Iterable[str]):
        names = tuple(str(n) for n in names)
        if len(names) < 2:
            raise ValueError("a category set needs at least two categories")
        if any(n == "" for n in names):
            raise ValueError("category names must be nonempty")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate category names: {dup}")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLabelError(f"unknown fine category {name!r}") from None


@dataclass(frozen=True)
class BinningSpec:
    """Binning functions ``f_k`` for K datasets over a shared fine set.

    Parameters
    ----------
    fine : CategorySet
    per_dataset : sequence of mappings
        One mapping per dataset from fine category name to the (possibly
        coarse) label used in that dataset.
    dataset_ids : sequence of str, optional
        Display names; defaults to ``"0", "1", ...``.

    Construction is lenient about incomplete maps so that
    :func:`validate_binning` can report them; model fitting refuses
    collections with violations.
    """

    fine: CategorySet
    per_dataset: tuple[dict, ...]
    dataset_ids: tuple[str, ...]

    def __init__(
        self,
        fine: CategorySet | Sequence[str],
        per_dataset: Sequence[Mapping[str, str]],
        dataset_ids: Sequence[str] | None = None,
    ):
        if not isinstance(fine, CategorySet):
            fine = CategorySet(fine)
        maps = tuple({str(k): str(v) for k, v in m.items()} for m in per_dataset)
        if dataset_ids is None:
            dataset_ids = [str(k) for k in range(len(maps))]
        dataset_ids = tuple(str(d) for d in dataset_ids)
        if len(dataset_ids) != len(maps):
            raise ValueError(
                f"{len(dataset_ids)} dataset ids given for {len(maps)} binning maps"
            )
        object.__setattr__(self, "fine", fine)
        object.__setattr__(self, "per_dataset", maps)
        object.__setattr__(self, "dataset_ids", dataset_ids)

        labels, unbins = [], []
        for m in maps:
            g: dict[str, list[int]] = {}
            for name in fine:
                if name in m:
                    g.setdefault(m[name], []).append(fine.index(name))
            labels.append(tuple(g))
            unbins.append({j: frozenset(v) for j, v in g.items()})
        object.__setattr__(self, "_labels", tuple(labels))
        object.__setattr__(self, "_unbin", tuple(unbins))
        object.__setattr__(self, "_membership", {})

    @classmethod
    def identity(cls, fine, n_datasets: int = 1, dataset_ids=None) -> "BinningSpec":
        """Every dataset observes every category at the finest resolution."""
        if not isinstance(fine, CategorySet):
            fine = CategorySet(fine)
        return cls(fine, [{n: n for n in fine}] * n_datasets, dataset_ids)

    @property
    def n_datasets(self) -> int:
        return len(self.per_dataset)

    @property
    def n_categories(self) -> int:
        return len(self.fine)

    def labels(self, k: int) -> tuple[str, ...]:
        """Label set ``C_k``, ordered by first appearance in the fine order."""
        return self._labels[k]

    def f(self, k: int, fine_name: str) -> str:
        return self.per_dataset[k][fine_name]

    def g(self, k: int, label: str) -> frozenset[int]:
        try:
            return self._unbin[k][label]
        except KeyError:
            raise UnknownLabelError(
                f"label {label!r} is not used by dataset {self.dataset_ids[k]!r}"
            ) from None

    def is_fine_label(self, k: int, label: str) -> bool:
        return len(self.g(k, label)) == 1

    def membership(self, k: int) -> np.ndarray:
        """Boolean ``|C_k| x |C|`` matrix; row j is the indicator of g_k(j)."""
        cache = self._membership
        if k not in cache:
            labels = self.labels(k)
            M = np.zeros((len(labels), self.n_categories), dtype=bool)
            for j, lab in enumerate(labels):
                M[j, sorted(self._unbin[k][lab])] = True
            M.setflags(write=False)
            cache[k] = M
        return cache[k]

    def encode(self, k: int, y: Sequence[str]) -> np.ndarray:
        """Integer codes of labels ``y`` within ``C_k``."""
        lookup = {lab: j for j, lab in enumerate(self.labels(k))}
        codes = np.empty(len(y), dtype=np.intp)
        for i, lab in enumerate(y):
            try:
                codes[i] = lookup[lab]
            except KeyError:
                raise UnknownLabelError(
                    f"label {lab!r} (row {i}) is not used by dataset "
                    f"{self.dataset_ids[k]!r}"
                ) from None
        return codes

    def bin_mask(self, k: int, y: Sequence[str]) -> np.ndarray:
        """``n x |C|`` boolean mask whose row i marks g_k(y_i)."""
        return self.membership(k)[self.encode(k, y)]

    def subset(self, indices: Sequence[int]) -> "BinningSpec":
        return BinningSpec(
            self.fine,
            [self.per_dataset[k] for k in indices],
            [self.dataset_ids[k] for k in indices],
        )


def unbin(spec: BinningSpec, dataset_index: int, coarse_label: str) -> frozenset[int]:
    """Fine category indices compatible with ``coarse_label`` in one dataset."""
    return spec.g(dataset_index, coarse_label)


def _as_float_matrix(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AnnotatedDataset:
    """One dataset: features ``X``, batch covariates ``Z`` and labels ``y``.

    ``Z`` defaults to an ``n x 0`` matrix (no batch covariates).
    ``feature_names`` is optional metadata carried through file I/O.
    """

    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray = None
    feature_names: tuple = None

    def __post_init__(self):
        X = _as_float_matrix(self.X, "X")
        n = X.shape[0]
        y = np.asarray(self.y, dtype=object).astype(str).astype(object)
        if y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        if self.Z is None:
            Z = np.zeros((n, 0))
            Z.setflags(write=False)
        else:
            Z = _as_float_matrix(self.Z, "Z")
        if y.shape[0] != n:
            raise ValueError(f"y has {y.shape[0]} rows but X has {n}")
        if Z.shape[0] != n:
            raise ValueError(f"Z has {Z.shape[0]} rows but X has {n}")
        if self.feature_names is not None:
            names = tuple(str(f) for f in self.feature_names)
            if len(names) != X.shape[1]:
                raise ValueError(f"{len(names)} feature names for {X.shape[1]} columns")
            object.__setattr__(self, "feature_names", names)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return self.Z.shape[1]

    def replace(self, **changes) -> "AnnotatedDataset":
        fields = {"X": self.X, "y": self.y, "Z": self.Z,
                  "feature_names": self.feature_names}
        fields.update(changes)
        return AnnotatedDataset(**fields)


@dataclass(frozen=True)
class DatasetCollection:
    """K annotated datasets sharing one fine category set."""

    datasets: tuple[AnnotatedDataset, ...]
    binning: BinningSpec
    _masks: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        datasets = tuple(self.datasets)
        object.__setattr__(self, "datasets", datasets)
        if len(datasets) == 0:
            raise ValueError("a collection needs at least one dataset")
        if len(datasets) != self.binning.n_datasets:
            raise ValueError(
                f"{len(datasets)} datasets but binning describes "
                f"{self.binning.n_datasets}"
            )
        ps = {d.p for d in datasets}
        if len(ps) > 1:
            raise ValueError(f"datasets disagree on feature count p: {sorted(ps)}")
        rs = {d.r for d in datasets}
        if len(rs) > 1:
            raise ValueError(f"datasets disagree on batch covariate count r: {sorted(rs)}")

    def __len__(self) -> int:
        return len(self.datasets)

    def __iter__(self):
        return iter(self.datasets)

    def __getitem__(self, k: int) -> AnnotatedDataset:
        return self.datasets[k]

    @property
    def K(self) -> int:
        return len(self.datasets)

    @property
    def N(self) -> int:
        return sum(d.n for d in self.datasets)

    @property
    def p(self) -> int:
        return self.datasets[0].p

    @property
    def r(self) -> int:
        return self.datasets[0].r

    @property
    def categories(self) -> CategorySet:
        return self.binning.fine

    def bin_mask(self, k: int) -> np.ndarray:
        """Cached ``n_k x |C|`` mask of g_k(y_(k)i)."""
        if k not in self._masks:
            mask = self.binning.bin_mask(k, self.datasets[k].y)
            mask.setflags(write=False)
            self._masks[k] = mask
        return self._masks[k]

    def replace(self, datasets=None, binning=None) -> "DatasetCollection":
        return DatasetCollection(
            tuple(self.datasets if datasets is None else datasets),
            self.binning if binning is None else binning,
        )


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    dataset: str | None = None
    category: str | None = None

    def __str__(self):
        return self.message


def validate_binning(collection: DatasetCollection) -> list[Violation]:
    """Report every violated binning/coverage constraint; empty means valid.

    Checks that each binning map is total over the fine categories and
    only names known categories, that every observed label is a label of
    its dataset, and that every fine category is observed at least once
    under a singleton label in some dataset.
    """
    spec = collection.binning
    fine = spec.fine
    report: list[Violation] = []

    for k, m in enumerate(spec.per_dataset):
        did = spec.dataset_ids[k]
        for name in fine:
            if name not in m:
                report.append(Violation(
                    "not_total",
                    f"dataset {did!r}: fine category {name!r} has no label",
                    did, name,
                ))
        for name in m:
            if name not in fine:
                report.append(Violation(
                    "unknown_category",
                    f"dataset {did!r}: binning names unknown category {name!r}",
                    did, name,
                ))

    covered = np.zeros(len(fine), dtype=bool)
    for k, ds in enumerate(collection.datasets):
        did = spec.dataset_ids[k]
        labels = set(spec.labels(k))
        observed, counts = np.unique(ds.y, return_counts=True) if ds.n else ([], [])
        for lab, c in zip(observed, counts):
            if lab not in labels:
                report.append(Violation(
                    "unknown_label",
                    f"dataset {did!r}: observed label {lab!r} ({c} rows) "
                    "is not produced by its binning",
                    did, lab,
                ))
                continue
            members = spec.g(k, lab)
            if len(members) == 1:
                covered[next(iter(members))] = True

    for l in np.flatnonzero(~covered):
        report.append(Violation(
            "not_covered",
            f"fine category {fine.names[l]!r} is never observed at the finest "
            "resolution in any dataset",
            None, fine.names[l],
        ))
    return report


def read_binning(path) -> BinningSpec:
    """Read a tab-delimited binning table.

    The header row holds a corner cell followed by the fine category names;
    every further row holds a dataset id followed by that dataset's label
    for each fine category.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r]
    if not rows:
        raise ValueError(f"{path}: empty binning file")
    header = rows[0]
    fine = CategorySet(header[1:])
    ids, maps = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
            )
        ids.append(row[0])
        maps.append({name: lab for name, lab in zip(fine, row[1:]) if lab != ""})
    return BinningSpec(fine, maps, ids)


def write_binning(spec: BinningSpec, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["dataset", *spec.fine.names])
        for did, m in zip(spec.dataset_ids, spec.per_dataset):
            w.writerow([did, *(m.get(n, "") for n in spec.fine)])
