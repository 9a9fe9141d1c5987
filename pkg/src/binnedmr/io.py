"""Dataset directories, model files and benchmark tables on disk.

A dataset directory holds ``X.tsv`` (header of feature names, one row per
observation), ``y.tsv`` (one label per line) and optionally ``Z.tsv``
(header plus one row of batch covariates per observation).

Model files are plain text: a versioned ``key = value`` header followed by
named matrix blocks and a closing ``end`` line.  Every float is written with
17 significant digits so that a reload is bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._tsv import ParseError, fmt, read_lines, read_matrix, write_lines, write_matrix
from .binning import AnnotatedDataset, CategorySet
from .likelihood import Coefficients, DimensionError

__all__ = [
    "FORMAT_VERSION",
    "ParseError",
    "ModelArtifact",
    "load_dataset",
    "save_dataset",
    "save_model",
    "load_model",
    "write_table",
    "read_table",
]

FORMAT_VERSION = 1
_MAGIC = "# binnedmr model"


def load_dataset(directory, batch: str = "file") -> AnnotatedDataset:
    """Read one dataset directory.

    ``batch`` controls the batch covariates: ``"file"`` uses ``Z.tsv`` when
    present and otherwise none, ``"intercept"`` falls back to a column of
    ones when ``Z.tsv`` is missing, and ``"none"`` ignores ``Z.tsv``.
    """
    if batch not in ("file", "intercept", "none"):
        raise ValueError(f"unknown batch mode {batch!r}")
    d = Path(directory)
    xpath, ypath, zpath = d / "X.tsv", d / "y.tsv", d / "Z.tsv"
    for f in (xpath, ypath):
        if not f.is_file():
            raise ParseError(f, None, "file not found")
    names, X = read_matrix(xpath, header=True)
    y = read_lines(ypath)
    n = X.shape[0]
    if len(y) != n:
        # the first line that lacks a partner, counted in y.tsv
        line = min(len(y), n) + 1
        raise ParseError(ypath, line, f"{len(y)} labels for {n} rows of X.tsv")
    for i, lab in enumerate(y, 1):
        if lab == "" or "\t" in lab:
            raise ParseError(ypath, i, "labels must be nonempty and contain no tabs")
    Z = None
    if batch != "none" and zpath.is_file():
        _, Z = read_matrix(zpath, header=True)
        if Z.shape[0] != n:
            raise ParseError(zpath, min(Z.shape[0], n) + 2,
                             f"{Z.shape[0]} rows for {n} rows of X.tsv")
    elif batch == "intercept":
        Z = np.ones((n, 1))
    if not np.all(np.isfinite(X)):
        i, _ = np.argwhere(~np.isfinite(X))[0]
        raise ParseError(xpath, int(i) + 2, "non-finite value")
    return AnnotatedDataset(X, np.asarray(y, dtype=object), Z, tuple(names))


def save_dataset(dataset: AnnotatedDataset, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = dataset.feature_names or tuple(f"x{j + 1}" for j in range(dataset.p))
    write_matrix(d / "X.tsv", dataset.X.reshape(dataset.n, dataset.p), names)
    write_lines(d / "y.tsv", dataset.y)
    if dataset.r:
        write_matrix(d / "Z.tsv", dataset.Z, [f"z{j + 1}" for j in range(dataset.r)])


@dataclass
class ModelArtifact:
    """Everything needed to predict with a fitted model."""

    categories: CategorySet
    coeffs: Coefficients
    lam: float = float("nan")
    rho: float = float("nan")
    feature_names: tuple = None
    feature_sds: np.ndarray = None
    method: str = ""
    version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        C, p = len(self.categories), self.coeffs.p
        if self.coeffs.n_categories != C:
            raise DimensionError(
                f"coefficients have {self.coeffs.n_categories} categories, expected {C}"
            )
        if self.feature_names is None:
            self.feature_names = tuple(f"x{j + 1}" for j in range(p))
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != p:
            raise DimensionError(f"{len(self.feature_names)} feature names for p={p}")
        if self.feature_sds is not None:
            self.feature_sds = np.asarray(self.feature_sds, dtype=float)
            if self.feature_sds.shape != (p,):
                raise DimensionError(f"feature_sds must have shape ({p},)")


def _check_token(s: str, what: str):
    if s == "" or any(c in s for c in "\t\n\r"):
        raise ValueError(f"{what} {s!r} cannot be stored (empty or has tab/newline)")


def save_model(artifact: ModelArtifact, path) -> None:
    for name in artifact.categories:
        _check_token(name, "category")
    for name in artifact.feature_names:
        _check_token(name, "feature name")
    c = artifact.coeffs
    lines = [
        _MAGIC,
        f"format_version = {FORMAT_VERSION}",
        f"method = {artifact.method}",
        f"n_categories = {c.n_categories}",
        f"p = {c.p}",
        f"r = {c.r}",
        f"n_gamma = {len(c.gamma)}",
        f"lambda = {fmt(artifact.lam)}",
        f"rho = {fmt(artifact.rho)}",
        f"has_feature_sds = {int(artifact.feature_sds is not None)}",
    ]
    for k, v in sorted(artifact.extra.items()):
        lines.append(f"extra.{k} = {v}")

    def block(name, rows):
        lines.append(f"[{name}]")
        lines.extend(rows)

    block("categories", list(artifact.categories.names))
    block("features", list(artifact.feature_names))
    if artifact.feature_sds is not None:
        block("feature_sds", [fmt(v) for v in artifact.feature_sds])
    block("alpha", ["\t".join(fmt(v) for v in c.alpha)])
    block("beta", ["\t".join(fmt(v) for v in row) for row in c.beta])
    for k, g in enumerate(c.gamma):
        block(f"gamma {k}", ["\t".join(fmt(v) for v in row) for row in g])
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _Reader:
    def __init__(self, path):
        self.path = Path(path)
        try:
            self.lines = self.path.read_text(encoding="utf-8").split("\n")
        except UnicodeDecodeError as exc:
            raise ParseError(self.path, None, f"not a text file: {exc}") from None
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.i = 0

    def error(self, msg, line=None):
        return ParseError(self.path, self.i if line is None else line, msg)

    def next(self, what):
        if self.i >= len(self.lines):
            raise self.error(f"unexpected end of file while reading {what}",
                             len(self.lines) + 1)
        self.i += 1
        return self.lines[self.i - 1]

    def expect(self, text):
        got = self.next(text)
        if got != text:
            raise self.error(f"expected {text!r}, got {got!r}")

    def floats(self, width, what):
        row = self.next(what).split("\t")
        if len(row) != width:
            raise self.error(f"{what}: expected {width} values, got {len(row)}")
        try:
            return [float(v) for v in row]
        except ValueError:
            raise self.error(f"{what}: non-numeric value") from None


def load_model(path) -> ModelArtifact:
    """Inverse of :func:`save_model`; malformed input raises :class:`ParseError`."""
    rd = _Reader(path)
    if rd.next("header") != _MAGIC:
        raise rd.error("not a binnedmr model file")
    header = {}
    while rd.i < len(rd.lines) and not rd.lines[rd.i].startswith("["):
        line = rd.next("header")
        if " = " not in line:
            raise rd.error(f"malformed header line {line!r}")
        key, value = line.split(" = ", 1)
        header[key] = value
    try:
        version = int(header["format_version"])
    except (KeyError, ValueError):
        raise rd.error("missing or invalid format_version", 2) from None
    if version != FORMAT_VERSION:
        raise rd.error(f"unsupported format version {version} (expected {FORMAT_VERSION})", 2)
    try:
        C, p, r = int(header["n_categories"]), int(header["p"]), int(header["r"])
        n_gamma = int(header["n_gamma"])
        lam, rho = float(header["lambda"]), float(header["rho"])
        has_sds = bool(int(header["has_feature_sds"]))
    except KeyError as exc:
        raise rd.error(f"header is missing {exc.args[0]!r}") from None
    except ValueError as exc:
        raise rd.error(f"bad header value: {exc}") from None
    if min(C, p, r, n_gamma) < 0 or C == 0:
        raise rd.error("header dimensions out of range")
    extra = {k[6:]: v for k, v in header.items() if k.startswith("extra.")}

    rd.expect("[categories]")
    cats = [rd.next("categories") for _ in range(C)]
    rd.expect("[features]")
    feats = [rd.next("features") for _ in range(p)]
    sds = None
    if has_sds:
        rd.expect("[feature_sds]")
        sds = np.array([rd.floats(1, "feature_sds")[0] for _ in range(p)])
    rd.expect("[alpha]")
    alpha = np.array(rd.floats(C, "alpha"))
    rd.expect("[beta]")
    beta = np.array([rd.floats(C, "beta") for _ in range(p)]).reshape(p, C)
    gamma = []
    for k in range(n_gamma):
        rd.expect(f"[gamma {k}]")
        gamma.append(np.array([rd.floats(C, f"gamma {k}") for _ in range(r)]).reshape(r, C))
    rd.expect("end")
    if rd.i != len(rd.lines):
        raise rd.error("trailing content after 'end'", rd.i + 1)
    try:
        return ModelArtifact(
            categories=CategorySet(cats),
            coeffs=Coefficients(alpha, beta, tuple(gamma)),
            lam=lam, rho=rho, feature_names=tuple(feats), feature_sds=sds,
            method=header.get("method", ""), version=version, extra=extra,
        )
    except ValueError as exc:
        raise rd.error(f"inconsistent model: {exc}") from None


def write_table(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    """Tab-delimited table; floats get 17 significant digits."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v
                        for v in (row[c] for c in columns)])


def read_table(path, types: dict | None = None) -> list[dict]:
    """Read :func:`write_table` output; ``types`` maps columns to converters."""
    types = types or {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        out = []
        for lineno, row in enumerate(reader, 2):
            try:
                out.append({k: types.get(k, str)(v) for k, v in row.items()})
            except (TypeError, ValueError) as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return out
