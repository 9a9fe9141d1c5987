"""Small helpers for tab-delimited numeric text."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class ParseError(ValueError):
    """Malformed input file; ``path`` and ``line`` locate the problem."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {message}")


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    return format(float(x), ".17g")


def write_matrix(path, M, header=None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in M:
            w.writerow([fmt(v) for v in row])


def read_matrix(path, header=True):
    """Read a numeric TSV; returns ``(header or None, matrix)``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    names = None
    start = 1
    if header:
        if not rows:
            raise ParseError(path, 1, "missing header row")
        names = rows[0]
        rows = rows[1:]
        start = 2
    width = len(names) if names is not None else (len(rows[0]) if rows else 0)
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        lineno = i + start
        if len(row) != width:
            raise ParseError(path, lineno, f"expected {width} fields, got {len(row)}")
        try:
            out[i] = [float(v) for v in row]
        except ValueError:
            bad = next(v for v in row if not _is_float(v))
            raise ParseError(path, lineno, f"non-numeric value {bad!r}") from None
    return names, out


def _is_float(v) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def write_lines(path, values) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for v in values:
            fh.write(f"{v}\n")


def read_lines(path) -> list[str]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [l.rstrip("\r") for l in lines]
