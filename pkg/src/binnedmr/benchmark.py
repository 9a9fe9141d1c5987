"""Replicated simulation benchmark: methods x scenarios x seeds.

Each replicate simulates one data set, tunes every requested method on its
validation split and scores the selected model on the test split with the
fine-prediction error rate and the KL and Hellinger distances to the true
test probabilities.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._tsv import ParseError
from .baselines import METHODS, run_method
from .io import read_table, write_table
from .metrics import error_rate, hellinger_distance, kl_divergence, predict_fine
from .path import DEFAULT_RHOS
from .simulation import CATEGORIES, SimConfig, simulate

__all__ = [
    "Scenario",
    "BenchmarkSettings",
    "run_replicate",
    "run_benchmark",
    "summarize",
    "read_scenarios",
    "write_long_table",
    "read_long_table",
    "write_summary_table",
    "read_summary_table",
    "LONG_COLUMNS",
    "SUMMARY_COLUMNS",
]

logger = logging.getLogger(__name__)

SCENARIO_KEYS = ("N", "p", "s", "b")
LONG_COLUMNS = (*SCENARIO_KEYS, "method", "replicate", "seed", "lambda", "rho",
                "kl", "hellinger", "error_rate", "status")
SUMMARY_COLUMNS = (*SCENARIO_KEYS, "method", "n_ok", "n_failed",
                   "kl_mean", "kl_se", "hellinger_mean", "hellinger_se",
                   "error_rate_mean", "error_rate_se")
METRICS = ("kl", "hellinger", "error_rate")


@dataclass(frozen=True)
class Scenario:
    N: int = 4800
    p: int = 500
    s: int = 40
    b: float = 0.1

    def config(self, seed: int, **extra) -> SimConfig:
        return SimConfig(N=self.N, p=self.p, s=self.s, b=self.b, seed=seed, **extra)


@dataclass(frozen=True)
class BenchmarkSettings:
    n_lambda: int = 25
    lambda_min_ratio: float = 1e-3
    rhos: tuple = DEFAULT_RHOS
    patience: int | None = None
    test_n: int = 10_000


def run_replicate(scenario: Scenario, methods: Sequence[str], seed: int,
                  replicate: int = 0, settings: BenchmarkSettings = BenchmarkSettings()):
    """Simulate once and score every method; failures become NaN rows."""
    sim = simulate(scenario.config(seed, test_n=settings.test_n))
    truth = sim.truth
    rows = []
    for name in methods:
        row = {**asdict(scenario), "method": name, "replicate": replicate, "seed": seed}
        try:
            mf = run_method(name, sim.train, sim.validation, truth,
                            n_lambda=settings.n_lambda,
                            lambda_min_ratio=settings.lambda_min_ratio,
                            rhos=settings.rhos, patience=settings.patience)
            pred = predict_fine(mf.coeffs, sim.test.X, CATEGORIES)
            P = pred.probs.values
            row.update({
                "lambda": float(mf.selected[0]), "rho": float(mf.selected[1]),
                "kl": kl_divergence(truth.test_probs, P),
                "hellinger": hellinger_distance(truth.test_probs, P),
                "error_rate": error_rate(pred, sim.test.y),
                "status": "ok",
            })
        except Exception as exc:  # a failed replicate is reported, not fatal
            logger.warning("%s failed on seed %d: %s", name, seed, exc)
            row.update({"lambda": math.nan, "rho": math.nan, "kl": math.nan,
                        "hellinger": math.nan, "error_rate": math.nan,
                        "status": f"failed: {type(exc).__name__}: {exc}".replace("\t", " ")
                        .replace("\n", " ")})
        rows.append(row)
    return rows


def _job(args):
    return run_replicate(*args)


def run_benchmark(scenarios: Iterable[Scenario], methods: Sequence[str],
                  replicates: int, seed: int = 1,
                  settings: BenchmarkSettings = BenchmarkSettings(),
                  threads: int = 1) -> list[dict]:
    """Long-format records; replicate ``i`` of every scenario uses ``seed + i``."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    jobs = [(sc, tuple(methods), seed + i, i, settings)
            for sc in scenarios for i in range(replicates)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_job, jobs))
    else:
        chunks = [_job(j) for j in jobs]
    return [row for chunk in chunks for row in chunk]


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    mean = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else math.nan
    return mean, se


def summarize(records: Sequence[dict]) -> list[dict]:
    """Per scenario and method: mean and standard error of each metric.

    Failed replicates are left out of the means and counted in ``n_failed``.
    """
    groups: dict = {}
    for rec in records:
        key = (*(rec[k] for k in SCENARIO_KEYS), rec["method"])
        groups.setdefault(key, []).append(rec)
    out = []
    for key, recs in groups.items():
        ok = [r for r in recs if r["status"] == "ok"]
        row = dict(zip((*SCENARIO_KEYS, "method"), key))
        row["n_ok"] = len(ok)
        row["n_failed"] = len(recs) - len(ok)
        for m in METRICS:
            row[f"{m}_mean"], row[f"{m}_se"] = _mean_se([r[m] for r in ok])
        out.append(row)
    return out


_SCENARIO_TYPES = {f.name: f.type for f in fields(Scenario)}


def read_scenarios(path) -> list[Scenario]:
    """Tab-delimited scenarios: a header naming any of N, p, s, b."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter="\t") if r]
    if not rows:
        raise ParseError(path, 1, "empty scenario file")
    header = rows[0]
    bad = [h for h in header if h not in _SCENARIO_TYPES]
    if bad:
        raise ParseError(path, 1, f"unknown scenario columns {bad}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(header):
            raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
        kw = {}
        for h, v in zip(header, row):
            try:
                kw[h] = float(v) if _SCENARIO_TYPES[h] in (float, "float") else int(v)
            except ValueError:
                raise ParseError(path, lineno, f"bad value {v!r} for {h}") from None
        out.append(Scenario(**kw))
    return out


_LONG_TYPES = {"N": int, "p": int, "s": int, "b": float, "replicate": int, "seed": int,
               "lambda": float, "rho": float, "kl": float, "hellinger": float,
               "error_rate": float}
_SUMMARY_TYPES = {"N": int, "p": int, "s": int, "b": float, "n_ok": int, "n_failed": int,
                  **{f"{m}_{s}": float for m in METRICS for s in ("mean", "se")}}


def write_long_table(records, path) -> None:
    write_table(path, records, LONG_COLUMNS)


def read_long_table(path) -> list[dict]:
    return read_table(path, _LONG_TYPES)


def write_summary_table(summary, path) -> None:
    write_table(path, summary, SUMMARY_COLUMNS)


def read_summary_table(path) -> list[dict]:
    return read_table(path, _SUMMARY_TYPES)
