"""Command-line interface: fit, path, predict, simulate, benchmark.

Exit codes: 0 success, 2 usage error, 3 data or validation error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as bio
from ._tsv import ParseError, read_lines, read_matrix, write_matrix
from .baselines import METHODS, CoverageError, make_ibmr_int, make_ibmr_ng, make_subset
from .benchmark import (BenchmarkSettings, read_scenarios, run_benchmark, summarize,
                        write_long_table, write_summary_table)
from .binning import (BinningSpec, DatasetCollection, UnknownLabelError, read_binning,
                      write_binning)
from .likelihood import DimensionError
from .metrics import (ObservedTestLabelSet, predict_coarse, predict_conditional,
                      predict_fine, write_predictions)
from .path import DEFAULT_RHOS, PathError, build_grid, fit_path, write_path_report
from .simulation import SimConfig, read_sim_config, simulate, write_sim_config
from .solver import InvalidCollectionError, NumericalError, SolverConfig, fit

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
FIT_METHODS = ("IBMR-int", "IBMR-NG", "subset")

logger = logging.getLogger("binnedmr")


class UsageError(Exception):
    pass


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS threads and benchmark worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--train", nargs="+", required=True, metavar="DIR",
                      help="training dataset directories")
    data.add_argument("--binning", required=True,
                      help="binning table with one row per dataset directory")
    data.add_argument("--method", default="IBMR-int", choices=FIT_METHODS)
    data.add_argument("--subsample", type=int, default=None, metavar="N",
                      help="keep at most N rows per training dataset")
    data.add_argument("--weights", default=None, metavar="FILE",
                      help="sampling weights for --subsample, one per training row")
    data.add_argument("--seed", type=int, default=0, help="seed for --subsample")
    data.add_argument("--max-iter", type=int, default=2000)
    data.add_argument("--tol", type=float, default=1e-8)
    data.add_argument("--out", required=True, metavar="DIR")

    p = argparse.ArgumentParser(prog="binnedmr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[common, data], help="fit at fixed (lambda, rho)")
    f.add_argument("--lambda", dest="lam", type=float, required=True)
    f.add_argument("--rho", type=float, default=0.1)

    pa = sub.add_parser("path", parents=[common, data], help="tune over a (lambda, rho) grid")
    pa.add_argument("--validation", nargs="+", required=True, metavar="DIR")
    pa.add_argument("--n-lambda", type=int, default=25)
    pa.add_argument("--lambda-min-ratio", type=float, default=1e-3)
    pa.add_argument("--rhos", type=_floats, default=DEFAULT_RHOS)
    pa.add_argument("--patience", type=int, default=None)

    pr = sub.add_parser("predict", parents=[common], help="predict with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True, metavar="DIR")
    pr.add_argument("--mode", choices=("fine", "conditional", "coarse"), default="fine")
    pr.add_argument("--binning", default=None,
                    help="test binning table (conditional and coarse modes)")
    pr.add_argument("--dataset", default=None,
                    help="dataset id in the test binning (default: first row)")
    pr.add_argument("--observed-labels", default=None, metavar="FILE",
                    help="coarse mode: labels to predict among (default: labels in y.tsv)")
    pr.add_argument("--out", default="-", help="output file (default: stdout)")

    si = sub.add_parser("simulate", parents=[common], help="write one simulated data set")
    si.add_argument("--config", default=None, help="key = value file of SimConfig fields")
    si.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    si.add_argument("--out", required=True, metavar="DIR")

    be = sub.add_parser("benchmark", parents=[common], help="replicated simulation study")
    be.add_argument("--scenarios", required=True)
    be.add_argument("--replicates", type=int, required=True)
    be.add_argument("--seed", type=int, default=1)
    be.add_argument("--methods", default="IBMR-int,IBMR-NG,relabel,subset")
    be.add_argument("--n-lambda", type=int, default=25)
    be.add_argument("--lambda-min-ratio", type=float, default=1e-3)
    be.add_argument("--rhos", type=_floats, default=DEFAULT_RHOS)
    be.add_argument("--patience", type=int, default=None)
    be.add_argument("--test-n", type=int, default=10_000)
    be.add_argument("--out", required=True, metavar="DIR")
    return p


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _binning_for(spec: BinningSpec, dirs) -> BinningSpec:
    """Rows of ``spec`` for ``dirs``: matched by directory name, else by position."""
    names = [Path(d).name for d in dirs]
    ids = list(spec.dataset_ids)
    if all(n in ids for n in names):
        return spec.subset([ids.index(n) for n in names])
    if len(ids) != len(dirs):
        raise UsageError(
            f"binning ids do not match the directory names and its {len(ids)} rows "
            f"do not match the {len(dirs)} dataset directories")
    return spec


def _load_collections(args, validation_dirs=()):
    spec = read_binning(args.binning)
    dirs = list(args.train) + list(validation_dirs)
    full = _binning_for(spec, dirs)
    mode = "intercept" if args.method == "IBMR-int" else "none"
    datasets = [bio.load_dataset(d, batch=mode) for d in dirs]
    K = len(args.train)
    train_ds = datasets[:K]
    if args.subsample is not None:
        train_ds = _subsample(train_ds, args.subsample, args.weights, args.seed)
    train = DatasetCollection(train_ds, full.subset(range(K)))
    val = None
    if validation_dirs:
        val = make_ibmr_ng(DatasetCollection(datasets[K:], full.subset(range(K, len(dirs)))))
    if args.method == "IBMR-int":
        train = make_ibmr_int(train)
    elif args.method == "IBMR-NG":
        train = make_ibmr_ng(train)
    else:
        train = make_subset(train)
    return train, val, [d.feature_names for d in datasets]


def _subsample(datasets, n, weights_path, seed):
    if n < 1:
        raise UsageError("--subsample must be positive")
    rng = np.random.default_rng(seed)
    weights = None
    if weights_path is not None:
        _, w = read_matrix(weights_path, header=False)
        weights = w.ravel()
        total = sum(d.n for d in datasets)
        if weights.size != total or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ParseError(weights_path, None,
                             f"need {total} nonnegative weights, one per training row")
    out, start = [], 0
    for d in datasets:
        prob = None
        if weights is not None:
            w = weights[start:start + d.n]
            if w.sum() <= 0:
                raise ParseError(weights_path, None, "a dataset has all-zero weights")
            prob = w / w.sum()
            k = min(n, int(np.count_nonzero(w)))
        else:
            k = min(n, d.n)
        start += d.n
        rows = np.sort(rng.choice(d.n, size=k, replace=False, p=prob))
        out.append(d.replace(X=d.X[rows], y=d.y[rows], Z=d.Z[rows]))
    return out


def _feature_sds(train: DatasetCollection):
    X = np.vstack([d.X for d in train])
    sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    return np.where(sd > 0, sd, 1.0)


def _save(train, res, names, method, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    art = bio.ModelArtifact(train.categories, res.coeffs, res.lam, res.rho,
                            feature_names=names[0], feature_sds=_feature_sds(train),
                            method=method, extra={"status": res.status,
                                                  "iterations": res.iterations})
    bio.save_model(art, out / "model.txt")
    return art


def cmd_fit(args):
    train, _, names = _load_collections(args)
    cfg = SolverConfig(lam=args.lam, rho=args.rho, max_iter=args.max_iter, tol=args.tol)
    res = fit(train, cfg)
    _save(train, res, names, args.method, args.out)
    np.savetxt(Path(args.out) / "objective.tsv", res.objective_trace, fmt="%.17g")
    logger.info("fit %s: %s after %d iterations, %d active rows",
                args.method, res.status, res.iterations, res.active_rows.size)
    return EXIT_OK


def cmd_path(args):
    train, val, names = _load_collections(args, args.validation)
    cfg = SolverConfig(max_iter=args.max_iter, tol=args.tol)
    rhos = args.rhos if train.r else (min(args.rhos),)
    grid = build_grid(train, args.n_lambda, args.lambda_min_ratio, rhos)
    result = fit_path(train, val, grid, cfg, args.patience)
    _save(train, result.best, names, args.method, args.out)
    write_path_report(result, Path(args.out) / "path.tsv")
    logger.info("selected lambda=%g rho=%g", *result.selected)
    return EXIT_OK


def cmd_predict(args):
    art = bio.load_model(args.model)
    ds = bio.load_dataset(args.data, batch="none")
    if ds.p != art.coeffs.p:
        raise DimensionError(f"data has p={ds.p}, model has p={art.coeffs.p}")
    if args.mode == "fine":
        pred = predict_fine(art.coeffs, ds.X, art.categories)
    else:
        if args.binning is None:
            raise UsageError(f"--mode {args.mode} needs --binning")
        spec = read_binning(args.binning)
        if tuple(spec.fine) != tuple(art.categories):
            raise ValueError("test binning uses different fine categories than the model")
        ids = list(spec.dataset_ids)
        if args.dataset is not None and args.dataset not in ids:
            raise UsageError(f"dataset {args.dataset!r} not in {args.binning}")
        k = 0 if args.dataset is None else ids.index(args.dataset)
        if args.mode == "conditional":
            pred = predict_conditional(art.coeffs, ds.X, ds.y, spec, k)
        else:
            if args.observed_labels:
                labels = [l for l in read_lines(args.observed_labels) if l]
                obs = ObservedTestLabelSet(tuple(labels))
            else:
                obs = ObservedTestLabelSet.from_labels(ds.y, spec, k)
            pred = predict_coarse(art.coeffs, ds.X, spec, obs, k)
    write_predictions(pred, sys.stdout if args.out == "-" else args.out)
    return EXIT_OK


def cmd_simulate(args):
    cfg = read_sim_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sim = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = tuple(f"x{j + 1}" for j in range(cfg.p))
    ids = list(sim.train.binning.dataset_ids) + list(sim.validation.binning.dataset_ids)
    for did, ds in zip(ids, list(sim.train) + list(sim.validation)):
        # Z is left out: the CLI picks intercept or none from --method
        bio.save_dataset(ds.replace(Z=None, feature_names=feats), out / did)
    bio.save_dataset(sim.test.replace(feature_names=feats), out / "test")
    spec = BinningSpec(sim.train.categories,
                       list(sim.train.binning.per_dataset) + list(sim.validation.binning.per_dataset),
                       ids)
    write_binning(spec, out / "binning.tsv")
    write_binning(BinningSpec.identity(sim.train.categories, 1, ["test"]),
                  out / "test_binning.tsv")
    write_matrix(out / "test_probs.tsv", sim.truth.test_probs, sim.train.categories.names)
    write_matrix(out / "beta_star.tsv", sim.truth.beta_star, sim.train.categories.names)
    write_sim_config(cfg, out / "config.txt")
    return EXIT_OK


def cmd_benchmark(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {sorted(METHODS)}")
    scenarios = read_scenarios(args.scenarios)
    settings = BenchmarkSettings(args.n_lambda, args.lambda_min_ratio, tuple(args.rhos),
                                 args.patience, args.test_n)
    records = run_benchmark(scenarios, methods, args.replicates, args.seed, settings,
                            threads=args.threads or 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_long_table(records, out / "replicates.tsv")
    write_summary_table(summarize(records), out / "summary.tsv")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "predict": cmd_predict,
            "simulate": cmd_simulate, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"binnedmr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, PathError, FloatingPointError) as exc:
        print(f"binnedmr {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, InvalidCollectionError, CoverageError, DimensionError,
            UnknownLabelError, OSError, ValueError) as exc:
        print(f"binnedmr {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main_entry():  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
