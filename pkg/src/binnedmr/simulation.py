"""Data-generating model for the six-dataset binned-label simulation.

Twelve fine categories ``A1, A2, ..., F2``.  Training and validation each
consist of six datasets of ``N / 6`` rows: datasets 1-4 observe the pairs
A-E only as coarse labels, datasets 5-6 observe everything at the finest
resolution, and F1/F2 are fine everywhere.  Features follow an AR(1)(0.5)
Gaussian law; each dataset is shifted by one constant batch vector whose
Frobenius size relative to the clean features equals ``b``.  The test set
is fully fine-labelled and free of batch effects.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .binning import AnnotatedDataset, BinningSpec, CategorySet, DatasetCollection
from .likelihood import softmax

__all__ = [
    "CATEGORIES",
    "PAIRS",
    "SimConfig",
    "SimTruth",
    "Simulation",
    "simulation_binning",
    "simulate",
    "empirical_batch_ratio",
    "ar1_features",
    "read_sim_config",
    "write_sim_config",
]

PAIRS = ("A", "B", "C", "D", "E")
CATEGORIES = CategorySet([f"{g}{i}" for g in (*PAIRS, "F") for i in (1, 2)])
N_DATASETS = 6
N_COARSE_DATASETS = 4


@dataclass(frozen=True)
class SimConfig:
    N: int = 4800
    p: int = 500
    s: int = 40
    b: float = 0.1
    seed: int = 0
    test_n: int = 10_000
    n_nonzero: int = 100
    coef_var: float = 2.0
    ar_coef: float = 0.5

    def __post_init__(self):
        if self.N <= 0 or self.N % N_DATASETS:
            raise ValueError(f"N must be a positive multiple of {N_DATASETS}, got {self.N}")
        if not 0 <= self.s <= self.n_nonzero <= self.p:
            raise ValueError(
                f"need 0 <= s <= n_nonzero <= p, got s={self.s}, "
                f"n_nonzero={self.n_nonzero}, p={self.p}"
            )
        if self.b < 0:
            raise ValueError("b must be nonnegative")
        if self.test_n <= 0:
            raise ValueError("test_n must be positive")
        if not -1 < self.ar_coef < 1:
            raise ValueError("ar_coef must lie in (-1, 1)")

    @property
    def n_per_dataset(self) -> int:
        return self.N // N_DATASETS


@dataclass
class SimTruth:
    beta_star: np.ndarray
    alpha_star: np.ndarray
    nonzero_rows: np.ndarray
    shared_rows: np.ndarray
    test_probs: np.ndarray
    train_fine_labels: list
    validation_fine_labels: list
    train_X_tilde: list = field(repr=False)
    validation_X_tilde: list = field(repr=False)
    batch_shift: dict = field(default_factory=dict, repr=False)


@dataclass
class Simulation:
    train: DatasetCollection
    validation: DatasetCollection
    test: AnnotatedDataset
    truth: SimTruth
    config: SimConfig

    def __iter__(self):
        return iter((self.train, self.validation, self.test, self.truth))


def simulation_binning(prefix: str = "train", start: int = 1) -> BinningSpec:
    """Binning used for each block of six simulated datasets."""
    maps = []
    for k in range(N_DATASETS):
        m = {}
        for name in CATEGORIES:
            group = name[0]
            m[name] = group if (k < N_COARSE_DATASETS and group in PAIRS) else name
        maps.append(m)
    ids = [f"{prefix}{start + k}" for k in range(N_DATASETS)]
    return BinningSpec(CATEGORIES, maps, ids)


def ar1_features(rng: np.random.Generator, n: int, p: int, phi: float = 0.5) -> np.ndarray:
    """Rows with unit variances and ``corr(x_j, x_k) = phi^|j-k|``."""
    eps = rng.standard_normal((n, p))
    c = np.sqrt(1.0 - phi * phi)
    eps[:, 0] /= c
    return lfilter([c], [1.0, -phi], eps, axis=1)


def _coefficients(rng, cfg: SimConfig):
    C = len(CATEGORIES)
    sd = np.sqrt(cfg.coef_var)
    beta = np.zeros((cfg.p, C))
    nonzero = np.sort(rng.choice(cfg.p, size=cfg.n_nonzero, replace=False))
    shared = np.sort(rng.choice(nonzero, size=cfg.s, replace=False))
    beta[nonzero] = rng.normal(0.0, sd, size=(cfg.n_nonzero, C))
    if cfg.s:
        # one draw per coarse pair, copied to both members
        pair_vals = rng.normal(0.0, sd, size=(cfg.s, len(PAIRS)))
        beta[np.ix_(shared, np.arange(2 * len(PAIRS)))] = np.repeat(pair_vals, 2, axis=1)
    return beta, nonzero, shared


def _draw_labels(rng, probs: np.ndarray) -> np.ndarray:
    u = rng.random(probs.shape[0])
    idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _make_block(streams, cfg, beta, alpha, prefix, start):
    spec = simulation_binning(prefix, start)
    n = cfg.n_per_dataset
    datasets, fine_labels, x_tilde, shifts = [], [], [], {}
    names = np.asarray(CATEGORIES.names, dtype=object)
    for k, rng in enumerate(streams):
        Xt = ar1_features(rng, n, cfg.p, cfg.ar_coef)
        probs = softmax(alpha + Xt @ beta)
        fine = names[_draw_labels(rng, probs)]
        u = rng.standard_normal(cfg.p)
        if cfg.b > 0:
            a = cfg.b * np.linalg.norm(Xt) / (np.sqrt(n) * np.linalg.norm(u))
            shift = a * u
            X = Xt + shift
        else:
            shift = np.zeros(cfg.p)
            X = Xt.copy()
        coarse = np.array([spec.f(k, v) for v in fine], dtype=object)
        datasets.append(AnnotatedDataset(X, coarse, np.ones((n, 1))))
        fine_labels.append(fine)
        x_tilde.append(Xt)
        shifts[spec.dataset_ids[k]] = shift
    return DatasetCollection(datasets, spec), fine_labels, x_tilde, shifts


def simulate(config: SimConfig) -> Simulation:
    """Generate training, validation and test data plus the true model.

    Every dataset draws from its own child stream of ``SeedSequence(seed)``,
    so outputs are reproducible bit for bit.
    """
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    coef_ss, *data_ss = root.spawn(2 * N_DATASETS + 2)
    rng = np.random.default_rng(coef_ss)
    beta, nonzero, shared = _coefficients(rng, cfg)
    alpha = np.zeros(len(CATEGORIES))

    streams = [np.random.default_rng(s) for s in data_ss]
    train, train_fine, train_xt, train_shift = _make_block(
        streams[:N_DATASETS], cfg, beta, alpha, "train", 1)
    val, val_fine, val_xt, val_shift = _make_block(
        streams[N_DATASETS:2 * N_DATASETS], cfg, beta, alpha, "val", N_DATASETS + 1)

    trng = streams[-1]
    Xtest = ar1_features(trng, cfg.test_n, cfg.p, cfg.ar_coef)
    test_probs = softmax(alpha + Xtest @ beta)
    test_labels = np.asarray(CATEGORIES.names, dtype=object)[_draw_labels(trng, test_probs)]
    test = AnnotatedDataset(Xtest, test_labels)

    truth = SimTruth(
        beta_star=beta,
        alpha_star=alpha,
        nonzero_rows=nonzero,
        shared_rows=shared,
        test_probs=test_probs,
        train_fine_labels=train_fine,
        validation_fine_labels=val_fine,
        train_X_tilde=train_xt,
        validation_X_tilde=val_xt,
        batch_shift={**train_shift, **val_shift},
    )
    return Simulation(train, val, test, truth, cfg)


def empirical_batch_ratio(dataset: AnnotatedDataset, truth_X_tilde) -> float:
    """``||X - X_tilde||_F / ||X_tilde||_F`` for one dataset."""
    Xt = np.asarray(truth_X_tilde, dtype=float)
    if Xt.shape != dataset.X.shape:
        raise ValueError(f"shape mismatch: {dataset.X.shape} vs {Xt.shape}")
    denom = np.linalg.norm(Xt)
    if denom == 0:
        raise ValueError("clean feature matrix has zero norm")
    return float(np.linalg.norm(dataset.X - Xt) / denom)


def within_pair_identical_rows(beta: np.ndarray) -> np.ndarray:
    """Rows whose two columns are equal for every coarse pair A-E."""
    pairs = beta[:, : 2 * len(PAIRS)].reshape(beta.shape[0], len(PAIRS), 2)
    return np.flatnonzero(np.all(pairs[:, :, 0] == pairs[:, :, 1], axis=1))


_CAST = {f.name: f.type for f in fields(SimConfig)}


def read_sim_config(path) -> SimConfig:
    """Parse ``key = value`` (or ``key<TAB>value``) lines into a config."""
    kwargs = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (t.strip() for t in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = parts
        if key not in _CAST:
            raise ValueError(f"{path}:{lineno}: unknown setting {key!r}")
        kwargs[key] = float(value) if _CAST[key] in (float, "float") else int(float(value))
    return SimConfig(**kwargs)


def write_sim_config(cfg: SimConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(SimConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
