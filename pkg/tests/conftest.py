import numpy as np
import pytest

from binnedmr.binning import AnnotatedDataset, BinningSpec, CategorySet, DatasetCollection

ACCEPTANCE_LINES = []


def random_binning(rng, C, K, names=None):
    """K random partitions of C categories; the last dataset is all fine."""
    names = names or [f"c{l}" for l in range(C)]
    maps = []
    for k in range(K):
        if k == K - 1:
            maps.append({n: n for n in names})
            continue
        n_bins = rng.integers(1, C + 1)
        assign = rng.integers(0, n_bins, size=C)
        groups = {}
        for n, b in zip(names, assign):
            groups.setdefault(b, []).append(n)
        m = {}
        for members in groups.values():
            lab = members[0] if len(members) == 1 else "+".join(members)
            for n in members:
                m[n] = lab
        maps.append(m)
    return BinningSpec(CategorySet(names), maps)


def random_collection(rng, K=3, n=40, p=6, C=4, r=1, spec=None, scale=0.5):
    """Random collection with mixed coarse and fine labels and full coverage."""
    spec = spec or random_binning(rng, C, K)
    datasets = []
    for k in range(K):
        X = rng.normal(size=(n, p))
        Z = rng.normal(size=(n, r)) if r else None
        labels = list(spec.labels(k))
        y = np.array([labels[i % len(labels)] for i in rng.permutation(n)], dtype=object)
        datasets.append(AnnotatedDataset(X, y, Z))
    return DatasetCollection(datasets, spec)


def random_coeffs(rng, coll, scale=0.5):
    from binnedmr.likelihood import Coefficients
    C = len(coll.categories)
    gamma = tuple(scale * rng.normal(size=(coll.r, C)) for _ in range(coll.K)) if coll.r else ()
    return Coefficients(scale * rng.normal(size=C), scale * rng.normal(size=(coll.p, C)), gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
