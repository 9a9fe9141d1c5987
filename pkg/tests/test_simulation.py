import numpy as np
import pytest

from binnedmr.binning import validate_binning
from binnedmr.likelihood import softmax
from binnedmr.simulation import (
    CATEGORIES,
    SimConfig,
    ar1_features,
    empirical_batch_ratio,
    read_sim_config,
    simulate,
    within_pair_identical_rows,
    write_sim_config,
)

SMALL = SimConfig(N=600, p=40, s=6, n_nonzero=12, b=0.1, seed=3, test_n=200)


@pytest.fixture(scope="module")
def sim():
    return simulate(SMALL)


def test_reproducible_bit_for_bit(sim):
    again = simulate(SMALL)
    for a, b in zip(list(sim.train) + list(sim.validation), list(again.train) + list(again.validation)):
        assert np.array_equal(a.X, b.X)
        assert list(a.y) == list(b.y)
    assert np.array_equal(sim.truth.beta_star, again.truth.beta_star)
    assert np.array_equal(sim.test.X, again.test.X)
    other = simulate(SimConfig(**{**SMALL.__dict__, "seed": 4}))
    assert not np.array_equal(other.train.datasets[0].X, sim.train.datasets[0].X)


def test_shapes_and_binning(sim):
    assert sim.train.K == 6 and sim.validation.K == 6
    assert all(ds.n == 100 and ds.p == 40 for ds in sim.train)
    assert sim.test.X.shape == (200, 40)
    assert validate_binning(sim.train) == []
    assert validate_binning(sim.validation) == []
    # the first four datasets see only pair labels for A-E
    assert set(sim.train.datasets[0].y) <= {"A", "B", "C", "D", "E", "F1", "F2"}
    assert set(sim.train.datasets[5].y) <= set(CATEGORIES.names)


def test_labels_bin_the_true_fine_labels(sim):
    spec = sim.train.binning
    for k, (ds, fine) in enumerate(zip(sim.train, sim.truth.train_fine_labels)):
        assert [spec.f(k, v) for v in fine] == list(ds.y)


@pytest.mark.parametrize("b", [0.0, 0.1, 0.4])
def test_empirical_batch_ratio_equals_b(b):
    s = simulate(SimConfig(N=600, p=40, s=6, n_nonzero=12, b=b, seed=1, test_n=10))
    for ds, Xt in zip(s.train, s.truth.train_X_tilde):
        assert empirical_batch_ratio(ds, Xt) == pytest.approx(b, abs=1e-12)
    for ds, Xt in zip(s.validation, s.truth.validation_X_tilde):
        assert empirical_batch_ratio(ds, Xt) == pytest.approx(b, abs=1e-12)


def test_shift_is_constant_across_rows(sim):
    ds, Xt = sim.train.datasets[2], sim.truth.train_X_tilde[2]
    d = ds.X - Xt
    assert np.ptp(d, axis=0).max() < 1e-12


def test_ar1_correlation():
    X = ar1_features(np.random.default_rng(0), 200_000, 4, 0.5)
    np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.01)
    R = np.corrcoef(X, rowvar=False)
    for j in range(4):
        for k in range(4):
            assert R[j, k] == pytest.approx(0.5 ** abs(j - k), abs=0.01)


def test_coefficient_structure(sim):
    beta = sim.truth.beta_star
    nz = np.flatnonzero(np.any(beta != 0, axis=1))
    assert np.array_equal(nz, sim.truth.nonzero_rows)
    assert len(nz) == 12
    assert set(sim.truth.shared_rows) <= set(nz)
    # every shared row is pair-identical; other nonzero rows almost surely are not
    assert set(nz[within_pair_identical_rows(beta[nz])]) == set(sim.truth.shared_rows)
    assert np.all(within_pair_identical_rows(beta[sim.truth.shared_rows]) ==
                  np.arange(len(sim.truth.shared_rows)))
    np.testing.assert_array_equal(sim.truth.alpha_star, 0)


def test_test_probs_are_truth(sim):
    np.testing.assert_array_equal(sim.truth.test_probs, softmax(sim.test.X @ sim.truth.beta_star))


def test_config_validation_and_file_round_trip(tmp_path):
    with pytest.raises(ValueError):
        SimConfig(N=601)
    with pytest.raises(ValueError):
        SimConfig(p=10, s=20, n_nonzero=5)
    with pytest.raises(ValueError):
        SimConfig(b=-0.1)
    write_sim_config(SMALL, tmp_path / "c.txt")
    assert read_sim_config(tmp_path / "c.txt") == SMALL
    (tmp_path / "bad.txt").write_text("N = 600\nbogus = 3\n")
    with pytest.raises(ValueError, match=":2:"):
        read_sim_config(tmp_path / "bad.txt")
