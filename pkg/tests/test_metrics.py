import io

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binnedmr.binning import BinningSpec, CategorySet
from binnedmr.likelihood import Coefficients, DimensionError, softmax
from binnedmr.metrics import (
    ObservedTestLabelSet,
    confusion_percentages,
    error_rate,
    hellinger_distance,
    kl_divergence,
    predict_coarse,
    predict_conditional,
    predict_fine,
    read_predictions,
    standardized_coefficient_ranking,
    write_confusion,
    write_predictions,
)

from conftest import random_binning

NAMES = ("A1", "A2", "B1", "B2")
CATS = CategorySet(NAMES)
PAIRED = BinningSpec(CATS, [{"A1": "A", "A2": "A", "B1": "B1", "B2": "B2"}])


def _coeffs(rng, p=3, C=4, scale=1.0):
    return Coefficients(scale * rng.normal(size=C), scale * rng.normal(size=(p, C)))


def test_zero_coefficients_predict_first_category():
    pred = predict_fine(Coefficients.zeros(2, 4), np.ones((5, 2)), CATS)
    assert list(pred.labels) == ["A1"] * 5


def test_dominant_intercept_wins():
    c = Coefficients(np.array([0.0, 5.0, 0.0, 0.0]), np.zeros((2, 4)))
    assert list(predict_fine(c, np.zeros((3, 2)), CATS).labels) == ["A2"] * 3


def test_fine_prediction_matches_entrywise_argmax(rng):
    c = _coeffs(rng)
    X = rng.normal(size=(50, 3))
    pred = predict_fine(c, X, CATS)
    for i in range(50):
        eta = [c.alpha[l] + sum(X[i, j] * c.beta[j, l] for j in range(3)) for l in range(4)]
        assert pred.labels[i] == NAMES[int(np.argmax(eta))]


def test_fine_prediction_ignores_batch_term(rng):
    c = _coeffs(rng)
    with_g = c.replace(gamma=(rng.normal(size=(1, 4)),))
    X = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(predict_fine(with_g, X).probs.values,
                                  predict_fine(c, X).probs.values)


def test_fine_prediction_dimension_error(rng):
    with pytest.raises(DimensionError):
        predict_fine(_coeffs(rng), np.ones((2, 4)))


def test_conditional_keeps_fine_labels(rng):
    c = _coeffs(rng, scale=5.0)
    X = rng.normal(size=(40, 3))
    y = rng.choice(["B1", "B2"], size=40)
    assert list(predict_conditional(c, X, y, PAIRED).labels) == list(y)


def test_conditional_picks_larger_member_of_bin():
    c = Coefficients(np.array([0.0, 1.0, 9.0, 9.0]), np.zeros((1, 4)))
    pred = predict_conditional(c, np.zeros((2, 1)), ["A", "A"], PAIRED)
    assert list(pred.labels) == ["A2", "A2"]


def test_conditional_prediction_lies_in_bin(rng):
    for _ in range(10):
        spec = random_binning(rng, 5, 2)  # dataset 0 is a random partition
        labels = spec.labels(0)
        c = _coeffs(rng, C=5, scale=3.0)
        X = rng.normal(size=(30, 3))
        y = [labels[i] for i in rng.integers(0, len(labels), size=30)]
        pred = predict_conditional(c, X, y, spec)
        for lab, obs in zip(pred.labels, y):
            members = {spec.fine.names[l] for l in spec.g(0, obs)}
            assert lab in members
        np.testing.assert_allclose(pred.probs.values.sum(axis=1), 1.0, atol=1e-12)


def test_coarse_with_singletons_reduces_to_fine(rng):
    spec = BinningSpec.identity(CATS, 1)
    c = _coeffs(rng)
    X = rng.normal(size=(30, 3))
    obs = ObservedTestLabelSet(NAMES)
    coarse = predict_coarse(c, X, spec, obs)
    fine = predict_fine(c, X, CATS)
    assert list(coarse.labels) == list(fine.labels)
    np.testing.assert_allclose(coarse.probs.values, fine.probs.values, rtol=1e-12)


def test_single_bin_predicts_that_label(rng):
    spec = BinningSpec(CATS, [{n: "all" for n in NAMES}])
    pred = predict_coarse(_coeffs(rng), rng.normal(size=(6, 3)), spec, ObservedTestLabelSet(("all",)))
    assert list(pred.labels) == ["all"] * 6
    assert np.all(pred.probs.values == 1.0)


def test_coarse_probabilities_match_mask_renormalize_oracle(rng):
    c = _coeffs(rng)
    X = rng.normal(size=(20, 3))
    obs = ObservedTestLabelSet(("A", "B2"))
    pred = predict_coarse(c, X, PAIRED, obs)
    P = softmax(c.alpha + X @ c.beta)
    mass = np.column_stack([P[:, 0] + P[:, 1], P[:, 3]])
    np.testing.assert_allclose(pred.probs.values, mass / mass.sum(axis=1, keepdims=True), rtol=1e-12)
    np.testing.assert_allclose(pred.probs.values.sum(axis=1), 1.0, atol=1e-12)
    assert set(pred.labels) <= {"A", "B2"}


def test_observed_set_rules():
    with pytest.raises(ValueError):
        ObservedTestLabelSet(())
    obs = ObservedTestLabelSet.from_labels(["B2", "A", "A"], PAIRED)
    assert obs.labels == ("A", "B2")
    with pytest.raises(ValueError):
        predict_coarse(Coefficients.zeros(1, 4), np.zeros((1, 1)), PAIRED,
                       ObservedTestLabelSet(("nope",)))


def test_predictions_invariant_to_gauge_shift(rng):
    c = _coeffs(rng)
    d = rng.normal(size=3)
    shifted = Coefficients(c.alpha + 2.5, c.beta + d[:, None])
    X = rng.normal(size=(40, 3))
    y = rng.choice(["A", "B1", "B2"], size=40)
    obs = ObservedTestLabelSet(("A", "B1", "B2"))
    assert list(predict_fine(c, X).labels) == list(predict_fine(shifted, X).labels)
    assert list(predict_conditional(c, X, y, PAIRED).labels) == \
        list(predict_conditional(shifted, X, y, PAIRED).labels)
    assert list(predict_coarse(c, X, PAIRED, obs).labels) == \
        list(predict_coarse(shifted, X, PAIRED, obs).labels)


def test_error_rate_cases(rng):
    pred = predict_fine(Coefficients.zeros(1, 4), np.zeros((4, 1)), CATS)
    assert error_rate(pred, ["A1"] * 4) == 0.0
    assert error_rate(pred, ["A2"] * 4) == 1.0
    y = rng.choice(NAMES, size=200)
    c = _coeffs(rng, p=1)
    pred = predict_fine(c, rng.normal(size=(200, 1)), CATS)
    assert error_rate(pred, y) == sum(a != b for a, b in zip(pred.labels, y)) / 200
    with pytest.raises(ValueError):
        error_rate(pred, ["A"] * 200)
    with pytest.raises(DimensionError):
        error_rate(pred, y[:5])


def test_kl_cases():
    P = np.array([[0.2, 0.8], [0.5, 0.5]])
    assert kl_divergence(P, P) == 0.0
    assert kl_divergence([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(np.log(2), rel=1e-15)
    # a zero estimate is clamped, giving a large but finite value
    assert np.isfinite(kl_divergence([[0.5, 0.5]], [[1.0, 0.0]]))
    with pytest.raises(DimensionError):
        kl_divergence(P, P[:1])


def test_kl_matches_mpmath(rng):
    mpmath.mp.dps = 40
    P = rng.dirichlet(np.ones(6), size=30)
    Q = rng.dirichlet(np.ones(6), size=30)
    ref = sum(sum(mpmath.mpf(p) * mpmath.log(mpmath.mpf(p) / mpmath.mpf(q))
                  for p, q in zip(pr, qr)) for pr, qr in zip(P, Q)) / 30
    assert kl_divergence(P, Q) == pytest.approx(float(ref), rel=1e-12)


def test_hellinger_cases(rng):
    assert hellinger_distance([[0.3, 0.7]], [[0.3, 0.7]]) == 0.0
    assert hellinger_distance([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(
        np.sqrt(1 - np.sqrt(0.5)), rel=1e-14)
    assert hellinger_distance([[1.0, 0.0]], [[0.0, 1.0]]) == 1.0
    P = rng.dirichlet(np.ones(5), size=10)
    Q = rng.dirichlet(np.ones(5), size=10)
    assert hellinger_distance(P, Q) == hellinger_distance(Q, P)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_kl_nonnegative_and_hellinger_bounded(seed, C):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(C) * 0.5, size=4)
    Q = rng.dirichlet(np.ones(C) * 0.5, size=4)
    assert kl_divergence(P, Q) >= 0
    assert 0 <= hellinger_distance(P, Q) <= 1


def test_ranking_cases(rng):
    beta = np.zeros((5, 2))
    beta[3, 0] = 0.1
    beta[:, 1] = [0.5, -2.0, 1.0, 0.0, 0.3]
    c = Coefficients(np.zeros(2), beta)
    out = standardized_coefficient_ranking(c, np.ones(5), top_n=3, categories=("x", "y"))
    assert out["x"][0] == (3, 0.1)
    assert [f for f, _ in out["y"]] == [1, 2, 0]
    sds = rng.uniform(0.5, 2, size=5)
    out = standardized_coefficient_ranking(c, sds, top_n=5, feature_names=list("abcde"))
    scores = np.abs(beta[:, 1]) * sds
    assert [f for f, _ in out[1]] == [list("abcde")[j] for j in np.argsort(-scores, kind="stable")]
    with pytest.raises(ValueError):
        standardized_coefficient_ranking(c, np.array([1, 1, 0, 1, 1.0]))


def test_confusion_rows_sum_to_100(tmp_path):
    rows, cols, pct = confusion_percentages(["a", "a", "b"], ["x", "y", "y"])
    assert rows == ["a", "b"] and cols == ["x", "y"]
    np.testing.assert_allclose(pct, [[50, 50], [0, 100]])
    write_confusion(tmp_path / "c.tsv", ["a", "a", "b"], ["x", "y", "y"])
    assert (tmp_path / "c.tsv").read_text().splitlines()[0] == "observed\tx\ty"


def test_prediction_file_round_trip(rng, tmp_path):
    c = _coeffs(rng)
    X = rng.normal(size=(15, 3))
    obs = ObservedTestLabelSet(("A", "B1", "B2"))
    for pred in (predict_fine(c, X, CATS),
                 predict_conditional(c, X, rng.choice(["A", "B1"], size=15), PAIRED),
                 predict_coarse(c, X, PAIRED, obs)):
        write_predictions(pred, tmp_path / "p.tsv")
        back = read_predictions(tmp_path / "p.tsv")
        assert back.mode == pred.mode
        assert back.support == tuple(map(str, pred.support))
        assert list(back.labels) == list(pred.labels)
        np.testing.assert_array_equal(back.probs.values, pred.probs.values)
    buf = io.StringIO()
    write_predictions(pred, buf)
    assert buf.getvalue() == (tmp_path / "p.tsv").read_text()
