import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binnedmr.binning import (
    AnnotatedDataset,
    BinningSpec,
    CategorySet,
    DatasetCollection,
    UnknownLabelError,
    read_binning,
    unbin,
    validate_binning,
    write_binning,
)
from binnedmr.simulation import simulation_binning


def _coll(spec, labels_per_dataset, p=2):
    ds = [AnnotatedDataset(np.zeros((len(y), p)), y) for y in labels_per_dataset]
    return DatasetCollection(ds, spec)


def test_category_set_rejects_bad_names():
    with pytest.raises(ValueError):
        CategorySet(["A"])
    with pytest.raises(ValueError):
        CategorySet(["A", "A"])
    with pytest.raises(ValueError):
        CategorySet(["A", ""])
    cs = CategorySet(["A1", "A2", "B"])
    assert cs.index("B") == 2 and "A2" in cs and len(cs) == 3
    with pytest.raises(UnknownLabelError):
        cs.index("Z")


def test_unbin_coarse_and_singleton():
    spec = BinningSpec(["A1", "A2", "B1"], [{"A1": "A", "A2": "A", "B1": "B1"}])
    assert unbin(spec, 0, "A") == {0, 1}
    assert unbin(spec, 0, "B1") == {2}
    assert spec.is_fine_label(0, "B1") and not spec.is_fine_label(0, "A")
    with pytest.raises(UnknownLabelError):
        unbin(spec, 0, "Q")


def test_unbin_three_member_bin():
    fine = ["naive CD4+", "effector memory CD4+", "central memory CD4+", "B cell"]
    m = {n: ("CD4+" if "CD4" in n else n) for n in fine}
    spec = BinningSpec(fine, [m])
    assert unbin(spec, 0, "CD4+") == {0, 1, 2}


def test_coverage_satisfied_by_fine_dataset():
    spec = BinningSpec(["A1", "A2"], [{"A1": "A", "A2": "A"}, {"A1": "A1", "A2": "A2"}])
    coll = _coll(spec, [["A", "A"], ["A1", "A2"]])
    assert validate_binning(coll) == []


def test_coverage_violation_reports_each_category():
    spec = BinningSpec(["A1", "A2"], [{"A1": "A", "A2": "A"}, {"A1": "A", "A2": "A"}])
    coll = _coll(spec, [["A"], ["A"]])
    rep = validate_binning(coll)
    assert {(v.kind, v.category) for v in rep} == {("not_covered", "A1"), ("not_covered", "A2")}


def test_coverage_needs_an_observation_not_just_a_label():
    spec = BinningSpec(["A1", "A2"], [{"A1": "A1", "A2": "A2"}])
    coll = _coll(spec, [["A1", "A1"]])
    assert [v.category for v in validate_binning(coll)] == ["A2"]


def test_simulation_binning_is_valid():
    spec = simulation_binning()
    labels = [list(spec.labels(k)) for k in range(6)]
    coll = _coll(spec, labels)
    assert validate_binning(coll) == []
    assert spec.labels(0) == ("A", "B", "C", "D", "E", "F1", "F2")
    assert len(spec.labels(5)) == 12


def test_non_total_and_unknown_category_reported():
    spec = BinningSpec(["A1", "A2"], [{"A1": "A1", "Q": "Q"}])
    coll = _coll(spec, [["A1"]])
    kinds = {(v.kind, v.category) for v in validate_binning(coll)}
    assert ("not_total", "A2") in kinds
    assert ("unknown_category", "Q") in kinds


def test_unknown_observed_label_reported():
    spec = BinningSpec(["A1", "A2"], [{"A1": "A1", "A2": "A2"}])
    ds = AnnotatedDataset(np.zeros((2, 1)), ["A1", "zzz"])
    coll = DatasetCollection([ds], spec)
    assert any(v.kind == "unknown_label" and v.category == "zzz" for v in validate_binning(coll))


def test_dataset_shape_checks():
    with pytest.raises(ValueError):
        AnnotatedDataset(np.zeros((3, 2)), ["a", "b"])
    with pytest.raises(ValueError):
        AnnotatedDataset(np.zeros((2, 2)), ["a", "b"], np.zeros((3, 1)))
    with pytest.raises(ValueError):
        AnnotatedDataset(np.array([[np.nan, 1.0]]), ["a"])
    spec = BinningSpec.identity(["a", "b"], 2)
    d1 = AnnotatedDataset(np.zeros((1, 2)), ["a"])
    d2 = AnnotatedDataset(np.zeros((1, 3)), ["b"])
    with pytest.raises(ValueError, match="feature count"):
        DatasetCollection([d1, d2], spec)
    with pytest.raises(ValueError):
        DatasetCollection([d1], spec)


def test_bin_mask_rows(rng):
    spec = BinningSpec(["A1", "A2", "B"], [{"A1": "A", "A2": "A", "B": "B"}])
    mask = spec.bin_mask(0, ["B", "A", "A"])
    assert mask.tolist() == [[False, False, True], [True, True, False], [True, True, False]]


def test_binning_file_round_trip(tmp_path):
    spec = simulation_binning("train", 1)
    write_binning(spec, tmp_path / "b.tsv")
    back = read_binning(tmp_path / "b.tsv")
    assert back.fine == spec.fine
    assert back.dataset_ids == spec.dataset_ids
    assert back.per_dataset == spec.per_dataset


def test_binning_file_ragged_row(tmp_path):
    (tmp_path / "b.tsv").write_text("dataset\tA\tB\nd1\tA\n")
    with pytest.raises(ValueError, match=":2:"):
        read_binning(tmp_path / "b.tsv")


@st.composite
def partitions(draw):
    C = draw(st.integers(2, 8))
    assign = draw(st.lists(st.integers(0, C - 1), min_size=C, max_size=C))
    names = [f"c{i}" for i in range(C)]
    return names, {n: f"bin{a}" for n, a in zip(names, assign)}


@settings(max_examples=100, deadline=None)
@given(partitions())
def test_bins_partition_the_fine_set(part):
    names, m = part
    spec = BinningSpec(names, [m])
    seen = []
    for lab in spec.labels(0):
        members = spec.g(0, lab)
        assert members
        seen.extend(members)
    assert sorted(seen) == list(range(len(names)))
    # every category sits in the bin of its own label
    for l, n in enumerate(names):
        assert l in spec.g(0, spec.f(0, n))
    M = spec.membership(0)
    assert (M.sum(axis=0) == 1).all()
