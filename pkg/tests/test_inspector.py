"""Pairwise risk comparison: pair construction, the comparator, correlations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from merkit import dataio, inspector
from merkit.errors import DataError, ParameterError, UndefinedCorrelationError


@pytest.fixture(scope="module")
def fixture_records():
    return inspector.records_from_fixtures(dataio.load_fixtures())


@pytest.fixture(scope="module")
def trained_split(fixture_records):
    split = inspector.build_pairs(fixture_records, scope="all", seed=0)
    model = inspector.train_comparator(split.train, inspector.ComparatorConfig(seed=0))
    return split, model


def make_record(model_id, fidelity, vma=0.9, mrc=0.1, dataset="d0", group="ResNet"):
    return inspector.RiskRecord(model_id=model_id, dataset_id=dataset, group=group,
                                vma=vma, mrc=mrc, fidelity=fidelity)


# ----------------------------------------------------------------- records


def test_records_from_fixtures_shapes_and_units(fixture_records):
    assert len(fixture_records) == 80
    by_key = {(r.dataset_id, r.model_id): r for r in fixture_records}
    resnet20 = by_key[("cifar10", "ResNet20")]
    assert resnet20.vma == pytest.approx(0.9094)
    assert resnet20.mrc == pytest.approx(0.00353)
    hundred = by_key[("cifar100", "ResNet20")]
    assert hundred.mrc == pytest.approx(0.09119)


def test_records_from_fixtures_explicit_column():
    rows = [r for r in dataio.load_fixtures() if r.dataset == "cifar10"]
    records = inspector.records_from_fixtures(rows, mrc_l=200)
    by_model = {r.model_id: r for r in records}
    assert by_model["ResNet20"].mrc == pytest.approx(0.00206)
    with pytest.raises(ParameterError, match="L=999"):
        inspector.records_from_fixtures(rows, mrc_l=999)


# ----------------------------------------------------------------- pair construction


def test_pair_label_rule():
    a = make_record("a", fidelity=0.9)
    b = make_record("b", fidelity=0.8)
    split = inspector.build_pairs([a, b], seed=0)
    by_order = {(e.record_a.model_id, e.record_b.model_id): e.label
                for e in split.all_examples}
    assert by_order[("a", "b")] == 0
    assert by_order[("b", "a")] == 1


def test_pair_counts_per_scope(fixture_records):
    for scope, total, n_train, n_test in (
        ("all", 1200, 960, 240),
        ("intra", 270, 216, 54),
        ("inter", 930, 744, 186),
    ):
        split = inspector.build_pairs(fixture_records, scope=scope, seed=0)
        assert len(split.all_examples) == total
        assert len(split.train) == n_train
        assert len(split.test) == n_test


def test_pair_labels_exactly_balanced(fixture_records):
    for scope in ("all", "intra", "inter"):
        split = inspector.build_pairs(fixture_records, scope=scope, seed=0)
        labels = [e.label for e in split.all_examples]
        assert sum(labels) * 2 == len(labels)


def test_every_pair_has_its_swap(fixture_records):
    split = inspector.build_pairs(fixture_records, scope="all", seed=0)
    seen = {
        (e.dataset_id, e.record_a.model_id, e.record_b.model_id, e.label)
        for e in split.all_examples
    }
    for dataset, a, b, label in seen:
        assert (dataset, b, a, 1 - label) in seen


def test_fidelity_ties_are_excluded():
    a = make_record("a", fidelity=0.8)
    b = make_record("b", fidelity=0.8)
    c = make_record("c", fidelity=0.9)
    split = inspector.build_pairs([a, b, c], seed=0)
    ids = {(e.record_a.model_id, e.record_b.model_id) for e in split.all_examples}
    assert ids == {("a", "c"), ("c", "a"), ("b", "c"), ("c", "b")}


def test_pairs_never_cross_datasets():
    records = [
        make_record("a", 0.9, dataset="d0"), make_record("b", 0.8, dataset="d0"),
        make_record("c", 0.7, dataset="d1"), make_record("d", 0.6, dataset="d1"),
    ]
    split = inspector.build_pairs(records, seed=0)
    for e in split.all_examples:
        assert e.record_a.dataset_id == e.record_b.dataset_id == e.dataset_id


def test_intra_inter_partition(fixture_records):
    every = inspector.build_pairs(fixture_records, scope="all", seed=0)
    intra = inspector.build_pairs(fixture_records, scope="intra", seed=0)
    inter = inspector.build_pairs(fixture_records, scope="inter", seed=0)
    assert len(intra.all_examples) + len(inter.all_examples) == len(every.all_examples)
    assert all(e.intra_group for e in intra.all_examples)
    assert not any(e.intra_group for e in inter.all_examples)


def test_split_determinism_and_seed_sensitivity(fixture_records):
    s1 = inspector.build_pairs(fixture_records, seed=5)
    s2 = inspector.build_pairs(fixture_records, seed=5)
    s3 = inspector.build_pairs(fixture_records, seed=6)
    key = lambda e: (e.dataset_id, e.record_a.model_id, e.record_b.model_id)
    assert [key(e) for e in s1.test] == [key(e) for e in s2.test]
    assert [key(e) for e in s1.test] != [key(e) for e in s3.test]


def test_build_pairs_validation():
    a = make_record("a", 0.9)
    b = make_record("b", 0.8)
    with pytest.raises(ParameterError):
        inspector.build_pairs([a, b], scope="within", seed=0)
    with pytest.raises(ParameterError):
        inspector.build_pairs([a, b], test_fraction=0.0, seed=0)
    with pytest.raises(DataError, match="fewer than 2"):
        inspector.build_pairs([a], seed=0)
    with pytest.raises(DataError, match="no usable pairs"):
        inspector.build_pairs([a, make_record("b", 0.9)], seed=0)


# ----------------------------------------------------------------- features


def test_feature_layout():
    a = make_record("a", 0.9, vma=0.91, mrc=0.003)
    b = make_record("b", 0.8, vma=0.85, mrc=0.007)
    split = inspector.build_pairs([a, b], seed=0)
    ex = next(e for e in split.all_examples if e.record_a.model_id == "a")
    assert np.allclose(
        ex.features,
        [0.91, 0.003, 0.85, 0.007, 0.91 - 0.85, 0.003 - 0.007],
    )
    x, y = inspector.feature_matrix([ex], metrics=("vma",), fa=True)
    assert np.allclose(x, [[0.91, 0.85, 0.91 - 0.85]])
    assert y.tolist() == [0]
    x, _ = inspector.feature_matrix([ex], metrics=("mrc",), fa=False)
    assert np.allclose(x, [[0.003, 0.007]])
    x, _ = inspector.feature_matrix([ex], metrics=("vma", "mrc"), fa=True)
    assert x.shape == (1, 6)


def test_feature_matrix_validation():
    with pytest.raises(DataError):
        inspector.feature_matrix([])
    a = make_record("a", 0.9)
    b = make_record("b", 0.8)
    split = inspector.build_pairs([a, b], seed=0)
    with pytest.raises(ParameterError):
        inspector.feature_matrix(split.all_examples, metrics=("fidelity",))
    with pytest.raises(ParameterError):
        inspector.feature_matrix(split.all_examples, metrics=())


# ----------------------------------------------------------------- correlations


def test_pcc_exact_cases():
    assert inspector.pcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert inspector.pcc([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0)
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    y = rng.normal(size=40)
    assert inspector.pcc(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


def test_pcc_rejects_constant_and_bad_shapes():
    with pytest.raises(UndefinedCorrelationError):
        inspector.pcc([1.0, 1.0, 1.0], [1, 2, 3])
    with pytest.raises(ParameterError):
        inspector.pcc([1, 2], [1, 2, 3])
    with pytest.raises(ParameterError):
        inspector.pcc([1], [2])


def test_krc_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.normal(size=25)
    y = rng.normal(size=25)
    concordant = 0
    for i in range(25):
        for j in range(i + 1, 25):
            concordant += np.sign(x[i] - x[j]) * np.sign(y[i] - y[j])
    assert inspector.krc(x, y) == pytest.approx(concordant / (25 * 24 / 2))
    assert inspector.krc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert inspector.krc([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_krc_ties_count_zero():
    assert inspector.krc([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=2, max_size=20))
def test_krc_bounded(values):
    x = np.array(values)
    y = np.arange(len(x), dtype=np.float64)
    assert -1.0 <= inspector.krc(x, y) <= 1.0


# ----------------------------------------------------------------- comparator


def test_comparator_learns_separable_records():
    # Fidelity increases strictly with mrc here, so the pair label is a
    # deterministic function of the mrc difference and the comparator
    # should fit the training pairs almost perfectly.
    records = [
        make_record(f"m{i}", fidelity=0.5 + i / 40.0, vma=0.8, mrc=(i + 1) / 10.0)
        for i in range(12)
    ]
    split = inspector.build_pairs(records, seed=0)
    cfg = inspector.ComparatorConfig(metrics=("mrc",), epochs=300, seed=0)
    model = inspector.train_comparator(split.train, cfg)
    assert inspector.cacc(model, split.train) >= 0.99


def test_untrained_comparator_is_chance_level(fixture_records):
    split = inspector.build_pairs(fixture_records, scope="all", seed=0)
    model = inspector.train_comparator(
        split.train, inspector.ComparatorConfig(epochs=0, seed=0)
    )
    value = inspector.cacc(model, split.test)
    assert abs(value - 0.5) <= 0.1


def test_trained_comparator_beats_chance(trained_split):
    split, model = trained_split
    assert inspector.cacc(model, split.test) >= 0.75


def test_comparator_prediction_flips_under_swap(trained_split):
    # The pair features are not structurally antisymmetric, so the flip is
    # a statistical property of a well-fit comparator, not an identity.
    split, model = trained_split
    swapped = [
        inspector.PairExample(
            record_a=e.record_b, record_b=e.record_a, label=1 - e.label,
            intra_group=e.intra_group, dataset_id=e.dataset_id,
        )
        for e in split.test
    ]
    forward = inspector.comparator_predict(model, split.test)
    backward = inspector.comparator_predict(model, swapped)
    assert np.mean(forward != backward) >= 0.85


def test_comparator_probs_consistent_with_predictions(trained_split):
    split, model = trained_split
    probs = inspector.comparator_probs(model, split.test)
    preds = inspector.comparator_predict(model, split.test)
    assert np.all((probs >= 0.0) & (probs <= 1.0))
    assert np.array_equal(preds == 1, probs > 0.5)


def test_cacc_invariant_under_reordering(trained_split):
    split, model = trained_split
    base = inspector.cacc(model, split.test)
    reordered = list(reversed(split.test))
    assert inspector.cacc(model, reordered) == pytest.approx(base)
    with pytest.raises(DataError):
        inspector.cacc(model, [])


def test_train_comparator_rejects_single_class():
    a = make_record("a", 0.9, mrc=0.1)
    b = make_record("b", 0.8, mrc=0.2)
    split = inspector.build_pairs([a, b], seed=0)
    one_sided = [e for e in split.all_examples if e.label == 0]
    with pytest.raises(DataError, match="same label"):
        inspector.train_comparator(one_sided)


# ----------------------------------------------------------------- report and grid


def test_metric_report_structure(fixture_records):
    rows = inspector.metric_report(fixture_records)
    keys = {(r["dataset"], r["group"]) for r in rows}
    assert ("all", "all") in keys
    assert ("cifar10", "all") in keys
    assert ("cifar10", "ResNet") in keys
    pooled = next(r for r in rows if r["dataset"] == "all")
    assert pooled["count"] == 80
    for field in ("pcc_mrc", "krc_mrc", "pcc_vma", "krc_vma"):
        assert field in pooled and pooled[field] is not None


def test_metric_report_warns_on_small_groups():
    records = [
        make_record("a", 0.9, vma=0.9, mrc=0.1, group="ResNet"),
        make_record("b", 0.8, vma=0.8, mrc=0.2, group="ResNet"),
        make_record("c", 0.7, vma=0.7, mrc=0.3, group="LeViT"),
    ]
    with pytest.warns(UserWarning, match="fewer than 2"):
        rows = inspector.metric_report(records)
    assert not any(r["group"] == "LeViT" for r in rows)


def test_metric_report_warns_on_constant_metric():
    records = [
        make_record("a", 0.9, vma=0.8, mrc=0.1),
        make_record("b", 0.8, vma=0.8, mrc=0.2),
    ]
    with pytest.warns(UserWarning, match="constant vma"):
        rows = inspector.metric_report(records)
    assert rows[0]["pcc_vma"] is None
    assert rows[0]["pcc_mrc"] is not None


def test_reproduce_table1_grid_mechanics(fixture_records):
    cfg = inspector.ComparatorConfig(hidden=(4,), epochs=1, batch_size=64)
    result = inspector.reproduce_table1(fixture_records, seeds=(0, 1), cfg_base=cfg)
    assert result.seeds == (0, 1)
    assert set(result.cells) == {
        (row, col) for row in inspector.TABLE1_ROWS for col in inspector.TABLE1_COLUMNS
    }
    for cell in result.cells.values():
        assert len(cell["values"]) == 2
        assert cell["mean"] == pytest.approx(float(np.mean(cell["values"])))
        assert cell["std"] == pytest.approx(float(np.std(cell["values"])))
        assert 0.0 <= cell["mean"] <= 1.0


def test_reproduce_table1_parallel_matches_serial(fixture_records, monkeypatch):
    cfg = inspector.ComparatorConfig(hidden=(4,), epochs=1, batch_size=64)
    serial = inspector.reproduce_table1(fixture_records, seeds=(0,), cfg_base=cfg)
    monkeypatch.setenv("MERKIT_THREADS", "3")
    parallel = inspector.reproduce_table1(fixture_records, seeds=(0,), cfg_base=cfg)
    for key in serial.cells:
        assert serial.cells[key]["values"] == parallel.cells[key]["values"]


def test_reproduce_table1_needs_seeds(fixture_records):
    with pytest.raises(ParameterError):
        inspector.reproduce_table1(fixture_records, seeds=())
