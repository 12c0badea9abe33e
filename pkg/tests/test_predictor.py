import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prefgen.data import ChoiceRecord, ConsumerProfile, Exposure, Source
from prefgen.exceptions import DataIntegrityError, DimensionMismatchError, SingleClassError
from prefgen.predictor import (ChoicePredictor, PredictorMetrics, aggregate_popularity,
                               aggregate_popularity_many, build_feature_rows, evaluate_predictor,
                               load_predictor, predict_choice_prob, rows_to_arrays, save_predictor,
                               upsample_minority, write_metrics_report)


def _record(c, t, y):
    return ChoiceRecord(c, t, y, Exposure.CHOSEN if y else Exposure.UNCHOSEN_IN_CHOSEN_THEME)


def test_feature_row_layout_full_size():
    faces = {"c": np.arange(128.0)}
    designs = {"t": -np.arange(1000.0)}
    (row,) = build_feature_rows([_record("c", "t", 1)], faces, designs, {"t": 4})
    assert row.x.shape == (1129,)
    assert np.array_equal(row.x[:128], faces["c"])
    assert np.array_equal(row.x[128:1128], designs["t"])
    assert row.x[-1] == 4 and row.y == 1


def test_zero_embeddings_leave_only_rank():
    (row,) = build_feature_rows([_record("c", "t", 0)], {"c": np.zeros(3)}, {"t": np.zeros(5)}, {"t": 5})
    assert np.array_equal(row.x, [0, 0, 0, 0, 0, 0, 0, 0, 5])


def test_feature_rows_permutation_invariant():
    rng = np.random.default_rng(0)
    faces = {f"c{i}": rng.random(3) for i in range(4)}
    designs = {f"t{j}": rng.random(2) for j in range(3)}
    ranks = {f"t{j}": j + 1 for j in range(3)}
    recs = [_record(f"c{i}", f"t{j}", (i + j) % 2) for i in range(4) for j in range(3)]
    a = build_feature_rows(recs, faces, designs, ranks)
    b = build_feature_rows(recs[::-1], faces, designs, ranks)
    key = lambda r: (r.consumer_id, r.template_id, tuple(r.x), r.y)  # noqa: E731
    assert sorted(map(key, a)) == sorted(map(key, b))


def test_feature_errors_name_offender():
    with pytest.raises(DataIntegrityError, match="ghost"):
        build_feature_rows([_record("ghost", "t", 1)], {"c": np.zeros(2)}, {"t": np.zeros(2)}, {"t": 1})
    with pytest.raises(DimensionMismatchError, match="t2"):
        build_feature_rows([_record("c", "t", 1)], {"c": np.zeros(2)},
                           {"t": np.zeros(2), "t2": np.zeros(3)}, {"t": 1, "t2": 1})


def test_upsample_reference_counts():
    y = np.array([1] * 3629 + [0] * 25000)
    X = np.arange(y.size)[:, None]
    Xu, yu = upsample_minority(X, y, 18000, seed=0)
    assert (yu == 1).sum() == 18000
    assert np.array_equal(np.sort(Xu[yu == 0, 0]), np.arange(3629, y.size))
    assert set(Xu[yu == 1, 0]) <= set(range(3629))


def test_upsample_identity_and_errors():
    y = np.array([1, 1, 0, 0, 0])
    X = np.arange(5)[:, None]
    Xu, yu = upsample_minority(X, y, 2, seed=0)
    assert sorted(Xu[:, 0]) == list(range(5))
    with pytest.raises(SingleClassError):
        upsample_minority(X, np.ones(5), 10)
    with pytest.raises(ValueError):
        upsample_minority(X, y, 1)


def test_upsample_feature_rows_and_reproducible():
    rows = build_feature_rows([_record(f"c{i}", "t", int(i < 2)) for i in range(6)],
                              {f"c{i}": np.array([float(i)]) for i in range(6)}, {"t": np.zeros(1)}, {"t": 1})
    a = upsample_minority(rows, target=5, seed=3)
    b = upsample_minority(rows, target=5, seed=3)
    assert [r.consumer_id for r in a] == [r.consumer_id for r in b]
    assert sum(r.y for r in a) == 5


def test_single_class_training_rejected():
    with pytest.raises(SingleClassError):
        ChoicePredictor(n_trees=3).fit(np.random.default_rng(0).random((10, 2)), np.ones(10))


def test_separable_training_accuracy():
    rng = np.random.default_rng(0)
    X = rng.random((200, 2))
    y = (X[:, 0] + X[:, 1] > 1).astype(int)
    model = ChoicePredictor(n_trees=20, seed=0).fit(X, y)
    assert (model.predict(X) == y).mean() == 1.0


def test_training_is_seed_deterministic():
    rng = np.random.default_rng(1)
    X, y = rng.random((100, 4)), rng.integers(0, 2, 100)
    a = ChoicePredictor(n_trees=10, seed=5).fit(X, y).choice_prob(X)
    b = ChoicePredictor(n_trees=10, seed=5).fit(X, y).choice_prob(X)
    assert np.array_equal(a, b)


def test_constant_trees_give_one():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    model = ChoicePredictor(n_trees=5, seed=0).fit(X, [0, 1])
    for tree in model.forest_.estimators_:
        tree.tree_.value[:] = np.array([0.0, 1.0])
    assert predict_choice_prob(model, [], [0.3], 0.7) == 1.0


def test_probabilities_in_unit_interval_and_match_tree_average():
    rng = np.random.default_rng(2)
    X, y = rng.random((80, 3)), rng.integers(0, 2, 80)
    model = ChoicePredictor(n_trees=3, seed=1).fit(X, y)
    probes = rng.normal(0, 3, (10_000, 3))
    p = model.choice_prob(probes)
    assert p.min() >= 0 and p.max() <= 1
    manual = np.mean([t.predict_proba(probes.astype(np.float32))[:, 1] for t in model.forest_.estimators_], axis=0)
    assert np.max(np.abs(manual - p)) <= 1e-12


def test_dimension_mismatch_rejected():
    model = ChoicePredictor(n_trees=2).fit(np.random.default_rng(0).random((10, 3)), [0, 1] * 5)
    with pytest.raises(DimensionMismatchError):
        model.choice_prob(np.zeros((1, 4)))


class _FixedProb:
    """Stand-in model whose probability is the first feature."""

    def choice_prob(self, X):
        return np.asarray(X)[:, 0].astype(float)


def test_aggregate_mean_and_external_exclusion():
    consumers = [ConsumerProfile("a", np.array([0.2]), Source.INTERNAL),
                 ConsumerProfile("b", np.array([0.8]), Source.INTERNAL),
                 ConsumerProfile("x", np.array([0.99]), Source.EXTERNAL)]
    assert aggregate_popularity(_FixedProb(), np.zeros(2), 1, consumers) == pytest.approx(0.5, abs=1e-7)
    flat = np.full((4, 1), 0.5)
    assert aggregate_popularity(_FixedProb(), np.zeros(2), 1, flat) == pytest.approx(0.5, abs=1e-7)


def test_aggregate_batched_matches_scalar_loop():
    rng = np.random.default_rng(3)
    X, y = rng.random((120, 5)), rng.integers(0, 2, 120)
    model = ChoicePredictor(n_trees=8, seed=0).fit(X, y)
    faces = rng.random((7, 2))
    designs = rng.random((9, 2))
    ranks = rng.integers(1, 6, 9)
    batched = aggregate_popularity_many(model, designs, ranks, faces, chunk_rows=10)
    loop = [np.mean([predict_choice_prob(model, f, d, r) for f in faces]) for d, r in zip(designs, ranks)]
    assert np.max(np.abs(batched - loop)) <= 1e-12
    shuffled = aggregate_popularity_many(model, designs, ranks, faces[::-1])
    assert np.max(np.abs(batched - shuffled)) <= 1e-12


def test_aggregate_needs_internal_consumer():
    ext = [ConsumerProfile("x", np.array([0.5]), Source.EXTERNAL)]
    with pytest.raises(ValueError):
        aggregate_popularity(_FixedProb(), np.zeros(1), 1, ext)


@pytest.mark.parametrize("fnr,fpr,expected", [(0.212, 0.206, 0.791), (0.148, 0.202, 0.825)])
def test_balanced_accuracy_anchor_rows(fnr, fpr, expected):
    m = PredictorMetrics.from_rates(fnr, fpr)
    assert m.balanced_accuracy == 1 - (fnr + fpr) / 2
    assert round(m.balanced_accuracy, 3) == expected


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 50), st.integers(0, 50), st.integers(1, 50), st.integers(0, 50))
def test_metric_identity_from_counts(tp, fn, tn, fp):
    m = PredictorMetrics.from_counts(tp, tn, fp, fn)
    assert m.balanced_accuracy == 1 - (m.fnr + m.fpr) / 2
    assert m.accuracy == (tp + tn) / (tp + tn + fp + fn)


def test_evaluate_perfect_and_single_class(tmp_path):
    X = np.array([[0.0], [0.1], [0.9], [1.0]])
    y = np.array([0, 0, 1, 1])
    model = ChoicePredictor(n_trees=5, seed=0).fit(X, y)
    m = evaluate_predictor(model, X, y)
    assert (m.accuracy, m.fnr, m.fpr, m.balanced_accuracy) == (1.0, 0.0, 0.0, 1.0)
    with pytest.raises(SingleClassError):
        evaluate_predictor(model, X[2:], y[2:])
    write_metrics_report(tmp_path / "m.csv", {"Prediction Model 1": m})
    assert "balanced_accuracy" in (tmp_path / "m.csv").read_text()


def test_evaluate_accepts_rows():
    recs = [_record(f"c{i}", "t", i % 2) for i in range(20)]
    faces = {f"c{i}": np.array([float(i % 2)]) for i in range(20)}
    rows = build_feature_rows(recs, faces, {"t": np.zeros(1)}, {"t": 1})
    model = ChoicePredictor(n_trees=10, seed=0).fit(*rows_to_arrays(rows))
    assert evaluate_predictor(model, rows).accuracy == 1.0


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    X, y = rng.random((50, 4)), rng.integers(0, 2, 50)
    model = ChoicePredictor(n_trees=4, seed=2, provenance="internal+external").fit(X, y)
    save_predictor(model, tmp_path / "model.joblib", face_dim=2)
    back = load_predictor(tmp_path / "model.joblib")
    assert np.array_equal(back.choice_prob(X), model.choice_prob(X))
    assert back.provenance == "internal+external"
    assert '"design_dim": 1' in (tmp_path / "model.joblib.json").read_text()
