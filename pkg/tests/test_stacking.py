from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from histotnet.errors import FormatError, ValidationError
from histotnet.stacking import (
    PERCENTILES,
    CvPlan,
    CvResult,
    GbtModel,
    GbtParams,
    StackConfig,
    build_feature_table,
    cv_score,
    cv_splits,
    exhaustive_select,
    extract_features,
    feature_columns,
    feature_names,
    gbt_predict,
    gbt_predict_proba,
    gbt_train,
    greedy_select,
    join_models,
    read_feature_table,
    split_models,
    stack_predict,
    stack_train,
    table_labels,
    write_feature_table,
)
from histotnet.stacking import selection

pred_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 30), st.integers(1, 4)),
    elements=st.floats(0.0, 1.0, allow_nan=False),
)


def _random_pred(patches: int, classes: int, seed: int = 0) -> np.ndarray:
    raw = np.random.default_rng(seed).random((patches, classes))
    return raw / raw.sum(axis=1, keepdims=True)


# ============================================================================
# Features
# ============================================================================

def test_feature_counts_and_order():
    features = extract_features(_random_pred(176, 4))
    assert len(features) == 40
    assert list(features.index[:3]) == ["c0_min", "c0_max", "c0_mean"]
    assert "c3_argmax" in features.index and "c2_p90" in features.index
    assert list(features.index[-2:]) == ["c3_gt015", "c3_gt025"]
    assert feature_names(1) == ["c0_min", "c0_max", "c0_mean", "c0_p10", "c0_p25", "c0_p75",
                                "c0_p90", "c0_gt015", "c0_gt025"]


def test_constant_matrix_features():
    features = extract_features(np.full((10, 4), 0.25))
    for k in range(4):
        for stat in ["min", "max", "mean"] + [f"p{q}" for q in PERCENTILES]:
            assert features[f"c{k}_{stat}"] == pytest.approx(0.25)
        assert features[f"c{k}_gt015"] == 10
        assert features[f"c{k}_gt025"] == 0


def test_percentiles_interpolate_linearly():
    features = extract_features(np.array([0.0, 0.1, 0.2, 0.3, 1.0]))
    assert features["c0_p10"] == pytest.approx(0.04)
    assert features["c0_p75"] == pytest.approx(0.3)
    assert features["c0_p90"] == pytest.approx(0.72)


@settings(max_examples=60, deadline=None)
@given(pred_matrices)
def test_feature_invariants(pred):
    features = extract_features(pred)
    patches, classes = pred.shape
    if classes > 1:
        assert sum(features[f"c{k}_argmax"] for k in range(classes)) == patches
    for k in range(classes):
        chain = [features[f"c{k}_{name}"] for name in ("min", "p10", "p25", "p75", "p90", "max")]
        assert all(a <= b + 1e-12 for a, b in zip(chain, chain[1:]))
        assert features[f"c{k}_min"] - 1e-12 <= features[f"c{k}_mean"] <= features[f"c{k}_max"] + 1e-12
        assert 0 <= features[f"c{k}_gt025"] <= features[f"c{k}_gt015"] <= patches


def test_empty_prediction_matrix_is_rejected():
    with pytest.raises(ValidationError):
        extract_features(np.empty((0, 4)))


# ============================================================================
# Boosted trees
# ============================================================================

def _separable(n_per_class: int = 10):
    labels = np.repeat([0, 1], n_per_class)
    x = labels + np.linspace(-0.2, 0.2, labels.size)
    return pd.DataFrame({"x": x}), labels


def _blobs(seed: int = 0):
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1, 2], 10)
    table = pd.DataFrame({
        "a": labels + rng.normal(scale=0.6, size=labels.size),
        "b": rng.normal(size=labels.size),
    })
    return table, labels


def test_stumps_fit_separable_data():
    table, labels = _separable()
    model = gbt_train(table, labels, GbtParams(rounds=10, max_depth=1))
    assert np.array_equal(gbt_predict(model, table), labels)
    assert model.tree_count == 10 * 2


def test_zero_rounds_predicts_priors():
    table = pd.DataFrame({"x": [0.0, 1.0, 2.0, 3.0]})
    model = gbt_train(table, [0, 0, 0, 1], GbtParams(rounds=0))
    assert np.allclose(gbt_predict_proba(model, table), [[0.75, 0.25]] * 4)


def test_training_loss_never_increases():
    table, labels = _blobs()
    model = gbt_train(table, labels, GbtParams(rounds=20, max_depth=2))
    losses = np.array(model.loss_history)
    assert len(losses) == 21
    assert np.all(np.diff(losses) <= 1e-12)
    assert losses[-1] < losses[0]


def test_predictions_follow_feature_names_not_positions():
    table, labels = _blobs(1)
    model = gbt_train(table, labels, GbtParams(rounds=5))
    shuffled = table[["b", "a"]]
    assert np.array_equal(gbt_predict_proba(model, table), gbt_predict_proba(model, shuffled))
    with pytest.raises(ValidationError):
        gbt_predict(model, table[["a"]])


def test_gbt_needs_two_classes_and_finite_features():
    with pytest.raises(ValidationError):
        gbt_train(pd.DataFrame({"x": [1.0, 2.0]}), [1, 1])
    with pytest.raises(ValidationError):
        gbt_train(pd.DataFrame({"x": [1.0, np.nan]}), [0, 1])


def test_gbt_accepts_arrays_with_names():
    model = gbt_train(np.array([[0.0], [1.0]]), [0, 1], GbtParams(rounds=2), feature_names=["x"])
    assert model.feature_names == ["x"]


def test_gbt_model_file_round_trip(tmp_path: Path):
    table, labels = _blobs(2)
    model = gbt_train(table, labels, GbtParams(rounds=4))
    model.save(tmp_path / "stack.json")
    restored = GbtModel.load(tmp_path / "stack.json")
    assert np.array_equal(gbt_predict_proba(restored, table), gbt_predict_proba(model, table))
    (tmp_path / "bad.json").write_text("{}", encoding="utf-8")
    with pytest.raises(FormatError):
        GbtModel.load(tmp_path / "bad.json")


# ============================================================================
# Cross-validation
# ============================================================================

def test_plan_validation():
    assert CvPlan().evaluations == 200
    with pytest.raises(ValidationError):
        CvPlan(folds=1)
    with pytest.raises(ValidationError):
        CvPlan(shuffles=0)
    assert StackConfig(folds=5, shuffles=3).plan() == CvPlan(5, 3, 0)


def test_cv_splits_partition_and_stratify():
    labels = np.repeat([0, 1, 2], [10, 13, 20])
    splits = list(cv_splits(labels, CvPlan(folds=10, shuffles=20, seed=3)))
    assert len(splits) == 200
    for shuffle in range(20):
        tests = [test for s, _, _, test in splits if s == shuffle]
        assert np.array_equal(np.sort(np.concatenate(tests)), np.arange(labels.size))
        for test in tests:
            counts = np.bincount(labels[test], minlength=3)
            ideal = np.bincount(labels) / 10
            assert np.all(np.abs(counts - ideal) <= 1)
    for _, _, train, test in splits[:5]:
        assert not set(train) & set(test)


def test_cv_splits_need_enough_members_per_class():
    with pytest.raises(ValidationError):
        list(cv_splits([0, 0, 1, 1, 1], CvPlan(folds=3, shuffles=1)))


def test_cv_score_runs_every_fold_of_every_shuffle():
    table, labels = _separable()
    params = GbtParams(rounds=3, max_depth=1)
    result = cv_score(table, labels, CvPlan(10, 20, seed=5), params)
    assert len(result.scores) == 200
    assert result.mean == 1.0
    assert result.sd == 0.0
    again = cv_score(table, labels, CvPlan(10, 20, seed=5), params)
    assert again.scores == result.scores


def test_cv_result_formatting():
    assert str(CvResult([0.5, 1.0])) == "0.7500 ± 0.2500"


# ============================================================================
# Model selection
# ============================================================================

def _model_frames(seed: int = 0):
    # informative scores stay inside ±0.2 of the label, so any midpoint split separates
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], 12)
    frames = {
        name: pd.DataFrame({"score": labels + rng.uniform(-0.2, 0.2, labels.size),
                            "spread": rng.random(labels.size)})
        for name in ("deep", "shallow", "wide")
    }
    frames["noise"] = pd.DataFrame({"score": rng.random(labels.size), "spread": rng.random(labels.size)})
    return frames, labels


def test_join_and_split_models():
    frames, _ = _model_frames()
    joined = join_models(frames, ["deep", "noise"])
    assert list(joined.columns) == ["deep:score", "deep:spread", "noise:score", "noise:spread"]
    parts = split_models(joined)
    assert list(parts) == ["deep", "noise"]
    pd.testing.assert_frame_equal(parts["deep"], frames["deep"])


def _fake_cv(table, labels, plan, params=None):
    models = set(split_models(table))
    score = 0.5 + 0.1 * len(models & {"deep", "shallow"}) - 0.15 * ("noise" in models)
    return CvResult([score])


def test_greedy_select_drops_the_harmful_model(monkeypatch):
    monkeypatch.setattr(selection, "cv_score", _fake_cv)
    frames, labels = _model_frames()
    models = ["deep", "shallow", "noise"]
    result = greedy_select(frames, labels, CvPlan(2, 1), models=models)
    assert result.selected == ["deep", "shallow"]
    assert [step.removed for step in result.trace] == [None, "noise"]
    assert result.scores == pytest.approx([0.55, 0.7])
    best = exhaustive_select(frames, labels, CvPlan(2, 1), models=models)
    assert best.selected == ["deep", "shallow"]


def test_greedy_select_keeps_a_singleton(monkeypatch):
    monkeypatch.setattr(selection, "cv_score", _fake_cv)
    frames, labels = _model_frames()
    result = greedy_select(frames, labels, CvPlan(2, 1), models=["noise"])
    assert result.selected == ["noise"]
    assert len(result.trace) == 1
    with pytest.raises(ValidationError):
        greedy_select(frames, labels, CvPlan(2, 1), models=[])


def test_greedy_select_takes_equal_score_removals(monkeypatch):
    monkeypatch.setattr(selection, "cv_score", lambda table, *args, **kw: CvResult([1.0]))
    frames, labels = _model_frames()
    result = greedy_select(frames, labels, CvPlan(2, 1))
    assert [step.removed for step in result.trace] == [None, "deep", "shallow", "wide"]
    assert result.selected == ["noise"]
    assert result.scores == [1.0] * 4


def test_exhaustive_select_prefers_smaller_subsets_on_ties(monkeypatch):
    monkeypatch.setattr(selection, "cv_score", lambda table, *args, **kw: CvResult([1.0]))
    frames, labels = _model_frames()
    assert exhaustive_select(frames, labels, CvPlan(2, 1)).selected == ["deep"]


def test_greedy_selection_end_to_end():
    frames, labels = _model_frames(3)
    plan, params = CvPlan(folds=3, shuffles=2, seed=1), GbtParams(rounds=5, max_depth=2)
    greedy = greedy_select(frames, labels, plan, params)
    exhaustive = exhaustive_select(frames, labels, plan, params)
    assert all(a <= b for a, b in zip(greedy.scores, greedy.scores[1:]))
    assert greedy.score >= greedy.scores[0]
    assert "noise" not in greedy.selected
    assert "noise" in [step.removed for step in greedy.trace]
    assert abs(greedy.score - exhaustive.score) <= 0.02
    assert exhaustive.score == 1.0


# ============================================================================
# Feature tables and the stacked classifier
# ============================================================================

def _table():
    preds = {
        "spp": [_random_pred(6, 4, seed=i) for i in range(8)],
        "ova": [np.random.default_rng(i).random((6, 1)) for i in range(8)],
    }
    return build_feature_table(preds, [f"img{i}" for i in range(8)], [0, 1, 2, 3] * 2)


def test_feature_table_layout(tmp_path: Path):
    table = _table()
    assert table.columns[0] == "image_id" and table.columns[-1] == "label"
    assert feature_columns(table).shape == (8, 40 + 9)
    assert "ova:c0_gt025" in table.columns
    write_feature_table(tmp_path / "features.csv", table)
    restored = read_feature_table(tmp_path / "features.csv")
    assert list(restored.columns) == list(table.columns)
    assert np.array_equal(table_labels(restored), table_labels(table))
    assert np.allclose(feature_columns(restored).to_numpy(), feature_columns(table).to_numpy(), rtol=0, atol=0)


def test_feature_table_validation(tmp_path: Path):
    with pytest.raises(ValidationError):
        build_feature_table({"a:b": [np.ones((2, 1))]}, ["x"])
    with pytest.raises(ValidationError):
        build_feature_table({"a": [np.ones((2, 1))]}, ["x", "y"])
    (tmp_path / "bad.csv").write_text("label,x\n0,1.0\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_feature_table(tmp_path / "bad.csv")
    (tmp_path / "order.csv").write_text("image_id,label,x\na,0,1.0\n", encoding="utf-8")
    with pytest.raises(FormatError):
        read_feature_table(tmp_path / "order.csv")


def test_stack_train_and_predict_on_a_model_subset():
    table = _table()
    model = stack_train(table, GbtParams(rounds=3), models=["spp"])
    assert all(name.startswith("spp:") for name in model.feature_names)
    classes, probs = stack_predict(model, table.drop(columns=["label"]))
    assert classes.shape == (8,)
    assert np.allclose(probs.sum(axis=1), 1.0)
    with pytest.raises(ValidationError):
        stack_train(table, models=["resnet"])
    with pytest.raises(ValidationError):
        table_labels(table.drop(columns=["label"]))
