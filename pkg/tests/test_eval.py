"""Metrics, fold splitting, cross-validation aggregation, report schema."""

import json

import jsonschema
import numpy as np
import pytest

from mixfire.backbone import default_model_config
from mixfire.data import generate_synthetic
from mixfire.evaluate import (
    METRICS_REPORT_SCHEMA,
    ConfusionMatrix,
    classification_metrics,
    confusion_matrix,
    cross_validate,
    harmonic_f1,
    kfold_split,
    report_to_dict,
    report_to_json,
)
from mixfire.train import TrainConfig

from conftest import metrics_oracle


# ---------------------------------------------------------------------------
# confusion matrix


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1], num_classes=3)
    expect = np.array([[1, 1, 0], [0, 1, 0], [0, 1, 0]])
    np.testing.assert_array_equal(cm.counts, expect)
    assert cm.total == 4 and cm.num_classes == 3


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], num_classes=2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 2], [0, 1], num_classes=2)
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, 2, 3]]))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 2]]))


# ---------------------------------------------------------------------------
# metrics


def test_metrics_match_rational_oracle_randomized(rng):
    for _ in range(200):
        c = int(rng.integers(2, 7))
        counts = rng.integers(0, 40, (c, c))
        if counts.sum() == 0:
            counts[0, 0] = 1
        report = classification_metrics(ConfusionMatrix(counts))
        expect = metrics_oracle(counts)
        assert report.accuracy == expect["accuracy"]
        assert report.precision == expect["precision"]
        assert report.recall == expect["recall"]
        assert report.f1 == expect["f1"]


def test_perfect_and_empty_class_cases():
    perfect = classification_metrics(ConfusionMatrix(np.diag([5, 3, 2])))
    assert perfect.accuracy == perfect.precision == perfect.recall == 1.0
    assert perfect.f1 == 1.0

    # class 1 never predicted: precision undefined -> 0 with a flag
    cm = ConfusionMatrix(np.array([[4, 0], [2, 0]]))
    report = classification_metrics(cm)
    assert report.per_class[1].precision == 0.0
    assert not report.per_class[1].precision_defined
    assert report.per_class[1].recall == 0.0
    assert report.per_class[0].recall_defined


def test_metrics_reject_empty_matrix():
    with pytest.raises(ValueError):
        classification_metrics(ConfusionMatrix(np.zeros((2, 2), dtype=int)))


def test_harmonic_f1_values():
    assert harmonic_f1(0.0, 0.0) == 0.0
    assert harmonic_f1(1.0, 1.0) == 1.0
    assert harmonic_f1(0.5, 1.0) == pytest.approx(2 / 3, rel=1e-15)


def test_f1_is_harmonic_mean_of_macro_pair(rng):
    for _ in range(50):
        counts = rng.integers(0, 30, (3, 3))
        counts[0, 0] += 1
        report = classification_metrics(ConfusionMatrix(counts))
        assert report.f1 == pytest.approx(
            harmonic_f1(report.precision, report.recall), abs=1e-15)


# ---------------------------------------------------------------------------
# fold splitting


def test_kfold_validation():
    with pytest.raises(ValueError):
        kfold_split(10, 1)
    with pytest.raises(ValueError):
        kfold_split(3, 4)
    with pytest.raises(ValueError):
        kfold_split(6, 2, labels=np.zeros(5))


def test_kfold_partitions_everything(rng):
    split = kfold_split(23, 4, seed=3)
    assert len(split) == 4
    all_test = np.concatenate([test for _, test in split.folds])
    assert sorted(all_test.tolist()) == list(range(23))
    for train, test in split.folds:
        assert len(np.intersect1d(train, test)) == 0
        assert len(train) + len(test) == 23
        combined = np.sort(np.concatenate([train, test]))
        np.testing.assert_array_equal(combined, np.arange(23))


def test_kfold_sizes_differ_by_at_most_one():
    split = kfold_split(25, 4, seed=0)
    sizes = sorted(len(test) for _, test in split.folds)
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == 25


def test_kfold_stratification_balances_classes(rng):
    labels = np.asarray([0] * 11 + [1] * 7 + [2] * 5)
    labels = labels[rng.permutation(len(labels))]
    split = kfold_split(len(labels), 3, labels=labels, seed=1)
    for cls in (0, 1, 2):
        per_fold = [int((labels[test] == cls).sum())
                    for _, test in split.folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_kfold_is_seed_deterministic():
    a = kfold_split(30, 5, seed=4)
    b = kfold_split(30, 5, seed=4)
    c = kfold_split(30, 5, seed=5)
    for (t1, e1), (t2, e2) in zip(a.folds, b.folds):
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(e1, e2)
    assert any(not np.array_equal(e1, e3)
               for (_, e1), (_, e3) in zip(a.folds, c.folds))


# ---------------------------------------------------------------------------
# cross-validation and reports


@pytest.fixture(scope="module")
def tiny_cv():
    dataset = generate_synthetic(6, image_size=16, seed=0)
    config = default_model_config(input_size=16, d_model=8, token_hidden=8,
                                  channel_hidden=16)
    train_config = TrainConfig(epochs=1, batch_size=4, seed=0)
    report = cross_validate(dataset, config, train_config, k=2, seed=0)
    return report


def test_cross_validate_aggregates(tiny_cv):
    report = tiny_cv
    assert len(report.folds) == 2
    assert set(report.mean) == {"accuracy", "precision", "recall", "f1"}
    assert set(report.std) == set(report.mean)
    fold_acc = [f.accuracy for f in report.folds]
    assert report.accuracy == pytest.approx(np.mean(fold_acc), abs=1e-15)
    assert report.mean["accuracy"] == report.accuracy
    # the top-level f1 is recomputed from the mean precision/recall pair
    assert report.f1 == pytest.approx(
        harmonic_f1(report.precision, report.recall), abs=1e-15)
    assert len(report.per_class) == 3


def test_report_json_is_schema_valid(tiny_cv):
    payload = json.loads(report_to_json(tiny_cv))
    jsonschema.validate(payload, METRICS_REPORT_SCHEMA)
    assert payload["mean"]["accuracy"] == tiny_cv.mean["accuracy"]


def test_report_json_shape(tiny_cv):
    text = report_to_json(tiny_cv)
    assert text.endswith("\n")
    assert json.loads(text) == report_to_dict(tiny_cv)
    single = classification_metrics(ConfusionMatrix(np.diag([2, 2])))
    payload = json.loads(report_to_json(single))
    jsonschema.validate(payload, METRICS_REPORT_SCHEMA)
    assert "folds" not in payload and "mean" not in payload


def test_cross_validate_rejects_empty_dataset():
    config = default_model_config(input_size=16, d_model=8, token_hidden=8,
                                  channel_hidden=16)
    empty = generate_synthetic(1, image_size=16, seed=0).subset([])
    with pytest.raises(ValueError):
        cross_validate(empty, config, TrainConfig(epochs=1), k=2)
