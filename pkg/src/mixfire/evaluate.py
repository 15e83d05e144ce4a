"""Confusion-matrix metrics and the seeded k-fold cross-validation harness.

Metrics are computed in exact rational arithmetic and converted to floats
only at the boundary, so macro averages never drift from their counting
definition.  Precision and recall are macro-averaged over classes; F1 is
the harmonic mean of that macro pair.  A class whose denominator is zero
contributes 0 and is flagged rather than producing NaN.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .backbone import ModelConfig, ModelParams

THREADS_ENV = "MIXFIRE_THREADS"


@dataclass
class ConfusionMatrix:
    """counts[t][p] = samples of true class t predicted as class p."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"confusion matrix must be square, "
                             f"got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("confusion matrix entries must be >= 0")
        self.counts = arr

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(true_labels, predicted_labels, num_classes: int
                     ) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a num_classes^2 matrix."""
    true_arr = [int(t) for t in true_labels]
    pred_arr = [int(p) for p in predicted_labels]
    if len(true_arr) != len(pred_arr):
        raise ValueError(f"label lists differ in length: "
                         f"{len(true_arr)} vs {len(pred_arr)}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_arr, pred_arr):
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise ValueError(f"label pair ({t}, {p}) out of range "
                             f"[0, {num_classes})")
        counts[t, p] += 1
    return ConfusionMatrix(counts)


@dataclass
class ClassMetrics:
    """One-vs-rest precision/recall for a single class.

    The *_defined flags are False when the denominator was zero and the
    value was set to 0 by convention.
    """

    precision: float
    recall: float
    precision_defined: bool = True
    recall_defined: bool = True


@dataclass
class MetricsReport:
    """accuracy / macro precision / macro recall / harmonic F1.

    For cross-validation reports, ``folds`` holds one report per fold and
    ``mean``/``std`` summarize each metric across folds; the top-level
    precision and recall are then the fold means, with f1 recomputed from
    that mean pair so the f1 = 2PR/(P+R) relation holds for every report.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: list[ClassMetrics]
    folds: list["MetricsReport"] | None = None
    mean: dict[str, float] | None = None
    std: dict[str, float] | None = None


def _safe_frac(num: int, den: int) -> tuple[Fraction, bool]:
    if den == 0:
        return Fraction(0), False
    return Fraction(num, den), True


def harmonic_f1(precision: float, recall: float) -> float:
    """2PR/(P+R), or 0 when both inputs are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Exact-rational metrics from one confusion matrix."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("cannot compute metrics from an empty matrix")
    c = cm.num_classes
    accuracy = Fraction(int(np.trace(counts)), total)
    per_class: list[ClassMetrics] = []
    prec_sum, rec_sum = Fraction(0), Fraction(0)
    for i in range(c):
        tp = int(counts[i, i])
        fp = int(counts[:, i].sum()) - tp
        fn = int(counts[i, :].sum()) - tp
        prec, prec_ok = _safe_frac(tp, tp + fp)
        rec, rec_ok = _safe_frac(tp, tp + fn)
        prec_sum += prec
        rec_sum += rec
        per_class.append(ClassMetrics(precision=float(prec),
                                      recall=float(rec),
                                      precision_defined=prec_ok,
                                      recall_defined=rec_ok))
    precision = prec_sum / c
    recall = rec_sum / c
    if precision + recall == 0:
        f1 = Fraction(0)
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(accuracy=float(accuracy), precision=float(precision),
                         recall=float(recall), f1=float(f1),
                         per_class=per_class)


# ---------------------------------------------------------------------------
# fold splitting


@dataclass
class FoldSplit:
    """k ordered (train_indices, test_indices) pairs partitioning 0..n-1."""

    folds: list[tuple[np.ndarray, np.ndarray]]

    def __len__(self) -> int:
        return len(self.folds)


def kfold_split(n: int, k: int, labels=None, seed: int = 0) -> FoldSplit:
    """Seeded disjoint split of range(n) into k test folds.

    With ``labels``, the split is stratified: each class's indices are
    shuffled and dealt across folds so per-class counts differ by at most
    one, with the remainder rotated between classes to balance fold sizes.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k = {k} exceeds sample count {n}")
    rng = np.random.default_rng(seed)
    tests: list[list[int]] = [[] for _ in range(k)]
    if labels is None:
        perm = rng.permutation(n)
        pos = 0
        for i in range(k):
            size = n // k + (1 if i < n % k else 0)
            tests[i].extend(perm[pos:pos + size].tolist())
            pos += size
    else:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), "
                             f"got {labels.shape}")
        offset = 0
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(len(idx))]
            base, rem = divmod(len(idx), k)
            pos = 0
            for i in range(k):
                take = base + (1 if (i - offset) % k < rem else 0)
                tests[i].extend(idx[pos:pos + take].tolist())
                pos += take
            offset = (offset + rem) % k
    everything = np.arange(n)
    folds = []
    for chunk in tests:
        test = np.sort(np.asarray(chunk, dtype=np.int64))
        folds.append((np.setdiff1d(everything, test), test))
    return FoldSplit(folds)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldResult:
    """Trained model and test-set predictions of one fold."""

    params: ModelParams
    test_indices: np.ndarray
    predictions: list[int]
    report: MetricsReport


CV_METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


def _fold_seed(base_seed: int, fold_index: int) -> int:
    # spread fold seeds so adjacent folds share no generator stream
    return base_seed * 1000 + fold_index


def cross_validate(dataset, model_config: ModelConfig, train_config,
                   k: int = 5, seed: int = 0, threads: int | None = None,
                   return_folds: bool = False):
    """Train and evaluate one fresh model per fold; aggregate the metrics.

    ``seed`` drives the stratified split; fold i trains with seed
    ``train_config.seed * 1000 + i``.  ``threads`` caps concurrent fold
    training (default: the MIXFIRE_THREADS env var, else 1).  Returns the
    aggregate MetricsReport, plus per-fold artifacts when ``return_folds``.
    """
    from .train import predict, train  # deferred to avoid a module cycle

    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    labels = np.asarray(dataset.labels)
    split = kfold_split(len(dataset), k, labels=labels, seed=seed)
    num_classes = model_config.backbone.num_classes

    def run_fold(i: int) -> FoldResult:
        train_idx, test_idx = split.folds[i]
        fold_cfg = replace(train_config, seed=_fold_seed(train_config.seed, i))
        params, _ = train(dataset.subset(train_idx), model_config, fold_cfg)
        preds = predict(params, [dataset.images[j] for j in test_idx],
                        model_config)
        cm = confusion_matrix(labels[test_idx], preds, num_classes)
        return FoldResult(params=params, test_indices=test_idx,
                          predictions=preds,
                          report=classification_metrics(cm))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, range(k)))
    else:
        results = [run_fold(i) for i in range(k)]

    fold_reports = [r.report for r in results]
    mean = {key: float(np.mean([getattr(r, key) for r in fold_reports]))
            for key in CV_METRIC_KEYS}
    std = {key: float(np.std([getattr(r, key) for r in fold_reports]))
           for key in CV_METRIC_KEYS}
    per_class = []
    for c in range(num_classes):
        per_class.append(ClassMetrics(
            precision=float(np.mean([r.per_class[c].precision
                                     for r in fold_reports])),
            recall=float(np.mean([r.per_class[c].recall
                                  for r in fold_reports])),
            precision_defined=all(r.per_class[c].precision_defined
                                  for r in fold_reports),
            recall_defined=all(r.per_class[c].recall_defined
                               for r in fold_reports)))
    report = MetricsReport(accuracy=mean["accuracy"],
                           precision=mean["precision"],
                           recall=mean["recall"],
                           f1=harmonic_f1(mean["precision"], mean["recall"]),
                           per_class=per_class, folds=fold_reports,
                           mean=mean, std=std)
    if return_folds:
        return report, results
    return report


# ---------------------------------------------------------------------------
# serialization


def report_to_dict(report: MetricsReport) -> dict:
    out = {
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "per_class": [{
            "precision": c.precision,
            "recall": c.recall,
            "precision_defined": c.precision_defined,
            "recall_defined": c.recall_defined,
        } for c in report.per_class],
    }
    if report.folds is not None:
        out["folds"] = [report_to_dict(f) for f in report.folds]
    if report.mean is not None:
        out["mean"] = dict(report.mean)
    if report.std is not None:
        out["std"] = dict(report.std)
    return out


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


_PER_CLASS_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["precision", "recall",
                     "precision_defined", "recall_defined"],
        "properties": {
            "precision": {"type": "number", "minimum": 0, "maximum": 1},
            "recall": {"type": "number", "minimum": 0, "maximum": 1},
            "precision_defined": {"type": "boolean"},
            "recall_defined": {"type": "boolean"},
        },
    },
}

_MEAN_STD_SCHEMA = {
    "type": "object",
    "required": list(CV_METRIC_KEYS),
    "properties": {key: {"type": "number"} for key in CV_METRIC_KEYS},
}

METRICS_REPORT_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "precision", "recall", "f1", "per_class"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "precision": {"type": "number", "minimum": 0, "maximum": 1},
        "recall": {"type": "number", "minimum": 0, "maximum": 1},
        "f1": {"type": "number", "minimum": 0, "maximum": 1},
        "per_class": _PER_CLASS_SCHEMA,
        "folds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["accuracy", "precision", "recall", "f1",
                             "per_class"],
            },
        },
        "mean": _MEAN_STD_SCHEMA,
        "std": _MEAN_STD_SCHEMA,
    },
}
