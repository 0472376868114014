"""Stratified k-fold experiments, pooled classification metrics and cohort reports."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from datetime import date
from typing import Union

import numpy as np

from .classifiers import LogisticModel, MlpModel, ThresholdRule, train_logistic, train_mlp
from .config import RunConfig
from .features import FEATURE_NAMES, LOGISTIC_FEATURES, extract_features
from .records import Dataset, censor
from .timeline import (
    ClientHistoryStats,
    CohortReport,
    client_stats,
    cohort_report,
    derive_stays,
    label_chronic,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("threshold", "logistic", "mlp")
ALGORITHM_TITLES = {
    "logistic": "Logistic Regression",
    "mlp": "Neural Network",
    "threshold": "Threshold",
}
_LOGISTIC_COLS = [FEATURE_NAMES.index(n) for n in LOGISTIC_FEATURES]


class ExperimentError(RuntimeError):
    """Training failed inside a fold."""

    def __init__(self, fold: int, cause: Exception) -> None:
        self.fold = fold
        super().__init__(f"fold {fold}: {cause}")


# --------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: Mapping[str, int]
    k: int

    def members(self, fold: int) -> list[str]:
        return [cid for cid, f in self.fold_of.items() if f == fold]


def stratified_kfold(labels: Mapping[str, bool], k: int = 10, seed: int = 0) -> FoldAssignment:
    """Shuffle each class with ``seed`` and deal clients round-robin into ``k`` folds.

    Negatives continue the deal where the positives stopped, so fold sizes
    also differ by at most one.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    ids = sorted(labels)
    pos = [cid for cid in ids if labels[cid]]
    neg = [cid for cid in ids if not labels[cid]]
    if min(len(pos), len(neg)) < k:
        raise ValueError(f"k={k} exceeds the minority class size ({min(len(pos), len(neg))})")
    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    for j, i in enumerate(rng.permutation(len(pos))):
        fold_of[pos[i]] = j % k
    offset = len(pos)
    for j, i in enumerate(rng.permutation(len(neg))):
        fold_of[neg[i]] = (offset + j) % k
    return FoldAssignment(fold_of, k)


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @classmethod
    def from_totals(cls, tp: int, fp: int, positives: int, negatives: int) -> ConfusionCounts:
        return cls(tp, fp, positives - tp, negatives - fp)

    @classmethod
    def from_predictions(cls, truth: np.ndarray, predicted: np.ndarray) -> ConfusionCounts:
        truth = np.asarray(truth, dtype=bool)
        predicted = np.asarray(predicted, dtype=bool)
        return cls(
            int(np.sum(truth & predicted)),
            int(np.sum(~truth & predicted)),
            int(np.sum(truth & ~predicted)),
            int(np.sum(~truth & ~predicted)),
        )

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class MetricsReport:
    tpr: float | None
    fpr: float | None
    precision: float | None
    accuracy: float
    counts: ConfusionCounts

    @property
    def group_size(self) -> int:
        return self.counts.tp + self.counts.fp

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "precision": self.precision,
            "accuracy": self.accuracy,
            "group_size": self.group_size,
            "counts": {"tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn},
        }


def classification_metrics(c: ConfusionCounts) -> MetricsReport:
    """Rates from pooled counts; a rate with a zero denominator is None."""
    total = c.positives + c.negatives
    if total == 0:
        raise ValueError("empty population")
    tpr = c.tp / c.positives if c.positives else None
    fpr = c.fp / c.negatives if c.negatives else None
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    return MetricsReport(tpr, fpr, precision, (c.tp + c.tn) / total, c)


# --------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class PreparedCohort:
    """Labels, raw features and history statistics for every usable client."""

    client_ids: tuple[str, ...]
    labels: np.ndarray  # bool
    features: np.ndarray  # (n, 10) raw, columns FEATURE_NAMES
    stats: tuple[ClientHistoryStats, ...]
    dropped_no_sleep: int = 0

    def __len__(self) -> int:
        return len(self.client_ids)

    def label_map(self) -> dict[str, bool]:
        return dict(zip(self.client_ids, self.labels.tolist()))


def prepare(dataset: Dataset, config: RunConfig = RunConfig()) -> PreparedCohort:
    """Censor (when bounds are configured), label, featurize and summarise each client."""
    if config.min_first_sleep is not None or config.max_first_sleep is not None:
        res = censor(
            dataset,
            config.min_first_sleep or date.min,
            config.max_first_sleep or date.max,
        )
        log.info(
            "censoring removed %d (no sleep), %d (before), %d (after); %d retained",
            res.removed_no_sleep, res.removed_before, res.removed_after, res.retained,
        )
        dataset = res.dataset
    tz = config.tz
    ids, labels, rows, stats = [], [], [], []
    dropped = 0
    for cid in sorted(dataset.clients):
        hist = dataset.clients[cid]
        stays = derive_stays(hist, tz)
        if not stays.dates:
            dropped += 1
            continue
        ids.append(cid)
        labels.append(label_chronic(stays, config.chronic_rules))
        rows.append(extract_features(hist, config.window_days, tz).as_tuple())
        stats.append(client_stats(hist, config.episode_gap_days, tz, config.gap_mode))
    features = np.array(rows, dtype=float).reshape(len(rows), len(FEATURE_NAMES))
    return PreparedCohort(tuple(ids), np.array(labels, dtype=bool), features, tuple(stats), dropped)


Model = Union[LogisticModel, MlpModel, None]


@dataclass(frozen=True)
class ExperimentResult:
    algorithm: str
    metrics: MetricsReport
    cohort: CohortReport | None  # None when nothing was predicted positive
    folds: FoldAssignment
    probabilities: np.ndarray  # NaN for the threshold rule
    predicted: np.ndarray
    models: tuple[Model, ...]
    client_ids: tuple[str, ...]


def fit_fold(algorithm: str, x_train: np.ndarray, y_train: np.ndarray, config: RunConfig, fold: int) -> Model:
    """Train one fold's model on raw training features (threshold rule: nothing to fit)."""
    if algorithm == "threshold":
        return None
    cfg = config.train_config(algorithm, fold)
    if algorithm == "logistic":
        return train_logistic(x_train[:, _LOGISTIC_COLS], y_train, cfg)
    if algorithm == "mlp":
        return train_mlp(x_train, y_train, cfg, config.mlp_l2_penalty, config.mlp_hidden_units)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def predict_fold(algorithm: str, model: Model, x: np.ndarray, config: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if algorithm == "threshold":
        rule = ThresholdRule(config.threshold_min_stays, config.window_days)
        sleep = x[:, FEATURE_NAMES.index("sleep")]
        return np.full(len(x), np.nan), rule.predict_array(sleep)
    if algorithm == "logistic":
        proba = model.predict_proba(x[:, _LOGISTIC_COLS])
    else:
        proba = model.predict_proba(x)
    return proba, proba >= 0.5


def run_experiment(
    data: Dataset | PreparedCohort,
    algorithm: str,
    k: int | None = None,
    seed: int | None = None,
    config: RunConfig = RunConfig(),
) -> ExperimentResult:
    """Cross-validate one algorithm; every client is predicted exactly once.

    Confusion counts are pooled over the ``k`` test folds and the cohort
    report covers the full histories of all predicted-positive clients.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    k = config.k if k is None else k
    seed = config.seed if seed is None else seed
    prep = prepare(data, config) if isinstance(data, Dataset) else data
    if len(prep) == 0:
        raise ValueError("no clients with Sleep events to evaluate")

    folds = stratified_kfold(prep.label_map(), k, seed)
    fold_idx = np.array([folds.fold_of[cid] for cid in prep.client_ids])
    proba = np.full(len(prep), np.nan)
    predicted = np.zeros(len(prep), dtype=bool)
    models: list[Model] = []
    for f in range(k):
        test = fold_idx == f
        train = ~test
        try:
            model = fit_fold(algorithm, prep.features[train], prep.labels[train], config, f)
        except (ArithmeticError, RuntimeError, ValueError) as exc:
            raise ExperimentError(f, exc) from exc
        models.append(model)
        proba[test], predicted[test] = predict_fold(algorithm, model, prep.features[test], config)
        log.debug("%s fold %d: %d test clients, %d flagged", algorithm, f, int(test.sum()), int(predicted[test].sum()))

    metrics = classification_metrics(ConfusionCounts.from_predictions(prep.labels, predicted))
    flagged = [s for s, p in zip(prep.stats, predicted) if p]
    cohort = cohort_report(flagged, len(prep)) if flagged else None
    return ExperimentResult(algorithm, metrics, cohort, folds, proba, predicted, tuple(models), prep.client_ids)


# --------------------------------------------------------------------------
# reports


def _rate(v: float | None, count: int | None = None) -> str:
    if v is None:
        return "n/a"
    return f"{v:.3f}" if count is None else f"{v:.3f} ({count})"


def format_metrics_table(results: Sequence[ExperimentResult]) -> str:
    name_w = max(len(ALGORITHM_TITLES[r.algorithm]) for r in results)
    head = f"{'':<{name_w}}  {'True Pos. Rate':>16}  {'False Pos. Rate':>16}  {'Confidence':>10}  {'Accuracy':>8}"
    sub = f"{'':<{name_w}}  {'(Sensitivity)':>16}  {'(False Alarm)':>16}  {'':>10}  {'':>8}"
    lines = [head, sub, "-" * len(head)]
    for r in results:
        m = r.metrics
        lines.append(
            f"{ALGORITHM_TITLES[r.algorithm]:<{name_w}}  {_rate(m.tpr, m.counts.tp):>16}  "
            f"{_rate(m.fpr, m.counts.fp):>16}  {_rate(m.precision):>10}  {m.accuracy:>8.3f}"
        )
    return "\n".join(lines) + "\n"


def format_report(results: Sequence[ExperimentResult], config: RunConfig, header: Mapping[str, object] = {}) -> str:
    lines = ["# effective configuration"]
    for key, value in sorted({**config.to_dict(), **header}.items()):
        lines.append(f"# {key} = {value}")
    out = "\n".join(lines) + "\n\nBinary classification metrics\n\n" + format_metrics_table(results)
    for r in results:
        title = f"{ALGORITHM_TITLES[r.algorithm]} cohort characteristics"
        if r.cohort is None:
            out += f"\n{title}\n(no clients predicted positive)\n"
        else:
            out += "\n" + r.cohort.to_text(title)
    return out


def results_to_dict(results: Sequence[ExperimentResult], config: RunConfig, header: Mapping[str, object] = {}) -> dict:
    return {
        "config": {**config.to_dict(), **header},
        "results": {
            r.algorithm: {
                "metrics": r.metrics.to_dict(),
                "cohort": None if r.cohort is None else r.cohort.to_dict(),
            }
            for r in results
        },
    }
