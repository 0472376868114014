"""90-day summary features anchored at the first sleep, and standardization."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import astuple, dataclass, fields
from datetime import timedelta, timezone, tzinfo

import numpy as np

from .records import ClientHistory, EventKind, first_sleep_date

FEATURE_NAMES = (
    "age",
    "bar",
    "sleep",
    "log",
    "counsellor",
    "police",
    "ems",
    "health",
    "violence",
    "addiction",
)
LOGISTIC_FEATURES = ("sleep", "age")
WINDOW_DAYS = 90

_KIND_FIELD = {EventKind.BAR: 1, EventKind.LOG: 3, EventKind.COUNSELLOR: 4}


class NoAnchorError(ValueError):
    """Raised when a client has no Sleep event to anchor the feature window."""


@dataclass(frozen=True, slots=True)
class FeatureVector:
    age: int
    bar: int
    sleep: int
    log: int
    counsellor: int
    police: int
    ems: int
    health: int
    violence: int
    addiction: int

    def as_array(self, names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)

    def as_tuple(self) -> tuple[int, ...]:
        return astuple(self)


assert tuple(f.name for f in fields(FeatureVector)) == FEATURE_NAMES


def extract_features(
    history: ClientHistory,
    window_days: int = WINDOW_DAYS,
    bucket_timezone: tzinfo = timezone.utc,
) -> FeatureVector:
    """Count the client's records inside ``[first sleep, first sleep + window_days - 1]``.

    ``sleep`` counts distinct stay dates; the keyword columns count records
    carrying at least one keyword of that category.
    """
    anchor = first_sleep_date(history, bucket_timezone)
    if anchor is None:
        raise NoAnchorError(f"client {history.client_id} has no Sleep events")
    last = anchor + timedelta(days=window_days - 1)
    utc = bucket_timezone is timezone.utc

    counts = [history.age, 0, 0, 0, 0, 0, 0, 0, 0, 0]
    stay_days = set()
    for ev in history.events:
        day = ev.timestamp.date() if utc else ev.timestamp.astimezone(bucket_timezone).date()
        if day < anchor or day > last:
            continue
        if ev.kind is EventKind.SLEEP:
            stay_days.add(day)
        else:
            counts[_KIND_FIELD[ev.kind]] += 1
        for j, c in enumerate(ev.keyword_counts):
            if c >= 1:
                counts[5 + j] += 1
    counts[2] = len(stay_days)
    return FeatureVector(*counts)


@dataclass(frozen=True)
class NormalizationParams:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray  # population sd; 1.0 where constant
    constant: np.ndarray  # bool flags for zero-variance features

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> NormalizationParams:
        return cls(
            tuple(doc["names"]),
            np.asarray(doc["mean"], dtype=float),
            np.asarray(doc["std"], dtype=float),
            np.asarray(doc["constant"], dtype=bool),
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Standardize rows of ``x`` (columns ordered as ``names``); constant columns map to 0."""
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.where(self.constant, 0.0, z)

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


def fit_normalizer_array(x: np.ndarray, names: Sequence[str]) -> NormalizationParams:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two vectors to fit a normalizer")
    if x.shape[1] != len(names):
        raise ValueError("column count does not match feature names")
    mean = x.mean(axis=0)
    std = x.std(axis=0)  # ddof=0
    constant = std == 0.0
    return NormalizationParams(tuple(names), mean, np.where(constant, 1.0, std), constant)


def fit_normalizer(
    vectors: Sequence[FeatureVector], selected: Sequence[str] = FEATURE_NAMES
) -> NormalizationParams:
    return fit_normalizer_array(np.array([v.as_array(selected) for v in vectors]), selected)


def apply_normalizer(v: FeatureVector, p: NormalizationParams) -> np.ndarray:
    return p.apply(v.as_array(p.names))


def feature_matrix(vectors: Sequence[FeatureVector], names: Sequence[str] = FEATURE_NAMES) -> np.ndarray:
    idx = [FEATURE_NAMES.index(n) for n in names]
    full = np.array([v.as_tuple() for v in vectors], dtype=float).reshape(len(vectors), len(FEATURE_NAMES))
    return full[:, idx]
