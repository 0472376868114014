"""Stays, episodes, chronic labelling and shelter-access-history statistics."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from datetime import date, timezone, tzinfo

import numpy as np

from .records import ClientHistory, EventKind

# (minimum stay count, trailing window length in days)
CHRONIC_RULES: tuple[tuple[int, int], ...] = ((180, 365), (546, 1095))
EPISODE_GAP_DAYS = 30

MEASURES = (
    "total_stays",
    "total_episodes",
    "tenure_days",
    "usage_percentage",
    "average_gap_days",
)
MEASURE_LABELS = {
    "total_stays": "Total Stays",
    "total_episodes": "Total Episodes",
    "tenure_days": "Tenure (days)",
    "usage_percentage": "Usage Percentage",
    "average_gap_days": "Average Gap Length (days)",
}
GAP_MODES = ("timestamp", "date", "episode")


class UndefinedStatsError(ValueError):
    """Raised when statistics are requested for a client with no stays."""


class EmptyCohortError(ValueError):
    """Raised when a cohort report is requested for an empty cohort."""


@dataclass(frozen=True, slots=True)
class StaySet:
    dates: tuple[date, ...]

    def __post_init__(self) -> None:
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("stay dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.dates)

    def __iter__(self):
        return iter(self.dates)

    def ordinals(self) -> np.ndarray:
        return np.fromiter((d.toordinal() for d in self.dates), dtype=np.int64, count=len(self.dates))


@dataclass(frozen=True, slots=True)
class Episode:
    first_stay: date
    last_stay: date
    stay_count: int


@dataclass(frozen=True, slots=True)
class ClientHistoryStats:
    total_stays: int
    total_episodes: int
    tenure_days: int
    usage_percentage: float
    average_gap_days: float | None

    def value(self, measure: str) -> float | None:
        return getattr(self, measure)


def _stay_date(ts, tz: tzinfo) -> date:
    return ts.date() if tz is timezone.utc else ts.astimezone(tz).date()


def derive_stays(history: ClientHistory, bucket_timezone: tzinfo = timezone.utc) -> StaySet:
    """Distinct calendar dates (in ``bucket_timezone``) with at least one Sleep event."""
    days = {_stay_date(ev.timestamp, bucket_timezone) for ev in history.events if ev.kind is EventKind.SLEEP}
    return StaySet(tuple(sorted(days)))


def max_window_count(ordinals: np.ndarray, window_days: int) -> int:
    """Largest number of stays inside any trailing window of ``window_days`` days.

    A window ending on day e covers ``[e - window_days + 1, e]``. The maximum
    is attained with e on a stay date, so only those endpoints are scanned.
    """
    if len(ordinals) == 0:
        return 0
    starts = np.searchsorted(ordinals, ordinals - (window_days - 1), side="left")
    return int((np.arange(len(ordinals)) - starts + 1).max())


def label_chronic(stays: StaySet, rules: Sequence[tuple[int, int]] = CHRONIC_RULES) -> bool:
    """True if any trailing window satisfies one of the (min stays, window days) rules."""
    if not stays.dates:
        return False
    o = stays.ordinals()
    return any(max_window_count(o, window) >= need for need, window in rules)


def episodes(stays: StaySet, gap_threshold_days: int = EPISODE_GAP_DAYS) -> tuple[Episode, ...]:
    """Split stays into episodes; a gap of ``gap_threshold_days`` or more starts a new one."""
    if gap_threshold_days < 1:
        raise ValueError("gap_threshold_days must be >= 1")
    out: list[Episode] = []
    if not stays.dates:
        return ()
    first = prev = stays.dates[0]
    count = 1
    for d in stays.dates[1:]:
        if (d - prev).days >= gap_threshold_days:
            out.append(Episode(first, prev, count))
            first, count = d, 0
        count += 1
        prev = d
    out.append(Episode(first, prev, count))
    return tuple(out)


def _timestamp_gaps(history: ClientHistory, tz: tzinfo) -> list[float]:
    # consecutive Sleep events that land on different stay dates
    gaps = []
    prev_ts = prev_day = None
    for ev in history.events:
        if ev.kind is not EventKind.SLEEP:
            continue
        day = _stay_date(ev.timestamp, tz)
        if prev_day is not None and day != prev_day:
            gaps.append((ev.timestamp - prev_ts).total_seconds() / 86400.0)
        prev_ts, prev_day = ev.timestamp, day
    return gaps


def client_stats(
    history: ClientHistory,
    gap_threshold_days: int = EPISODE_GAP_DAYS,
    bucket_timezone: tzinfo = timezone.utc,
    gap_mode: str = "timestamp",
) -> ClientHistoryStats:
    """Shelter-access-history measures over a client's full record.

    ``gap_mode`` selects the average-gap definition: ``"timestamp"`` uses
    fractional days between Sleep events on consecutive stay dates,
    ``"date"`` uses whole-day differences between consecutive stay dates and
    ``"episode"`` uses the gaps between episodes.
    """
    if gap_mode not in GAP_MODES:
        raise ValueError(f"unknown gap mode {gap_mode!r}")
    stays = derive_stays(history, bucket_timezone)
    if not stays.dates:
        raise UndefinedStatsError(f"client {history.client_id} has no Sleep events")
    eps = episodes(stays, gap_threshold_days)
    tenure = (stays.dates[-1] - stays.dates[0]).days
    usage = 100.0 * len(stays) / max(tenure, 1)

    if gap_mode == "timestamp":
        gaps = _timestamp_gaps(history, bucket_timezone)
    elif gap_mode == "date":
        gaps = [float((b - a).days) for a, b in zip(stays.dates, stays.dates[1:])]
    else:
        gaps = [float((b.first_stay - a.last_stay).days) for a, b in zip(eps, eps[1:])]
    avg_gap = math.fsum(gaps) / len(gaps) if gaps else None
    return ClientHistoryStats(len(stays), len(eps), tenure, usage, avg_gap)


def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Linear interpolation between closest ranks (rank ``q/100 * (n-1)``)."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("percentile of empty sequence")
    rank = q * (n - 1) / 100.0
    lo = math.floor(rank)
    frac = rank - lo
    if frac == 0.0 or lo + 1 >= n:
        return float(sorted_values[lo])
    a, b = float(sorted_values[lo]), float(sorted_values[lo + 1])
    return a + frac * (b - a)


def median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    if n == 0:
        raise ValueError("median of empty sequence")
    mid = n // 2
    if n % 2:
        return float(sorted_values[mid])
    return (float(sorted_values[mid - 1]) + float(sorted_values[mid])) / 2.0


@dataclass(frozen=True, slots=True)
class MeasureSummary:
    average: float
    median: float
    p10: float
    p90: float
    n: int

    @classmethod
    def of(cls, values: Iterable[float]) -> MeasureSummary:
        v = sorted(float(x) for x in values)
        return cls(math.fsum(v) / len(v), median(v), percentile(v, 10), percentile(v, 90), len(v))


@dataclass(frozen=True)
class CohortReport:
    """Average/median/p10/p90 for each measure; a measure is None when no client has a value."""

    measures: dict[str, MeasureSummary | None]
    group_size: int
    population_size: int

    @property
    def group_fraction(self) -> float:
        return self.group_size / self.population_size if self.population_size else 0.0

    def to_dict(self) -> dict:
        out: dict = {}
        for name in MEASURES:
            s = self.measures[name]
            out[name] = None if s is None else {
                "average": s.average, "median": s.median, "p10": s.p10, "p90": s.p90, "n": s.n,
            }
        out["group_size"] = self.group_size
        out["population_size"] = self.population_size
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> CohortReport:
        measures = {
            name: None if doc[name] is None else MeasureSummary(**doc[name]) for name in MEASURES
        }
        return cls(measures, doc["group_size"], doc["population_size"])

    def to_text(self, title: str | None = None) -> str:
        width = max(len(v) for v in MEASURE_LABELS.values())
        lines = []
        if title:
            lines.append(title)
        lines.append(f"{'':<{width}}  {'Average':>9}  {'Median':>9}  {'10th Pctl.':>10}  {'90th Pctl.':>10}")
        lines.append("-" * (width + 48))
        for name in MEASURES:
            s = self.measures[name]
            if s is None:
                lines.append(f"{MEASURE_LABELS[name]:<{width}}  {'n/a':>9}  {'n/a':>9}  {'n/a':>10}  {'n/a':>10}")
            else:
                lines.append(
                    f"{MEASURE_LABELS[name]:<{width}}  {s.average:>9.1f}  {s.median:>9.1f}  {s.p10:>10.1f}  {s.p90:>10.1f}"
                )
        lines.append("-" * (width + 48))
        lines.append(
            f"Group Size: {self.group_size}/{self.population_size} ({100 * self.group_fraction:.1f}%)"
        )
        return "\n".join(lines) + "\n"


def cohort_report(cohort: Sequence[ClientHistoryStats], population_size: int) -> CohortReport:
    if not cohort:
        raise EmptyCohortError("cannot summarise an empty cohort")
    if population_size < len(cohort):
        raise ValueError("population_size is smaller than the cohort")
    measures: dict[str, MeasureSummary | None] = {}
    for name in MEASURES:
        values = [v for v in (s.value(name) for s in cohort) if v is not None]
        measures[name] = MeasureSummary.of(values) if values else None
    return CohortReport(measures, len(cohort), population_size)
