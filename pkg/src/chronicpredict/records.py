"""Event-record ingestion: CSV parsing, serialization and censoring."""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from datetime import date, datetime, timezone, tzinfo
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import TextIO

log = logging.getLogger(__name__)

CSV_HEADER = (
    "client_id",
    "age",
    "timestamp",
    "kind",
    "police",
    "ems",
    "health",
    "violence",
    "addiction",
)
KEYWORD_CATEGORIES = ("police", "ems", "health", "violence", "addiction")
NO_KEYWORDS = (0, 0, 0, 0, 0)
_ZERO_ROW = ["0"] * 5


class RecordError(ValueError):
    """Raised for malformed input records; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(ValueError):
    """Raised for invalid pipeline configuration (bounds, windows, ...)."""


class EventKind(Enum):
    SLEEP = "SLEEP"
    BAR = "BAR"
    LOG = "LOG"
    COUNSELLOR = "COUNSELLOR"


@dataclass(frozen=True, slots=True)
class EventRecord:
    client_id: str
    timestamp: datetime
    kind: EventKind
    keyword_counts: tuple[int, int, int, int, int] = NO_KEYWORDS

    def __post_init__(self) -> None:
        if len(self.keyword_counts) != len(KEYWORD_CATEGORIES):
            raise ValueError("keyword_counts must have five entries")
        if any(c < 0 for c in self.keyword_counts):
            raise ValueError(f"negative keyword count in {self.keyword_counts}")
        if not isinstance(self.kind, EventKind):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True, slots=True)
class ClientHistory:
    client_id: str
    age: int
    events: tuple[EventRecord, ...]

    def __post_init__(self) -> None:
        if self.age < 0:
            raise ValueError(f"negative age for client {self.client_id}")
        for ev in self.events:
            if ev.client_id != self.client_id:
                raise ValueError(f"event for {ev.client_id} filed under {self.client_id}")
        ts = [ev.timestamp for ev in self.events]
        if any(a > b for a, b in zip(ts, ts[1:])):
            raise ValueError(f"events of client {self.client_id} are not sorted")

    @classmethod
    def from_unsorted(cls, client_id: str, age: int, events: Iterable[EventRecord]) -> ClientHistory:
        # sorted() is stable, so equal timestamps keep input order
        return cls(client_id, age, tuple(sorted(events, key=lambda ev: ev.timestamp)))

    def sleep_events(self) -> list[EventRecord]:
        return [ev for ev in self.events if ev.kind is EventKind.SLEEP]


@dataclass(frozen=True)
class Dataset:
    """Client histories keyed by id, plus the observation window they were drawn from."""

    clients: Mapping[str, ClientHistory]
    observation_start: date
    observation_end: date
    bucket_timezone: tzinfo = field(default=timezone.utc, compare=False)

    def __post_init__(self) -> None:
        if self.observation_start > self.observation_end:
            raise ConfigError("observation_start is after observation_end")
        for cid, hist in self.clients.items():
            if cid != hist.client_id:
                raise ValueError(f"client key {cid} does not match history id {hist.client_id}")
            if hist.events:
                first = hist.events[0].timestamp.date()
                last = hist.events[-1].timestamp.date()
                if first < self.observation_start or last > self.observation_end:
                    raise ValueError(f"client {cid} has events outside the observation window")
        object.__setattr__(self, "clients", MappingProxyType(dict(self.clients)))

    def __len__(self) -> int:
        return len(self.clients)

    def __iter__(self):
        return iter(self.clients.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.observation_start == other.observation_start
            and self.observation_end == other.observation_end
            and dict(self.clients) == dict(other.clients)
        )

    @property
    def n_events(self) -> int:
        return sum(len(h.events) for h in self.clients.values())

    def subset(self, client_ids: Iterable[str]) -> Dataset:
        keep = {cid: self.clients[cid] for cid in client_ids}
        return Dataset(keep, self.observation_start, self.observation_end, self.bucket_timezone)


def _parse_timestamp(text: str) -> datetime:
    # strict `YYYY-MM-DDTHH:MM:SSZ`; fromisoformat is much faster than strptime
    if len(text) != 20 or text[10] != "T" or text[-1] != "Z" or text[4] != "-" or text[7] != "-":
        raise ValueError(f"malformed timestamp {text!r}")
    return datetime.fromisoformat(text[:-1]).replace(tzinfo=timezone.utc)


def _format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is not timezone.utc:
        ts = ts.astimezone(timezone.utc)
    return ts.isoformat()[:19] + "Z"


def _parse_count(text: str, name: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ValueError(f"non-integer {name} {text!r}") from None
    if value < 0:
        raise ValueError(f"negative {name} {value}")
    return value


def read_records(
    stream: TextIO,
    observation_start: date | None = None,
    observation_end: date | None = None,
    bucket_timezone: tzinfo = timezone.utc,
) -> Dataset:
    """Parse the record CSV layout into a :class:`Dataset`.

    When the observation bounds are omitted they default to the dates of the
    earliest and latest event. Duplicate rows are kept as-is.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        raise RecordError("missing header row", 1)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise RecordError(f"unexpected header {header!r}", 1)

    kinds = {k.value: k for k in EventKind}
    ages: dict[str, int] = {}
    events: dict[str, list[EventRecord]] = {}
    shared_counts: dict[tuple[int, ...], tuple[int, ...]] = {NO_KEYWORDS: NO_KEYWORDS}

    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise RecordError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
        cid, age_s, ts_s, kind_s = row[0], row[1], row[2], row[3]
        try:
            if not cid:
                raise ValueError("empty client_id")
            age = _parse_count(age_s, "age")
            ts = _parse_timestamp(ts_s)
            kind = kinds.get(kind_s)
            if kind is None:
                raise ValueError(f"unknown kind {kind_s!r}")
            if row[4:] == _ZERO_ROW:
                counts = NO_KEYWORDS
            else:
                counts = tuple(_parse_count(v, name) for v, name in zip(row[4:], KEYWORD_CATEGORIES))
        except ValueError as exc:
            raise RecordError(str(exc), lineno) from None

        counts = shared_counts.setdefault(counts, counts)
        if cid in ages:
            if ages[cid] != age:
                log.warning("line %d: age %d for client %s disagrees with %d; keeping first", lineno, age, cid, ages[cid])
        else:
            ages[cid] = age
            events[cid] = []
        events[cid].append(EventRecord(cid, ts, kind, counts))

    clients = {cid: ClientHistory.from_unsorted(cid, ages[cid], evs) for cid, evs in events.items()}
    all_dates = [h.events[0].timestamp.date() for h in clients.values()]
    all_dates += [h.events[-1].timestamp.date() for h in clients.values()]
    if observation_start is None:
        observation_start = min(all_dates, default=date.min)
    if observation_end is None:
        observation_end = max(all_dates, default=date.min)
    try:
        return Dataset(clients, observation_start, observation_end, bucket_timezone)
    except ValueError as exc:
        raise RecordError(str(exc)) from None


def parse_records(
    source: str | Path | TextIO,
    observation_start: date | None = None,
    observation_end: date | None = None,
    bucket_timezone: tzinfo = timezone.utc,
) -> Dataset:
    """Read a record file (path or open text stream)."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_records(fh, observation_start, observation_end, bucket_timezone)
    return read_records(source, observation_start, observation_end, bucket_timezone)


def write_records(dataset: Dataset, stream: TextIO) -> None:
    """Serialize in the input layout: clients in key order, events in history order."""
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(CSV_HEADER)
    for cid, hist in dataset.clients.items():
        age = str(hist.age)
        for ev in hist.events:
            out.writerow((cid, age, _format_timestamp(ev.timestamp), ev.kind.value, *ev.keyword_counts))


def serialize_records(dataset: Dataset) -> str:
    buf = io.StringIO()
    write_records(dataset, buf)
    return buf.getvalue()


def first_sleep_date(history: ClientHistory, bucket_timezone: tzinfo = timezone.utc) -> date | None:
    """Calendar date of the client's earliest Sleep event, or None if it never slept."""
    for ev in history.events:
        if ev.kind is EventKind.SLEEP:
            # events are sorted, so the first Sleep is the earliest
            return ev.timestamp.astimezone(bucket_timezone).date()
    return None


@dataclass(frozen=True)
class CensorResult:
    dataset: Dataset
    removed_no_sleep: int
    removed_before: int
    removed_after: int

    @property
    def retained(self) -> int:
        return len(self.dataset)

    @property
    def retention_ratio(self) -> float:
        total = self.retained + self.removed_no_sleep + self.removed_before + self.removed_after
        return self.retained / total if total else 1.0


def censor(dataset: Dataset, min_first_sleep: date, max_first_sleep: date) -> CensorResult:
    """Keep clients whose first sleep date lies in ``[min_first_sleep, max_first_sleep]``."""
    if min_first_sleep > max_first_sleep:
        raise ConfigError(f"inverted censoring bounds: {min_first_sleep} > {max_first_sleep}")
    keep: dict[str, ClientHistory] = {}
    no_sleep = before = after = 0
    tz = dataset.bucket_timezone
    for cid, hist in dataset.clients.items():
        d = first_sleep_date(hist, tz)
        if d is None:
            no_sleep += 1
        elif d < min_first_sleep:
            before += 1
        elif d > max_first_sleep:
            after += 1
        else:
            keep[cid] = hist
    kept = Dataset(keep, dataset.observation_start, dataset.observation_end, tz)
    return CensorResult(kept, no_sleep, before, after)
