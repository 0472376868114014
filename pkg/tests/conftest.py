from __future__ import annotations

from dataclasses import replace
from datetime import date, datetime, timedelta, timezone

import pytest

from chronicpredict.records import ClientHistory, EventKind, EventRecord
from chronicpredict.synthgen import CohortSpec

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}

BASE = datetime(2010, 1, 1, tzinfo=timezone.utc)


def at(day: int, hour: int = 20, minute: int = 0) -> datetime:
    return BASE + timedelta(days=day, hours=hour, minutes=minute)


def history(cid: str = "A", age: int = 40, events=(), **_) -> ClientHistory:
    """Build a history from ``(datetime, kind, counts)`` or ``(datetime, kind)`` tuples."""
    evs = []
    for item in events:
        ts, kind, *rest = item
        counts = tuple(rest[0]) if rest else (0, 0, 0, 0, 0)
        evs.append(EventRecord(cid, ts, EventKind(kind) if isinstance(kind, str) else kind, counts))
    return ClientHistory.from_unsorted(cid, age, evs)


def sleeps_on(days, cid: str = "A", age: int = 40, hour: int = 20) -> ClientHistory:
    return history(cid, age, [(at(d, hour), "SLEEP") for d in days])


@pytest.fixture
def small_spec() -> CohortSpec:
    return replace(CohortSpec.default(), n_clients=400)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}: {detail}")


def origin_date() -> date:
    return BASE.date()
