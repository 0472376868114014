"""Seeded synthetic shelter histories with transitional / episodic / chronic clusters.

Each client draws a cluster, a first-sleep day, an episode count (truncated
geometric), episode lengths and inter-episode gaps (rounded log-normal), and
attends the shelter on each episode day with a per-client probability.
Auxiliary Bar/Log/Counsellor records fall on stay days and may carry keyword
counts. Client ``i`` uses its own random stream spawned from ``(seed, i)``,
so any subset of clients can be generated independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from datetime import date, datetime, timedelta, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .records import ClientHistory, Dataset, EventKind, EventRecord, NO_KEYWORDS
from .timeline import CHRONIC_RULES, max_window_count

CLUSTERS = ("transitional", "episodic", "chronic")
AUX_KINDS = (EventKind.BAR, EventKind.LOG, EventKind.COUNSELLOR)
GAP_MIN_DAYS = 30


class SpecError(ValueError):
    """Raised for an invalid cohort spec."""


@dataclass(frozen=True)
class ClusterParams:
    weight: float
    episodes_p: float  # geometric success probability for the episode count
    max_episodes: int
    episode_length_median: float
    episode_length_sigma: float
    gap_median: float  # days beyond GAP_MIN_DAYS between episodes
    gap_sigma: float
    attendance: float
    attendance_concentration: float  # Beta concentration; 0 fixes attendance per client
    age_min: int = 18
    age_max: int = 75
    bar_rate: float = 0.01
    log_rate: float = 0.2
    counsellor_rate: float = 0.05
    police_rate: float = 0.05
    ems_rate: float = 0.03
    health_rate: float = 0.08
    violence_rate: float = 0.04
    addiction_rate: float = 0.06
    extra_sleep_rate: float = 0.1
    first_episode_factor: float = 1.0  # scales the median length of the first episode

    @property
    def aux_rates(self) -> tuple[float, float, float]:
        return (self.bar_rate, self.log_rate, self.counsellor_rate)

    @property
    def keyword_rates(self) -> tuple[float, ...]:
        return (self.police_rate, self.ems_rate, self.health_rate, self.violence_rate, self.addiction_rate)

    def validate(self, name: str) -> None:
        probs = {
            "weight": self.weight,
            "episodes_p": self.episodes_p,
            "attendance": self.attendance,
            "extra_sleep_rate": self.extra_sleep_rate,
            **dict(zip(("bar_rate", "log_rate", "counsellor_rate"), self.aux_rates)),
            **dict(zip(("police_rate", "ems_rate", "health_rate", "violence_rate", "addiction_rate"), self.keyword_rates)),
        }
        for key, v in probs.items():
            if not (0.0 <= v <= 1.0) or not math.isfinite(v):
                raise SpecError(f"{name}.{key} must lie in [0, 1], got {v}")
        if self.episodes_p == 0.0:
            raise SpecError(f"{name}.episodes_p must be positive")
        if self.max_episodes < 1:
            raise SpecError(f"{name}.max_episodes must be >= 1")
        for key in ("episode_length_median", "gap_median", "first_episode_factor"):
            v = getattr(self, key)
            if not (v > 0 and math.isfinite(v)):
                raise SpecError(f"{name}.{key} must be positive and finite")
        for key in ("episode_length_sigma", "gap_sigma", "attendance_concentration"):
            v = getattr(self, key)
            if not (v >= 0 and math.isfinite(v)):
                raise SpecError(f"{name}.{key} must be non-negative and finite")
        if not 0 <= self.age_min <= self.age_max:
            raise SpecError(f"{name}: need 0 <= age_min <= age_max")


@dataclass(frozen=True)
class CohortSpec:
    n_clients: int
    seed: int
    observation_start: date
    observation_end: date
    entry_start: date  # in-range first sleeps are uniform on [entry_start, entry_end]
    entry_end: date
    pre_entry_fraction: float  # share of first sleeps before entry_start
    post_entry_fraction: float  # share of first sleeps after entry_end
    transitional: ClusterParams
    episodic: ClusterParams
    chronic: ClusterParams
    notes: dict = field(default_factory=dict, compare=False)

    @property
    def clusters(self) -> tuple[ClusterParams, ClusterParams, ClusterParams]:
        return (self.transitional, self.episodic, self.chronic)

    def validate(self) -> None:
        if self.n_clients < 0:
            raise SpecError("n_clients must be >= 0")
        weights = [c.weight for c in self.clusters]
        if abs(sum(weights) - 1.0) > 1e-9:
            raise SpecError(f"cluster weights must sum to 1, got {sum(weights)!r}")
        for name, c in zip(CLUSTERS, self.clusters):
            c.validate(name)
        if self.observation_end <= self.observation_start:
            raise SpecError("observation window must span at least one day")
        if not (self.observation_start <= self.entry_start <= self.entry_end <= self.observation_end):
            raise SpecError("entry range must lie inside the observation window")
        for key in ("pre_entry_fraction", "post_entry_fraction"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{key} must lie in [0, 1]")
        if self.pre_entry_fraction + self.post_entry_fraction > 1.0:
            raise SpecError("pre_entry_fraction + post_entry_fraction exceeds 1")
        if self.pre_entry_fraction > 0 and self.entry_start == self.observation_start:
            raise SpecError("pre_entry_fraction > 0 but no days precede entry_start")
        if self.post_entry_fraction > 0 and self.entry_end == self.observation_end:
            raise SpecError("post_entry_fraction > 0 but no days follow entry_end")

    def with_cluster(self, name: str, **changes) -> CohortSpec:
        return replace(self, **{name: replace(getattr(self, name), **changes)})

    # -- flat key/value document ------------------------------------------

    def to_flat(self) -> dict:
        doc: dict = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ClusterParams):
                for cf in fields(ClusterParams):
                    doc[f"{f.name}.{cf.name}"] = getattr(v, cf.name)
            elif isinstance(v, date):
                doc[f.name] = v.isoformat()
            elif f.name == "notes":
                for k, nv in v.items():
                    doc[f"notes.{k}"] = nv
            else:
                doc[f.name] = v
        return doc

    @classmethod
    def from_flat(cls, doc: dict) -> CohortSpec:
        top: dict = {}
        cluster_kw: dict[str, dict] = {name: {} for name in CLUSTERS}
        notes: dict = {}
        cluster_fields = {f.name for f in fields(ClusterParams)}
        for key, v in doc.items():
            head, _, tail = key.partition(".")
            if head == "notes" and tail:
                notes[tail] = v
            elif head in CLUSTERS and tail:
                if tail not in cluster_fields:
                    raise SpecError(f"unknown cluster parameter {key!r}")
                cluster_kw[head][tail] = v
            elif not tail:
                top[key] = v
            else:
                raise SpecError(f"unknown spec key {key!r}")
        try:
            for key in ("observation_start", "observation_end", "entry_start", "entry_end"):
                top[key] = date.fromisoformat(top[key])
            clusters = {name: ClusterParams(**kw) for name, kw in cluster_kw.items()}
            spec = cls(**top, **clusters, notes=notes)
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid spec document: {exc}") from None
        spec.validate()
        return spec

    def dumps(self) -> str:
        return json.dumps(self.to_flat(), indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> CohortSpec:
        return cls.from_flat(json.loads(Path(path).read_text(encoding="utf-8")))

    @classmethod
    def packaged(cls, name: str) -> CohortSpec:
        text = resources.files("chronicpredict.data").joinpath(f"{name}_spec.json").read_text(encoding="utf-8")
        return cls.from_flat(json.loads(text))

    @classmethod
    def default(cls) -> CohortSpec:
        """Post-censoring cohort: every first sleep falls inside the entry range."""
        return cls.packaged("default")

    @classmethod
    def raw_population(cls) -> CohortSpec:
        """Whole-window intake, including clients a censoring pass should drop."""
        return cls.packaged("raw_population")


# --------------------------------------------------------------------------
# drawing


@dataclass(frozen=True)
class ClientDraw:
    """Numeric description of one synthetic client; days are offsets from observation_start."""

    index: int
    cluster: int
    age: int
    stay_days: np.ndarray
    sleep_minutes: list[tuple[int, int]]  # (day offset, minute of day)
    aux: list[tuple[int, int, int, tuple[int, ...]]]  # (day, minute, kind index, keyword counts)


def _client_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _lognormal_days(rng: np.random.Generator, median: float, sigma: float) -> int:
    return int(round(median * math.exp(sigma * rng.standard_normal())))


def _first_day(rng: np.random.Generator, spec: CohortSpec) -> int:
    base = spec.observation_start.toordinal()
    lo, hi = spec.entry_start.toordinal() - base, spec.entry_end.toordinal() - base
    last = spec.observation_end.toordinal() - base
    u = rng.random()
    if u < spec.pre_entry_fraction:
        return int(rng.integers(0, lo))
    if u < spec.pre_entry_fraction + spec.post_entry_fraction:
        return int(rng.integers(hi + 1, last + 1))
    return int(rng.integers(lo, hi + 1))


def _episode_count(rng: np.random.Generator, c: ClusterParams) -> int:
    k = np.arange(1, c.max_episodes + 1)
    pmf = c.episodes_p * (1.0 - c.episodes_p) ** (k - 1)
    return int(rng.choice(k, p=pmf / pmf.sum()))


def _draw_stays(rng: np.random.Generator, spec: CohortSpec, c: ClusterParams) -> tuple[int, np.ndarray]:
    start = _first_day(rng, spec)
    horizon = spec.observation_end.toordinal() - spec.observation_start.toordinal()
    if c.attendance_concentration > 0 and 0 < c.attendance < 1:
        a = c.attendance * c.attendance_concentration
        attend = float(rng.beta(a, c.attendance_concentration - a))
    else:
        attend = c.attendance
    chunks = []
    day = start
    for e in range(_episode_count(rng, c)):
        median = c.episode_length_median * (c.first_episode_factor if e == 0 else 1.0)
        length = max(1, _lognormal_days(rng, median, c.episode_length_sigma))
        mask = rng.random(length) < attend
        mask[0] = True  # an episode opens with a stay
        chunks.append(day + np.flatnonzero(mask))
        day += length - 1 + GAP_MIN_DAYS + max(0, _lognormal_days(rng, c.gap_median, c.gap_sigma))
        if day > horizon:
            break
    stays = np.concatenate(chunks)
    return start, stays[stays <= horizon]


def draw_client(spec: CohortSpec, index: int) -> ClientDraw:
    rng = _client_rng(spec.seed, index)
    cluster = int(rng.choice(3, p=[c.weight for c in spec.clusters]))
    c = spec.clusters[cluster]
    age = int(rng.integers(c.age_min, c.age_max + 1))
    _, stays = _draw_stays(rng, spec, c)

    n = len(stays)
    # evening check-in for every stay, sometimes an extra early access
    sleeps = list(zip(stays.tolist(), rng.integers(18 * 60, 24 * 60, size=n).tolist()))
    extra = rng.random(n) < c.extra_sleep_rate
    sleeps += zip(stays[extra].tolist(), rng.integers(0, 18 * 60, size=int(extra.sum())).tolist())

    aux = []
    kw_rates = np.array(c.keyword_rates)
    for kind_idx, rate in enumerate(c.aux_rates):
        hit = stays[rng.random(n) < rate]
        minutes = rng.integers(0, 24 * 60, size=len(hit))
        present = rng.random((len(hit), 5)) < kw_rates
        counts = np.where(present, rng.geometric(0.6, size=(len(hit), 5)), 0)
        for d, m, row in zip(hit.tolist(), minutes.tolist(), counts.tolist()):
            aux.append((d, m, kind_idx, tuple(row)))
    return ClientDraw(index, cluster, age, stays, sleeps, aux)


def client_id(index: int) -> str:
    return f"C{index:06d}"


def materialize(spec: CohortSpec, draw: ClientDraw) -> ClientHistory:
    cid = client_id(draw.index)
    origin = datetime(spec.observation_start.year, spec.observation_start.month, spec.observation_start.day, tzinfo=timezone.utc)
    events = [
        EventRecord(cid, origin + timedelta(days=d, minutes=m), EventKind.SLEEP, NO_KEYWORDS)
        for d, m in draw.sleep_minutes
    ]
    events += [
        EventRecord(cid, origin + timedelta(days=d, minutes=m), AUX_KINDS[k], kw if any(kw) else NO_KEYWORDS)
        for d, m, k, kw in draw.aux
    ]
    # sort on (time, kind, counts) so output never depends on draw order
    events.sort(key=lambda ev: (ev.timestamp, ev.kind.value, ev.keyword_counts))
    return ClientHistory(cid, draw.age, tuple(events))


def generate(spec: CohortSpec, indices: range | None = None) -> Dataset:
    """Build the synthetic Dataset described by ``spec`` (all clients by default)."""
    spec.validate()
    if indices is None:
        indices = range(spec.n_clients)
    clients = {}
    for i in indices:
        hist = materialize(spec, draw_client(spec, i))
        clients[hist.client_id] = hist
    return Dataset(clients, spec.observation_start, spec.observation_end)


# --------------------------------------------------------------------------
# calibration


def draw_is_chronic(draw: ClientDraw) -> bool:
    o = np.unique(draw.stay_days)
    return any(max_window_count(o, window) >= need for need, window in CHRONIC_RULES)


def measure_prevalence(spec: CohortSpec, n: int | None = None) -> float:
    """Chronic share among the first ``n`` clients, labelled from the stay draws alone."""
    n = spec.n_clients if n is None else n
    if n == 0:
        return 0.0
    return sum(draw_is_chronic(draw_client(spec, i)) for i in range(n)) / n


def calibrate_prevalence(
    spec: CohortSpec,
    target: float = 1549 / 18398,
    n_sample: int = 6000,
    lo: float = 20.0,
    hi: float = 1500.0,
    iterations: int = 14,
) -> CohortSpec:
    """Bisect the chronic cluster's median episode length until prevalence hits ``target``.

    The result records the measured prevalence under ``notes`` so the
    calibration is visible in the saved spec file.
    """
    def at(median: float) -> float:
        return measure_prevalence(spec.with_cluster("chronic", episode_length_median=median), n_sample)

    p_lo, p_hi = at(lo), at(hi)
    if not p_lo <= target <= p_hi:
        raise SpecError(f"target prevalence {target:.4f} outside reachable range [{p_lo:.4f}, {p_hi:.4f}]")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if at(mid) < target:
            lo = mid
        else:
            hi = mid
    best = round(0.5 * (lo + hi), 1)
    out = spec.with_cluster("chronic", episode_length_median=best)
    notes = dict(spec.notes)
    notes.update(
        calibration_target=target,
        calibration_sample=n_sample,
        calibrated_prevalence=at(best),
    )
    return replace(out, notes=notes)
