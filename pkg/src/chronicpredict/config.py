"""Run configuration shared by the pipeline stages."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date, timezone, tzinfo
from pathlib import Path
from zoneinfo import ZoneInfo

from .classifiers import TrainConfig
from .records import ConfigError
from .timeline import CHRONIC_RULES, EPISODE_GAP_DAYS, GAP_MODES


@dataclass(frozen=True)
class RunConfig:
    window_days: int = 90
    threshold_min_stays: int = 67
    episode_gap_days: int = EPISODE_GAP_DAYS
    chronic_rules: tuple[tuple[int, int], ...] = CHRONIC_RULES
    k: int = 10
    seed: int = 0
    min_first_sleep: date | None = None
    max_first_sleep: date | None = None
    bucket_timezone: str = "UTC"
    gap_mode: str = "timestamp"
    mlp_l2_penalty: float = 0.05
    mlp_hidden_units: int = 100
    logistic: TrainConfig = field(default_factory=TrainConfig)
    mlp: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        for name in ("window_days", "episode_gap_days", "k", "mlp_hidden_units"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        if not 0 <= self.threshold_min_stays <= self.window_days:
            raise ConfigError("threshold_min_stays must lie in [0, window_days]")
        if self.mlp_l2_penalty < 0:
            raise ConfigError("mlp_l2_penalty must be non-negative")
        if not self.chronic_rules:
            raise ConfigError("at least one chronic rule is required")
        for need, window in self.chronic_rules:
            if not 0 < need <= window:
                raise ConfigError(f"chronic rule ({need}, {window}) needs 0 < days <= window")
        if self.gap_mode not in GAP_MODES:
            raise ConfigError(f"gap_mode must be one of {GAP_MODES}")
        if (
            self.min_first_sleep is not None
            and self.max_first_sleep is not None
            and self.min_first_sleep > self.max_first_sleep
        ):
            raise ConfigError("min_first_sleep is after max_first_sleep")
        self.tz  # validates the zone name

    @property
    def tz(self) -> tzinfo:
        if self.bucket_timezone.upper() == "UTC":
            return timezone.utc
        try:
            return ZoneInfo(self.bucket_timezone)
        except Exception:
            raise ConfigError(f"unknown timezone {self.bucket_timezone!r}") from None

    def train_config(self, algorithm: str, fold: int) -> TrainConfig:
        """Per-fold trainer settings; the fold seed is derived from the run seed."""
        base = self.logistic if algorithm == "logistic" else self.mlp
        return replace(base, seed=self.seed * 1000 + fold)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["chronic_rules"] = [list(r) for r in self.chronic_rules]
        for key in ("min_first_sleep", "max_first_sleep"):
            doc[key] = None if doc[key] is None else doc[key].isoformat()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(doc)
        try:
            if "chronic_rules" in kw:
                kw["chronic_rules"] = tuple((int(a), int(b)) for a, b in kw["chronic_rules"])
            for key in ("min_first_sleep", "max_first_sleep"):
                if kw.get(key) is not None:
                    kw[key] = date.fromisoformat(kw[key])
            for key in ("logistic", "mlp"):
                if key in kw:
                    kw[key] = TrainConfig.from_dict(kw[key])
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)
