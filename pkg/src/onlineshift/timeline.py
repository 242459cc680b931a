"""Time arithmetic: local clock mapping, window segmentation, late-night and
short-interval counts, and inactivity-gap detection."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, time, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import ActivityEvent

SECONDS_PER_DAY = 86400


def _parse_clock(value: str | time) -> time:
    if isinstance(value, time):
        return value
    return time.fromisoformat(value)


@dataclass(frozen=True)
class AnalysisConfig:
    cutoff: datetime = datetime(2020, 3, 14)
    window_days: int = 76
    tz_offset: int = 0  # minutes east of UTC
    inactivity_threshold_hours: float = 7.0
    short_interval_minutes: float = 5.0
    late_night_start: time = time(22, 0)
    late_night_end: time = time(5, 0)
    kl_epsilon: float = 1e-6
    year_start_floor: bool = True  # drop data before 1 January of the cutoff year
    lexicon_rate: bool = False
    lexicon_categories: dict = field(
        default_factory=lambda: {
            "liwc_personal": "personal_concern",
            "liwc_negemo": "negative_emotion",
            "liwc_social": "social",
            "liwc_health": "health",
        }
    )

    def __post_init__(self):
        if self.cutoff.tzinfo is not None:
            raise ValueError("cutoff is a local wall-clock time and must be naive")
        if self.window_days <= 0:
            raise ValueError("window_days must be positive")
        if self.inactivity_threshold_hours <= 0 or self.short_interval_minutes <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 < self.kl_epsilon < 1:
            raise ValueError("kl_epsilon must lie in (0, 1)")

    @property
    def cutoff_utc(self) -> datetime:
        return (self.cutoff - timedelta(minutes=self.tz_offset)).replace(tzinfo=timezone.utc)

    def window_bounds(self) -> tuple[int, int, int]:
        """(start, cutoff, end) of the analysis windows as UTC epoch seconds."""
        c = int(self.cutoff_utc.timestamp())
        w = self.window_days * SECONDS_PER_DAY
        if self.year_start_floor:
            jan1 = datetime(self.cutoff.year, 1, 1) - timedelta(minutes=self.tz_offset)
            # the after window shrinks with the before window so raw counts stay comparable
            w = min(w, c - int(jan1.replace(tzinfo=timezone.utc).timestamp()))
        return c - w, c, c + w

    def for_participant(self, tz_offset: int) -> "AnalysisConfig":
        return replace(self, tz_offset=tz_offset)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cutoff"] = self.cutoff.isoformat(timespec="minutes")
        d["late_night_start"] = self.late_night_start.strftime("%H:%M")
        d["late_night_end"] = self.late_night_end.strftime("%H:%M")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "AnalysisConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        if "cutoff" in kw:
            kw["cutoff"] = datetime.fromisoformat(kw["cutoff"])
        for key in ("late_night_start", "late_night_end"):
            if key in kw:
                kw[key] = _parse_clock(kw[key])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "AnalysisConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class WindowCounts:
    lna: int
    sei: int
    total: int
    inactivity_midpoints: list[int]


def epoch_seconds(events: Sequence[ActivityEvent]) -> np.ndarray:
    return np.fromiter((int(ev.ts.timestamp()) for ev in events), dtype=np.int64, count=len(events))


def local_hour(ts: datetime, tz_offset: int) -> int:
    """Hour of day at a fixed offset of ``tz_offset`` minutes from UTC."""
    return (ts.astimezone(timezone.utc) + timedelta(minutes=tz_offset)).hour


def segment_mask(secs: np.ndarray, config: AnalysisConfig) -> tuple[np.ndarray, np.ndarray]:
    start, cut, end = config.window_bounds()
    return (secs >= start) & (secs < cut), (secs >= cut) & (secs < end)


def segment(events: Sequence[ActivityEvent], config: AnalysisConfig):
    """Split events into the half-open windows before and after the cutoff.

    Events outside ``[cutoff - window_days, cutoff + window_days)`` are dropped.
    With ``year_start_floor`` both windows are shortened, symmetrically, so
    that neither reaches back before 1 January of the cutoff year.
    """
    start, cut, end = config.window_bounds()
    before, after = [], []
    for ev in events:
        s = ev.ts.timestamp()
        if start <= s < cut:
            before.append(ev)
        elif cut <= s < end:
            after.append(ev)
    return before, after


def _local_seconds_of_day(secs: np.ndarray, tz_offset: int) -> np.ndarray:
    return (secs + tz_offset * 60) % SECONDS_PER_DAY


def _clock_seconds(t: time) -> int:
    return t.hour * 3600 + t.minute * 60 + t.second


def late_night_count_secs(secs: np.ndarray, config: AnalysisConfig) -> int:
    sod = _local_seconds_of_day(secs, config.tz_offset)
    lo = _clock_seconds(config.late_night_start)
    hi = _clock_seconds(config.late_night_end)
    if lo <= hi:
        inside = (sod >= lo) & (sod < hi)
    else:
        inside = (sod >= lo) | (sod < hi)
    return int(np.count_nonzero(inside))


def late_night_count(events: Sequence[ActivityEvent], config: AnalysisConfig) -> int:
    """Events whose local clock time falls in [late_night_start, late_night_end)."""
    return late_night_count_secs(epoch_seconds(events), config)


def short_interval_count_secs(secs: np.ndarray, minutes: float = 5.0) -> int:
    if secs.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(np.sort(secs)) < minutes * 60))


def short_interval_count(events: Sequence[ActivityEvent], minutes: float = 5.0) -> int:
    """Adjacent event pairs strictly less than ``minutes`` apart, platforms pooled."""
    return short_interval_count_secs(epoch_seconds(events), minutes)


def inactivity_gaps_secs(secs: np.ndarray, threshold_hours: float = 7.0) -> np.ndarray:
    """(k, 2) array of [start, end) gaps of at least the threshold between adjacent events."""
    if secs.size < 2:
        return np.empty((0, 2), dtype=np.int64)
    s = np.sort(secs)
    gaps = np.diff(s)
    idx = np.nonzero(gaps >= threshold_hours * 3600)[0]
    return np.column_stack((s[idx], s[idx + 1]))


def inactivity_periods(events: Sequence[ActivityEvent], config: AnalysisConfig):
    gaps = inactivity_gaps_secs(epoch_seconds(events), config.inactivity_threshold_hours)
    to_dt = lambda x: datetime.fromtimestamp(int(x), tz=timezone.utc)  # noqa: E731
    return [(to_dt(a), to_dt(b)) for a, b in gaps]


def midpoint_bins_secs(gaps: np.ndarray, tz_offset: int) -> np.ndarray:
    if len(gaps) == 0:
        return np.empty(0, dtype=np.int64)
    # twice the midpoint keeps half-second midpoints exact in integers
    mid2 = gaps[:, 0] + gaps[:, 1] + 2 * tz_offset * 60
    return (mid2 % (2 * SECONDS_PER_DAY)) // 7200


def midpoint_distribution(periods, config: AnalysisConfig):
    """Normalized 24-bin histogram of local midpoint hours; uniform when there are no periods."""
    from .features import HourDistribution

    gaps = np.array(
        [(int(a.timestamp()), int(b.timestamp())) for a, b in periods], dtype=np.int64
    ).reshape(-1, 2)
    return HourDistribution.from_hours(midpoint_bins_secs(gaps, config.tz_offset))


def window_counts_secs(secs: np.ndarray, config: AnalysisConfig) -> WindowCounts:
    gaps = inactivity_gaps_secs(secs, config.inactivity_threshold_hours)
    return WindowCounts(
        lna=late_night_count_secs(secs, config),
        sei=short_interval_count_secs(secs, config.short_interval_minutes),
        total=int(secs.size),
        inactivity_midpoints=midpoint_bins_secs(gaps, config.tz_offset).tolist(),
    )


def window_counts(events: Sequence[ActivityEvent], config: AnalysisConfig) -> WindowCounts:
    return window_counts_secs(epoch_seconds(events), config)
