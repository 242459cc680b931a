"""Behavior-shift measurements: relative change of counts, KL divergence of
inactivity-midpoint distributions, and the per-participant feature vector."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import ActivityEvent, gc_paused
from .lexicon import UNRESOLVED, CategoryProvider, Lexicon, LexiconMatcher, TokenStream, categorize_event
from .timeline import AnalysisConfig, epoch_seconds, segment_mask, window_counts_secs

N_BINS = 24

FEATURE_COLUMNS = (
    "lna_pct",
    "inact_kl",
    "sei_pct",
    "liwc_personal",
    "liwc_negemo",
    "liwc_social",
    "liwc_health",
    "cat_adult",
    "cat_news",
)
LEXICON_COLUMNS = FEATURE_COLUMNS[3:7]
CATEGORY_COLUMNS = {"cat_adult": "adult", "cat_news": "news"}


class ZeroBaselineError(ValueError):
    pass


@dataclass(frozen=True)
class HourDistribution:
    bins: tuple[float, ...]
    fallback: bool = False

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=float)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("distribution needs a 1-d, non-empty bin vector")
        if (b < 0).any():
            raise ValueError("negative bin mass")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ValueError(f"bins sum to {b.sum()!r}, not 1")

    @classmethod
    def uniform(cls, n: int = N_BINS) -> "HourDistribution":
        return cls(tuple([1.0 / n] * n), fallback=True)

    @classmethod
    def from_hours(cls, hours: Iterable[int]) -> "HourDistribution":
        counts = np.bincount(np.asarray(list(hours), dtype=np.int64), minlength=N_BINS)
        if counts.size != N_BINS:
            raise ValueError("hour bins must lie in [0, 24)")
        total = counts.sum()
        if total == 0:
            return cls.uniform()
        return cls(tuple((counts / total).tolist()))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bins, dtype=float)


def pct_change(before: float, after: float) -> float:
    """Relative change ``(after - before) / before`` as a fraction."""
    if before < 0 or after < 0:
        raise ValueError("counts must be non-negative")
    if before == 0:
        raise ZeroBaselineError("zero baseline")
    return (after - before) / before


def _as_probs(dist) -> np.ndarray:
    if isinstance(dist, HourDistribution):
        return dist.as_array()
    return np.asarray(dist, dtype=float)


def kl_divergence(q_before, q_after, epsilon: float = 1e-6) -> float:
    """KL divergence D(before || after) in nats after additive smoothing.

    Both inputs are smoothed as ``(b + epsilon) / (1 + k * epsilon)`` with ``k``
    bins. With ``epsilon == 0`` a zero bin in ``q_after`` under positive
    ``q_before`` mass yields ``inf``.
    """
    p = _as_probs(q_before)
    q = _as_probs(q_after)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    k = p.size
    p = (p + epsilon) / (1.0 + k * epsilon)
    q = (q + epsilon) / (1.0 + k * epsilon)
    total = 0.0
    for pi, qi in zip(p.tolist(), q.tolist()):
        if pi == 0.0:
            continue
        if qi == 0.0:
            return math.inf
        total += pi * math.log(pi / qi)
    return max(total, 0.0)


@dataclass
class FeatureDelta:
    lna_change: float
    inactivity_kl: float
    sei_change: float
    lexicon_changes: dict[str, float]
    category_changes: dict[str, float]
    flags: dict[str, str] = field(default_factory=dict)

    def as_row(self) -> dict[str, float]:
        row = {"lna_pct": self.lna_change, "inact_kl": self.inactivity_kl, "sei_pct": self.sei_change}
        row.update(self.lexicon_changes)
        row.update(self.category_changes)
        return {col: row[col] for col in FEATURE_COLUMNS}

    def degenerate(self, column: str) -> bool:
        return column in self.flags and self.flags[column] != "uniform_fallback"


@dataclass
class WindowSummary:
    """Everything extracted from one window before turning it into changes."""

    lna: int
    sei: int
    total: int
    distribution: HourDistribution
    lexicon: dict[str, int]
    tokens: int
    categories: dict[str, int]
    unresolved: int = 0


def summarize_window(
    events: Sequence[ActivityEvent],
    secs: np.ndarray,
    config: AnalysisConfig,
    matcher: LexiconMatcher | None,
    provider: CategoryProvider | None,
) -> WindowSummary:
    counts = window_counts_secs(secs, config)
    lex: dict[str, int] = {}
    tokens = 0
    stream = TokenStream.of([ev.text for ev in events]) if matcher is not None else None
    if matcher is not None:
        res = matcher.count(stream)
        lex, tokens = res.counts, res.tokens
    cats = {name: 0 for name in CATEGORY_COLUMNS.values()}
    unresolved = 0
    if provider is not None:
        if hasattr(provider, "category_counts"):
            found = provider.category_counts(events, stream)
            for tag in cats:
                cats[tag] = found.get(tag, 0)
        else:
            for tags in (categorize_event(ev, provider) for ev in events):
                if UNRESOLVED in tags:
                    unresolved += 1
                    continue
                for tag in tags:
                    if tag in cats:
                        cats[tag] += 1
    return WindowSummary(
        lna=counts.lna,
        sei=counts.sei,
        total=counts.total,
        distribution=HourDistribution.from_hours(counts.inactivity_midpoints),
        lexicon=lex,
        tokens=tokens,
        categories=cats,
        unresolved=unresolved,
    )


def _change(before: float, after: float, column: str, flags: dict) -> float:
    try:
        return pct_change(before, after)
    except ZeroBaselineError:
        flags[column] = "zero_baseline"
        return math.nan


def delta_from_windows(b: WindowSummary, a: WindowSummary, config: AnalysisConfig) -> FeatureDelta:
    flags: dict[str, str] = {}
    lna = _change(b.lna, a.lna, "lna_pct", flags)
    sei = _change(b.sei, a.sei, "sei_pct", flags)

    if b.total == 0 or a.total == 0:
        flags["inact_kl"] = "empty_window"
        kl = math.nan
    else:
        if b.distribution.fallback or a.distribution.fallback:
            flags["inact_kl"] = "uniform_fallback"
        kl = kl_divergence(b.distribution, a.distribution, config.kl_epsilon)

    lexicon_changes = {}
    for column in LEXICON_COLUMNS:
        cat = config.lexicon_categories.get(column)
        before = b.lexicon.get(cat, 0)
        after = a.lexicon.get(cat, 0)
        if config.lexicon_rate:
            if b.tokens == 0 or a.tokens == 0:
                flags[column] = "zero_baseline"
                lexicon_changes[column] = math.nan
                continue
            before, after = before / b.tokens, after / a.tokens
        lexicon_changes[column] = _change(before, after, column, flags)

    category_changes = {
        column: _change(b.categories.get(cat, 0), a.categories.get(cat, 0), column, flags)
        for column, cat in CATEGORY_COLUMNS.items()
    }
    return FeatureDelta(lna, kl, sei, lexicon_changes, category_changes, flags)


def extract_feature_delta(
    events: Sequence[ActivityEvent],
    config: AnalysisConfig,
    lexicon: Lexicon | LexiconMatcher | None = None,
    categorizer: CategoryProvider | None = None,
) -> FeatureDelta:
    """Compute the nine behavior-shift variables for one participant.

    ``config.tz_offset`` must already be the participant's offset. Variables
    whose before-window count is zero are NaN and named in ``flags``; the
    others are still computed.
    """
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) or lexicon is None else LexiconMatcher(lexicon)
    with gc_paused():
        return _extract(events, config, matcher, categorizer)


def _extract(events, config, matcher, categorizer) -> FeatureDelta:
    secs = epoch_seconds(events)
    order = np.argsort(secs, kind="stable")
    secs = secs[order]
    events = [events[i] for i in order]
    in_before, in_after = segment_mask(secs, config)
    summaries = []
    for mask in (in_before, in_after):
        idx = np.nonzero(mask)[0]
        window_events = events[idx[0] : idx[-1] + 1] if idx.size else []
        summaries.append(summarize_window(window_events, secs[mask], config, matcher, categorizer))
    return delta_from_windows(summaries[0], summaries[1], config)


# --------------------------------------------------------------------------
# feature table CSV


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def write_features_csv(path: str | Path, deltas: Mapping[str, FeatureDelta]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("pid",) + FEATURE_COLUMNS + ("flags",))
        for pid in sorted(deltas):
            d = deltas[pid]
            row = d.as_row()
            flags = ";".join(f"{k}={v}" for k, v in sorted(d.flags.items()))
            writer.writerow([pid] + [_fmt(row[c]) for c in FEATURE_COLUMNS] + [flags])


def read_features_csv(path: str | Path) -> dict[str, FeatureDelta]:
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURE_COLUMNS) - set(reader.fieldnames or ())
        if "pid" not in (reader.fieldnames or ()) or missing:
            raise ValueError(f"features file lacks columns: {sorted(missing | {'pid'})}")
        for rec in reader:
            vals = {c: float(rec[c]) if rec[c] else math.nan for c in FEATURE_COLUMNS}
            flags = {}
            if rec.get("flags"):
                for item in rec["flags"].split(";"):
                    k, _, v = item.partition("=")
                    flags[k] = v
            out[rec["pid"]] = FeatureDelta(
                vals["lna_pct"],
                vals["inact_kl"],
                vals["sei_pct"],
                {c: vals[c] for c in LEXICON_COLUMNS},
                {c: vals[c] for c in CATEGORY_COLUMNS},
                flags,
            )
    return out


def featurize_cohort(
    streams: Mapping[str, Sequence[ActivityEvent]],
    offsets: Mapping[str, int],
    config: AnalysisConfig,
    lexicon: Lexicon | LexiconMatcher | None = None,
    categorizer: CategoryProvider | None = None,
) -> dict[str, FeatureDelta]:
    """Feature vectors for several participants, keyed and ordered by id."""
    matcher = lexicon if isinstance(lexicon, LexiconMatcher) or lexicon is None else LexiconMatcher(lexicon)
    return {
        pid: extract_feature_delta(streams[pid], config.for_participant(offsets.get(pid, 0)), matcher, categorizer)
        for pid in sorted(streams)
    }
