"""Synthetic participants with planted behavior shifts.

Event times are a nonhomogeneous Poisson process over the local clock,
sampled by thinning against the peak hourly rate, with zero intensity inside
the nightly sleep gap. Each accepted event may spawn one follow-up a few
minutes later, which is what produces short event intervals.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import Participant, SurveyRound, dump_cohort
from .ingest import ActivityEvent, _trusted_event, write_events
from .lexicon import Lexicon, OfflineCategoryProvider, bundled_lexicon
from .timeline import AnalysisConfig

HOURS = 24
LATE_NIGHT_HOURS = (22, 23, 0, 1, 2, 3, 4)
KIND_WEIGHTS = {"query": 0.4, "url_visit": 0.1, "video_watch": 0.4, "youtube_search": 0.1}
_PLATFORM = {"query": "search", "url_visit": "search", "video_watch": "youtube", "youtube_search": "youtube"}
FILLER_WORDS = (
    "weather", "recipe", "game", "music", "movie", "tutorial", "review", "map",
    "football", "guitar", "camera", "bus", "pizza", "laptop", "shoes", "garden",
    "chess", "coffee", "bike", "piano",
)  # fmt: skip
_ID_CHARS = np.array(list("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-"))


def _normalized(weights: dict[str, float]) -> dict[str, float]:
    if any(w < 0 for w in weights.values()):
        raise ValueError("mix weights must be non-negative")
    total = sum(weights.values())
    if total <= 0:
        raise ValueError("mix weights sum to zero")
    return {k: w / total for k, w in weights.items()}


def _default_intensity() -> tuple[float, ...]:
    # events/hour by local hour; quiet mornings, evening peak
    return (
        1.5, 1.0, 0.5, 0.3, 0.2, 0.2, 0.3, 0.8, 1.2, 1.5, 1.8, 2.0,
        2.0, 2.0, 2.0, 2.2, 2.4, 2.6, 2.8, 3.0, 3.2, 3.0, 2.6, 2.0,
    )  # fmt: skip


@dataclass
class BehaviorProfile:
    hourly_intensity: tuple[float, ...] = field(default_factory=_default_intensity)
    burst_prob: float = 0.3
    lexicon_mix: dict[str, float] = field(
        default_factory=lambda: {
            "personal_concern": 0.12,
            "negative_emotion": 0.08,
            "social": 0.1,
            "health": 0.1,
            "neutral": 0.6,
        }
    )
    category_mix: dict[str, float] = field(default_factory=lambda: {"adult": 0.08, "news": 0.12, "other": 0.8})
    sleep_gap: tuple[float, float] = (2.0, 8.0)  # local start hour, duration in hours

    def __post_init__(self):
        self.hourly_intensity = tuple(float(v) for v in self.hourly_intensity)
        if len(self.hourly_intensity) != HOURS or any(v < 0 for v in self.hourly_intensity):
            raise ValueError("hourly_intensity needs 24 non-negative rates")
        if not 0.0 <= self.burst_prob <= 1.0:
            raise ValueError("burst_prob must lie in [0, 1]")
        self.lexicon_mix = _normalized(dict(self.lexicon_mix))
        self.category_mix = _normalized(dict(self.category_mix))
        start, duration = (float(v) for v in self.sleep_gap)
        if not 7.0 <= duration < 24.0:
            raise ValueError("sleep gap must last at least 7 hours and less than a day")
        self.sleep_gap = (start % 24.0, duration)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hourly_intensity"] = list(self.hourly_intensity)
        d["sleep_gap"] = list(self.sleep_gap)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorProfile":
        return cls(**d)


@dataclass
class ShiftSpec:
    """Changes applied to a profile for the after-cutoff window."""

    intensity_mult: float = 1.0
    lna_intensity_mult: float = 1.0
    burst_prob_delta: float = 0.0
    sleep_gap_shift_hours: float = 0.0
    lexicon_mix_deltas: dict[str, float] = field(default_factory=dict)
    category_mix_deltas: dict[str, float] = field(default_factory=dict)

    def apply(self, profile: BehaviorProfile) -> BehaviorProfile:
        if self.intensity_mult < 0 or self.lna_intensity_mult < 0:
            raise ValueError("intensity multipliers must be non-negative")
        rates = [
            r * self.intensity_mult * (self.lna_intensity_mult if h in LATE_NIGHT_HOURS else 1.0)
            for h, r in enumerate(profile.hourly_intensity)
        ]

        def shifted(mix, deltas):
            unknown = set(deltas) - set(mix)
            if unknown:
                raise ValueError(f"unknown mix keys {sorted(unknown)}")
            return {k: w + deltas.get(k, 0.0) for k, w in mix.items()}

        start, duration = profile.sleep_gap
        return BehaviorProfile(
            hourly_intensity=tuple(rates),
            burst_prob=profile.burst_prob + self.burst_prob_delta,
            lexicon_mix=shifted(profile.lexicon_mix, self.lexicon_mix_deltas),
            category_mix=shifted(profile.category_mix, self.category_mix_deltas),
            sleep_gap=(start + self.sleep_gap_shift_hours, duration),
        )

    @property
    def is_null(self) -> bool:
        return self == ShiftSpec()


class Vocabulary:
    """Words and URLs the generator draws from, keyed by lexicon/content category."""

    def __init__(self, lexicon: Lexicon | None = None, provider: OfflineCategoryProvider | None = None):
        lexicon = lexicon or bundled_lexicon()
        provider = provider or OfflineCategoryProvider.bundled()
        owners: dict[str, set[str]] = {}
        for cat, patterns in lexicon.categories.items():
            for p in patterns:
                owners.setdefault(p, set()).add(cat)
        self.lexicon_words: dict[str, list[str]] = {}
        for cat, patterns in lexicon.categories.items():
            words = [p[:-1] + "s" if p.endswith("*") else p for p in patterns if len(owners[p]) == 1]
            self.lexicon_words[cat] = sorted(words)
        self.keywords = {c: sorted(k for k in ws if " " not in k) for c, ws in provider.keywords.items()}
        self.domains = {c: sorted(ds) for c, ds in provider.domains.items()}
        self.filler = list(FILLER_WORDS)


_DEFAULT_VOCAB: Vocabulary | None = None


def default_vocabulary() -> Vocabulary:
    global _DEFAULT_VOCAB
    if _DEFAULT_VOCAB is None:
        _DEFAULT_VOCAB = Vocabulary()
    return _DEFAULT_VOCAB


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _in_sleep(local_hour: np.ndarray, sleep_gap: tuple[float, float]) -> np.ndarray:
    start, duration = sleep_gap
    return ((local_hour - start) % 24.0) < duration


def sample_times(
    profile: BehaviorProfile, start: int, end: int, rng: np.random.Generator, tz_offset: int = 0
) -> np.ndarray:
    """Sorted event instants (epoch seconds) in ``[start, end)``."""
    rates = np.asarray(profile.hourly_intensity)
    peak = rates.max()
    if peak <= 0 or end <= start:
        return np.empty(0, dtype=np.int64)
    hours = (end - start) / 3600.0
    n = rng.poisson(peak * hours)
    t = rng.uniform(start, end, size=n)
    local = ((t + tz_offset * 60) % 86400) / 3600.0
    rate = rates[local.astype(np.int64) % HOURS]
    rate[_in_sleep(local, profile.sleep_gap)] = 0.0
    keep = rng.random(n) * peak < rate
    primary = t[keep]
    burst = rng.random(primary.size) < profile.burst_prob
    follow = primary[burst] + rng.uniform(5.0, 295.0, size=int(burst.sum()))
    times = np.concatenate([primary, follow[follow < end]])
    return np.sort(np.floor(times).astype(np.int64))


def _choice(rng, mix: dict[str, float], n: int) -> list[str]:
    keys = list(mix)
    return [keys[i] for i in rng.choice(len(keys), size=n, p=[mix[k] for k in keys])]


def generate_stream(
    profile: BehaviorProfile,
    window: tuple[datetime, datetime],
    seed,
    pid: str = "p0",
    tz_offset: int = 0,
    vocabulary: Vocabulary | None = None,
) -> list[ActivityEvent]:
    """One participant's events in ``window`` (aware datetimes), fully determined by ``seed``."""
    vocab = vocabulary or default_vocabulary()
    rng = _rng(seed)
    start, end = (int(w.timestamp()) for w in window)
    secs = sample_times(profile, start, end, rng, tz_offset)
    n = secs.size
    if n == 0:
        return []
    kinds = _choice(rng, KIND_WEIGHTS, n)
    lex = _choice(rng, profile.lexicon_mix, n)
    cats = _choice(rng, profile.category_mix, n)
    picks = rng.random((n, 3))
    ids = np.ascontiguousarray(_ID_CHARS[rng.integers(0, _ID_CHARS.size, size=(n, 11))]).view("<U11").ravel().tolist()

    def pick(words, u):
        return words[int(u * len(words))]

    events = []
    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    secs = secs.tolist()
    for i in range(n):
        kind, lcat, ccat = kinds[i], lex[i], cats[i]
        u_word, u_fill, u_cat = picks[i]
        url = None
        if kind == "url_visit":
            domains = vocab.domains.get(ccat)
            host = pick(domains, u_cat) if domains else "example.org"
            text = ""
            url = f"https://{host}/page{int(u_fill * 1000)}"
        else:
            words = []
            if lcat != "neutral":
                words.append(pick(vocab.lexicon_words[lcat], u_word))
            words.append(pick(vocab.filler, u_fill))
            keywords = vocab.keywords.get(ccat)
            if keywords:
                words.append(pick(keywords, u_cat))
            text = " ".join(words)
            if kind == "video_watch":
                url = "https://www.youtube.com/watch?v=" + ids[i]
            elif kind == "youtube_search":
                url = "https://www.youtube.com/results?search_query=" + "+".join(words)
        # kinds and platforms come from fixed tables, so the checks can be skipped
        events.append(_trusted_event(pid, epoch + timedelta(seconds=secs[i]), _PLATFORM[kind], kind, text, url))
    return events


# --------------------------------------------------------------------------
# cohorts


def _items_for_total(total: int, n_items: int) -> list[int]:
    items = []
    for _ in range(n_items):
        v = min(3, total)
        items.append(v)
        total -= v
    if total:
        raise ValueError("total exceeds item maximum")
    return items


def _shift_items(items: list[int], delta: int) -> list[int]:
    out = list(items)
    step = 1 if delta > 0 else -1
    remaining = abs(delta)
    for i in range(len(out)):
        while remaining and 0 <= out[i] + step <= 3:
            out[i] += step
            remaining -= 1
    if remaining:
        raise ValueError("delta does not fit the item ranges")
    return out


def _survey_pair(rng, n_items: int, affected: bool) -> tuple[list[int], list[int]]:
    cap = 3 * n_items
    base = int(rng.integers(0, cap // 2))
    if affected:
        delta = int(rng.integers(5, 11))
        base = min(base, cap - delta)
    else:
        delta = int(rng.integers(-3, 5))
        delta = max(delta, -base)
        delta = min(delta, cap - base)
    r1 = _items_for_total(base, n_items)
    return r1, _shift_items(r1, delta)


def affected_count(n: int, fraction: float) -> int:
    """Nearest-integer number of affected participants (halves round up)."""
    return int(math.floor(n * fraction + 0.5))


@dataclass
class SynthSpec:
    n: int
    seed: int = 0
    base_profile: BehaviorProfile = field(default_factory=BehaviorProfile)
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    group_fraction: float = 0.41
    tz_offset: int = -300
    heterogeneity: float = 0.3
    config: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("n must be at least 4")
        if not 0.0 < self.group_fraction < 1.0:
            raise ValueError("group_fraction must lie in (0, 1)")
        k = affected_count(self.n, self.group_fraction)
        if k == 0 or k == self.n:
            raise ValueError("both groups must be non-empty")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "base_profile" in d:
            d["base_profile"] = BehaviorProfile.from_dict(d["base_profile"])
        if "shift" in d:
            d["shift"] = ShiftSpec(**d["shift"])
        if "config" in d:
            d["config"] = AnalysisConfig.from_dict(d["config"])
        return cls(**d)


@dataclass
class SynthCohort:
    participants: list[Participant]
    events: dict[str, list[ActivityEvent]]
    ground_truth: dict[str, dict]


def _jittered(profile: BehaviorProfile, rng, spread: float) -> BehaviorProfile:
    if spread <= 0:
        return profile
    scale = float(np.exp(rng.normal(0.0, spread)))
    start, duration = profile.sleep_gap
    return replace(
        profile,
        hourly_intensity=tuple(r * scale for r in profile.hourly_intensity),
        sleep_gap=(start + float(rng.normal(0.0, spread)), duration),
    )


def generate_cohort(
    n: int,
    base_profile: BehaviorProfile,
    group_fraction: float,
    shift: ShiftSpec,
    seed: int,
    config: AnalysisConfig | None = None,
    tz_offset: int = -300,
    heterogeneity: float = 0.3,
    vocabulary: Vocabulary | None = None,
) -> SynthCohort:
    """Participants whose after-window behavior follows ``shift`` when affected.

    Affected participants also get PHQ-9 and GAD-7 rises of 5-10 points;
    the rest change by -3 to +4. The first ``affected_count(n, fraction)``
    indices of a seeded permutation are affected.
    """
    spec = SynthSpec(n, seed, base_profile, shift, group_fraction, tz_offset, heterogeneity, config or AnalysisConfig())
    config = spec.config.for_participant(tz_offset)
    start, cut, end = (datetime.fromtimestamp(b, tz=timezone.utc) for b in config.window_bounds())
    before_w, after_w = (start, cut), (cut, end)

    top = _rng([seed, 0xC0407])
    affected = np.zeros(n, dtype=bool)
    affected[top.permutation(n)[: affected_count(n, group_fraction)]] = True

    width = len(str(n - 1))
    people, events, truth = [], {}, {}
    for i in range(n):
        pid = f"s{i:0{width}d}"
        rng = _rng([seed, i])
        profile = _jittered(base_profile, rng, heterogeneity)
        after_profile = shift.apply(profile) if affected[i] else profile
        gender = ("female", "male", "nonbinary")[int(rng.choice(3, p=[0.61, 0.35, 0.04]))]
        citizen = bool(rng.random() < 0.8)
        lower = bool(rng.random() < 0.63)
        gad = _survey_pair(rng, 7, bool(affected[i]))
        phq = _survey_pair(rng, 9, bool(affected[i]))
        stream = generate_stream(profile, before_w, [seed, i, 1], pid, tz_offset, vocabulary)
        stream += generate_stream(after_profile, after_w, [seed, i, 2], pid, tz_offset, vocabulary)
        people.append(
            Participant(
                id=pid,
                gender=gender,
                us_citizen=citizen,
                class_year="lower" if lower else "upper",
                tz_offset=tz_offset,
                surveys={"r1": SurveyRound(tuple(gad[0]), tuple(phq[0])), "r2": SurveyRound(tuple(gad[1]), tuple(phq[1]))},
                events=f"events/{pid}.ndjson",
            )
        )
        events[pid] = stream
        truth[pid] = {"affected": bool(affected[i]), "dep": bool(affected[i]), "anx": bool(affected[i])}
    return SynthCohort(people, events, truth)


def write_dataset(cohort: SynthCohort, out_dir: str | Path) -> list[Path]:
    """Write cohort.json, events/<pid>.ndjson and ground_truth.json."""
    out = Path(out_dir)
    (out / "events").mkdir(parents=True, exist_ok=True)
    written = []
    for p in cohort.participants:
        path = out / "events" / f"{p.id}.ndjson"
        write_events(path, cohort.events[p.id])
        written.append(path)
    path = out / "cohort.json"
    path.write_text(dump_cohort(cohort.participants), encoding="utf-8")
    written.append(path)
    path = out / "ground_truth.json"
    path.write_text(json.dumps(cohort.ground_truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written


def simulate(spec: SynthSpec) -> SynthCohort:
    return generate_cohort(
        spec.n,
        spec.base_profile,
        spec.group_fraction,
        spec.shift,
        spec.seed,
        spec.config,
        spec.tz_offset,
        spec.heterogeneity,
    )
