"""Participants, survey scoring, group labels and the group-difference analyses."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import stats
from .features import FEATURE_COLUMNS, FeatureDelta
from .stats import GroupSummary, StatTestResult

GENDERS = ("female", "male", "nonbinary")
CLASS_YEARS = ("lower", "upper")
DEMOGRAPHIC_FACTORS = ("female", "us_citizen", "lower_class")
GROUPINGS = ("dep", "anx")

VARIABLE_LABELS = {
    "lna_pct": "Late Night Activities (%)",
    "inact_kl": "Inactivity Periods (D_KL)",
    "sei_pct": "Short Event Intervals (%)",
    "liwc_personal": "Personal Concern (%)",
    "liwc_negemo": "Negative Words (%)",
    "liwc_social": "Social Words (%)",
    "liwc_health": "Health/illness (%)",
    "cat_adult": "Adult (%)",
    "cat_news": "News (%)",
}

REPORT_COLUMNS = (
    "variable", "n_a", "mean_a", "sd_a", "ci_a_lo", "ci_a_hi",
    "n_b", "mean_b", "sd_b", "ci_b_lo", "ci_b_hi",
    "F", "df1", "df2", "p", "eta2_partial", "holm_reject", "uncorrected_reject",
)  # fmt: skip

UNRELIABLE_FRACTION = 0.20


class CohortError(ValueError):
    pass


def _score(items: Sequence[int], n_items: int, name: str) -> int:
    items = list(items)
    if len(items) != n_items:
        raise ValueError(f"{name} needs {n_items} items, got {len(items)}")
    for v in items:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v <= 3:
            raise ValueError(f"{name} item {v!r} outside 0-3")
    return int(sum(items))


def score_gad7(items: Sequence[int]) -> int:
    return _score(items, 7, "GAD-7")


def score_phq9(items: Sequence[int]) -> int:
    return _score(items, 9, "PHQ-9")


@dataclass(frozen=True)
class SurveyRound:
    gad7: tuple[int, ...]
    phq9: tuple[int, ...]

    def __post_init__(self):
        score_gad7(self.gad7)
        score_phq9(self.phq9)


@dataclass(frozen=True)
class GroupLabels:
    dep: bool
    anx: bool
    delta_phq9: int
    delta_gad7: int


@dataclass
class Participant:
    id: str
    gender: str
    us_citizen: bool
    class_year: str
    tz_offset: int = 0
    surveys: dict[str, SurveyRound] = field(default_factory=dict)
    events: str | None = None

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"unknown gender {self.gender!r}")
        if self.class_year not in CLASS_YEARS:
            raise ValueError(f"unknown class_year {self.class_year!r}")

    @property
    def complete(self) -> bool:
        return "r1" in self.surveys and "r2" in self.surveys

    def factor(self, name: str) -> bool:
        if name == "female":
            return self.gender == "female"
        if name == "us_citizen":
            return self.us_citizen
        if name == "lower_class":
            return self.class_year == "lower"
        raise KeyError(name)


def label_groups(p: Participant) -> GroupLabels:
    """DEP/ANX labels from a rise of at least 5 points between survey rounds."""
    if not p.complete:
        raise CohortError(f"participant {p.id} is missing a survey round")
    r1, r2 = p.surveys["r1"], p.surveys["r2"]
    d_phq = score_phq9(r2.phq9) - score_phq9(r1.phq9)
    d_gad = score_gad7(r2.gad7) - score_gad7(r1.gad7)
    return GroupLabels(dep=d_phq >= 5, anx=d_gad >= 5, delta_phq9=d_phq, delta_gad7=d_gad)


def in_group(p: Participant, grouping: str) -> bool:
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}")
    return getattr(label_groups(p), grouping)


# --------------------------------------------------------------------------
# cohort JSON


def participant_from_dict(rec: dict) -> Participant:
    surveys = {
        key: SurveyRound(tuple(r["gad7"]), tuple(r["phq9"]))
        for key, r in (rec.get("surveys") or {}).items()
    }
    return Participant(
        id=str(rec["id"]),
        gender=rec["gender"],
        us_citizen=bool(rec["us_citizen"]),
        class_year=rec["class_year"],
        tz_offset=int(rec.get("tz_offset", 0)),
        surveys=surveys,
        events=rec.get("events"),
    )


def participant_to_dict(p: Participant) -> dict:
    return {
        "id": p.id,
        "gender": p.gender,
        "us_citizen": p.us_citizen,
        "class_year": p.class_year,
        "tz_offset": p.tz_offset,
        "surveys": {k: {"gad7": list(r.gad7), "phq9": list(r.phq9)} for k, r in sorted(p.surveys.items())},
        "events": p.events,
    }


def load_cohort(path: str | Path) -> list[Participant]:
    """Read a cohort file; relative event paths resolve against its directory."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        people = [participant_from_dict(r) for r in doc["participants"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CohortError(f"{path}: invalid cohort record: {exc}") from None
    ids = [p.id for p in people]
    if len(set(ids)) != len(ids):
        raise CohortError(f"{path}: duplicate participant ids")
    for p in people:
        if p.events is not None and not Path(p.events).is_absolute():
            p.events = str(path.parent / p.events)
    return people


def dump_cohort(participants: Iterable[Participant]) -> str:
    doc = {"participants": [participant_to_dict(p) for p in participants]}
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


# --------------------------------------------------------------------------
# analyses


def demographic_tests(
    cohort: Sequence[Participant], grouping: str, correction: bool = True
) -> dict[str, StatTestResult | None]:
    """Chi-square of each demographic factor against group membership.

    Factors with an empty row or column are reported as ``None`` (untestable).
    """
    people = [p for p in cohort if p.complete]
    out: dict[str, StatTestResult | None] = {}
    for factor in DEMOGRAPHIC_FACTORS:
        table = np.zeros((2, 2))
        for p in people:
            table[0 if in_group(p, grouping) else 1, 0 if p.factor(factor) else 1] += 1
        try:
            out[factor] = stats.chi2_yates(table, correction=correction)
        except stats.DegenerateSampleError:
            out[factor] = None
    return out


def select_covariates(cohort: Sequence[Participant], grouping: str, alpha: float = 0.05) -> list[str]:
    tests = demographic_tests(cohort, grouping)
    return [f for f, r in tests.items() if r is not None and r.p < alpha]


@dataclass
class SeasonalResult:
    tests: dict[str, StatTestResult | None]
    n_pairs: dict[str, int]
    excluded: list[str]


def seasonal_control(
    features_a: Mapping[str, FeatureDelta],
    features_b: Mapping[str, FeatureDelta],
    columns: Sequence[str] = FEATURE_COLUMNS,
) -> SeasonalResult:
    """Paired t-tests of each participant's change in year A against year B.

    Participants missing from either year are excluded (and listed); per
    variable, pairs with a degenerate value on either side are dropped.
    """
    shared = sorted(set(features_a) & set(features_b))
    excluded = sorted(set(features_a) ^ set(features_b))
    if len(shared) < 2:
        raise stats.DegenerateSampleError("n < 2")
    tests: dict[str, StatTestResult | None] = {}
    n_pairs = {}
    for col in columns:
        xa, xb = [], []
        for pid in shared:
            va = features_a[pid].as_row()[col]
            vb = features_b[pid].as_row()[col]
            if math.isfinite(va) and math.isfinite(vb):
                xa.append(va)
                xb.append(vb)
        n_pairs[col] = len(xa)
        try:
            tests[col] = stats.paired_t_test(xb, xa)
        except stats.DegenerateSampleError:
            tests[col] = None
    return SeasonalResult(tests, n_pairs, excluded)


@dataclass
class ReportRow:
    variable: str
    summary_a: GroupSummary | None
    summary_b: GroupSummary | None
    test: StatTestResult | None
    holm_reject: bool = False
    uncorrected_reject: bool = False
    unreliable: bool = False
    excluded: int = 0
    note: str = ""

    def as_record(self) -> dict:
        def s(summary, attr):
            return getattr(summary, attr) if summary is not None else math.nan

        t = self.test
        return {
            "variable": self.variable,
            "n_a": self.summary_a.n if self.summary_a else 0,
            "mean_a": s(self.summary_a, "mean"),
            "sd_a": s(self.summary_a, "sd"),
            "ci_a_lo": s(self.summary_a, "ci95_lo"),
            "ci_a_hi": s(self.summary_a, "ci95_hi"),
            "n_b": self.summary_b.n if self.summary_b else 0,
            "mean_b": s(self.summary_b, "mean"),
            "sd_b": s(self.summary_b, "sd"),
            "ci_b_lo": s(self.summary_b, "ci95_lo"),
            "ci_b_hi": s(self.summary_b, "ci95_hi"),
            "F": t.statistic if t else math.nan,
            "df1": t.df[0] if t else math.nan,
            "df2": t.df[1] if t else math.nan,
            "p": t.p if t else math.nan,
            "eta2_partial": t.effect if t else math.nan,
            "holm_reject": self.holm_reject,
            "uncorrected_reject": self.uncorrected_reject,
        }


def _summary_or_none(values):
    try:
        return stats.group_summary(values)
    except stats.DegenerateSampleError:
        return None


def run_group_analysis(
    cohort: Sequence[Participant],
    grouping: str,
    features: Mapping[str, FeatureDelta],
    covariates: Sequence[str] | None = ("female",),
    alpha: float = 0.05,
    columns: Sequence[str] = FEATURE_COLUMNS,
    test: Callable = stats.ancova,
) -> list[ReportRow]:
    """ANCOVA of each feature on group membership, then Holm across the features.

    Group A is the labeled group (DEP or ANX), group B its complement.
    ``covariates=None`` selects demographic factors whose chi-square p is
    below ``alpha``; an empty sequence fits the group term alone.
    """
    people = sorted((p for p in cohort if p.complete), key=lambda p: p.id)
    missing = [p.id for p in people if p.id not in features]
    if missing:
        raise CohortError(f"no features for participants: {', '.join(missing)}")
    labels = {p.id: in_group(p, grouping) for p in people}
    if all(labels.values()) or not any(labels.values()):
        raise CohortError(f"grouping {grouping!r} leaves a group empty")
    if covariates is None:
        covariates = select_covariates(people, grouping, alpha)
    covariates = list(covariates)

    rows = []
    for col in columns:
        used = [p for p in people if math.isfinite(features[p.id].as_row()[col])]
        excluded = len(people) - len(used)
        y = np.array([features[p.id].as_row()[col] for p in used])
        g = np.array([1.0 if labels[p.id] else 0.0 for p in used])
        cov = np.array([[1.0 if p.factor(c) else 0.0 for c in covariates] for p in used]).reshape(len(used), -1)
        row = ReportRow(
            variable=col,
            summary_a=_summary_or_none(y[g == 1]),
            summary_b=_summary_or_none(y[g == 0]),
            test=None,
            excluded=excluded,
            unreliable=excluded > UNRELIABLE_FRACTION * len(people),
        )
        try:
            row.test = test(y, g, cov if covariates else None)
        except (stats.SingularDesignError, stats.DegenerateSampleError, ValueError) as exc:
            row.note = str(exc)
        rows.append(row)

    tested = [r for r in rows if r.test is not None]
    for r, flag in zip(tested, stats.holm([r.test.p for r in tested], alpha)):
        r.holm_reject = flag
        r.uncorrected_reject = r.test.p < alpha
    return rows


# --------------------------------------------------------------------------
# report output


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def write_report_csv(path: str | Path, rows: Sequence[ReportRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            rec = r.as_record()
            w.writerow([_cell(rec[c]) for c in REPORT_COLUMNS])


def _pct(value: float, variable: str) -> str:
    if math.isnan(value):
        return "-"
    return f"{value:.2f}" if variable == "inact_kl" else f"{100 * value:.2f}"


def _p(value: float) -> str:
    if math.isnan(value):
        return "-"
    if value < 0.001:
        return "<.001"
    return f"{value:.3f}".lstrip("0")


def render_markdown(rows: Sequence[ReportRow], grouping: str, demographics=None) -> str:
    """Markdown mirror of the report: group means (SD) and 95% CIs, F, p, eta^2."""
    a, b = grouping.upper(), f"non-{grouping.upper()}"
    lines = []
    if demographics:
        lines += [f"### Demographics ({a} vs {b})", "", "| Factor | chi2 (1) | P |", "|---|---|---|"]
        for factor, res in demographics.items():
            if res is None:
                lines.append(f"| {factor} | untestable | - |")
            else:
                lines.append(f"| {factor} | {res.statistic:.2f} | {_p(res.p)} |")
        lines.append("")
    lines += [
        f"### {a} vs {b}",
        "",
        f"| Variable | {a}, mean (SD) | {a} 95% CI | {b}, mean (SD) | {b} 95% CI | P | eta2_partial | F | Holm |",
        "|---|---|---|---|---|---|---|---|---|",
    ]
    for r in rows:
        rec = r.as_record()
        v = r.variable

        def grp(side):
            return f"{_pct(rec['mean_' + side], v)} ({_pct(rec['sd_' + side], v)})"

        def ci(side):
            return f"{_pct(rec['ci_' + side + '_lo'], v)}-{_pct(rec['ci_' + side + '_hi'], v)}"

        f_txt = "-" if r.test is None else f"F({int(rec['df1'])},{int(rec['df2'])})={rec['F']:.2f}"
        eta = "-" if math.isnan(rec["eta2_partial"]) else f"{rec['eta2_partial']:.3f}"
        flag = "reject" if r.holm_reject else "retain"
        if r.unreliable:
            flag += " (unreliable)"
        lines.append(
            f"| {VARIABLE_LABELS.get(v, v)} | {grp('a')} | {ci('a')} | {grp('b')} | {ci('b')} "
            f"| {_p(rec['p'])} | {eta} | {f_txt} | {flag} |"
        )
    return "\n".join(lines) + "\n"
