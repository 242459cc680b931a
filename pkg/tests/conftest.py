from datetime import datetime, timedelta, timezone

import pytest

from onlineshift.ingest import ActivityEvent
from onlineshift.timeline import AnalysisConfig

UTC = timezone.utc


def at(*args, **kw) -> datetime:
    return datetime(*args, tzinfo=UTC, **kw)


def query(ts, text="", pid="p1"):
    return ActivityEvent(pid, ts, "search", "query", text, None)


def watch(ts, title="", vid="abc123", pid="p1"):
    return ActivityEvent(pid, ts, "youtube", "video_watch", title, f"https://www.youtube.com/watch?v={vid}")


def visit(ts, url, pid="p1"):
    return ActivityEvent(pid, ts, "search", "url_visit", "", url)


def mirrored(before_events, config):
    """Copy events shifted by exactly one window length so both windows match."""
    shift = timedelta(days=config.window_days)
    return [ActivityEvent(e.pid, e.ts + shift, e.platform, e.kind, e.text, e.url) for e in before_events]


CUTOFF = at(2020, 3, 14)
DAYS = 60  # fits inside both default windows


def day_pattern(day, late=True, pid="p1"):
    """One day of activity: a noon pair (2 min apart), a news visit and a late query."""
    evs = [
        query(day + timedelta(hours=12), "work worry with friend at the doctor", pid),
        query(day + timedelta(hours=12, minutes=2), "breaking news lockdown", pid),
        visit(day + timedelta(hours=15), "https://www.cnn.com/a", pid),
        watch(day + timedelta(hours=16), "nsfw clip", pid=pid),
    ]
    if late:
        evs.append(query(day + timedelta(hours=23), "sad song", pid))
    return evs


def identical_stream(pid="p1"):
    before, after = [], []
    for d in range(DAYS):
        before += day_pattern(CUTOFF - timedelta(days=DAYS - d), pid=pid)
        after += day_pattern(CUTOFF + timedelta(days=d), pid=pid)
    return before + after


@pytest.fixture
def config():
    return AnalysisConfig()


# --- a 49-person cohort with the published demographic splits -----------------
# cells: both DEP and ANX, ANX only, DEP only, neither; per cell the number of
# female, U.S. citizen and first/second-year participants
TABLE1_CELLS = {
    "both": dict(n=18, female=15, citizen=14, lower=12, dep=True, anx=True),
    "anx": dict(n=4, female=2, citizen=3, lower=3, dep=False, anx=True),
    "dep": dict(n=2, female=2, citizen=1, lower=1, dep=True, anx=False),
    "none": dict(n=25, female=11, citizen=21, lower=15, dep=False, anx=False),
}


def survey_pair(n_items, delta):
    """Two rounds of item responses whose totals differ by ``delta``."""
    base = [1] * n_items
    r2 = list(base)
    step = 1 if delta > 0 else -1
    left = abs(delta)
    for i in range(n_items):
        while left and 0 <= r2[i] + step <= 3:
            r2[i] += step
            left -= 1
    assert left == 0
    return base, r2


def make_participant(pid, *, gender="female", citizen=True, lower=True, d_phq=0, d_gad=0, tz=0, events=None):
    from onlineshift.cohort import Participant, SurveyRound

    g1, g2 = survey_pair(7, d_gad)
    p1, p2 = survey_pair(9, d_phq)
    return Participant(
        id=pid,
        gender=gender,
        us_citizen=citizen,
        class_year="lower" if lower else "upper",
        tz_offset=tz,
        surveys={"r1": SurveyRound(tuple(g1), tuple(p1)), "r2": SurveyRound(tuple(g2), tuple(p2))},
        events=events,
    )


def table1_cohort():
    people = []
    nonbinary_left = 2
    for cell, spec in TABLE1_CELLS.items():
        for i in range(spec["n"]):
            female = i < spec["female"]
            gender = "female"
            if not female:
                gender = "nonbinary" if nonbinary_left and cell == "none" else "male"
                if gender == "nonbinary":
                    nonbinary_left -= 1
            people.append(
                make_participant(
                    f"{cell}{i:02d}",
                    gender=gender,
                    citizen=i < spec["citizen"],
                    lower=(spec["n"] - 1 - i) < spec["lower"],
                    d_phq=6 if spec["dep"] else 1,
                    d_gad=5 if spec["anx"] else -2,
                )
            )
    return people
