"""Takeout "My Activity" parsing, PII scrubbing and the canonical NDJSON event format."""

from __future__ import annotations

import gc
import json
import re
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

PLATFORM_KINDS = {
    "query": "search",
    "url_visit": "search",
    "video_watch": "youtube",
    "youtube_search": "youtube",
}

PII_CLASSES = ("email", "phone", "ssn", "credit_card")
PII_TOKENS = {
    "email": "[EMAIL]",
    "phone": "[PHONE]",
    "ssn": "[SSN]",
    "credit_card": "[CC]",
}

SEARCH_PREFIX = "Searched for "
VISIT_PREFIX = "Visited "
WATCH_PREFIX = "Watched "


class IngestError(ValueError):
    """Raised for documents that cannot be parsed at all."""


class ParseError(IngestError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class EventSchemaError(IngestError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(slots=True)
class ActivityEvent:
    pid: str
    ts: datetime
    platform: str
    kind: str
    text: str = ""
    url: str | None = None

    def __post_init__(self):
        if PLATFORM_KINDS.get(self.kind) != self.platform or self.ts.tzinfo is None:
            self._reject()

    def _reject(self):
        expected = PLATFORM_KINDS.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if expected != self.platform:
            raise ValueError(f"kind {self.kind!r} is not a {self.platform!r} event")
        raise ValueError("event timestamps must be timezone-aware")


@dataclass
class RedactionReport:
    counts: Counter = field(default_factory=Counter)

    def __getitem__(self, cls: str) -> int:
        return self.counts[cls]

    def update(self, other: "RedactionReport") -> None:
        self.counts.update(other.counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> dict[str, int]:
        return {cls: self.counts[cls] for cls in PII_CLASSES}


@dataclass
class ItemError:
    index: int
    message: str


@dataclass
class ParseResult:
    events: list[ActivityEvent]
    skipped: int = 0
    errors: list[ItemError] = field(default_factory=list)
    redactions: RedactionReport = field(default_factory=RedactionReport)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)


# --------------------------------------------------------------------------
# PII scrubbing

_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}")
_PHONE_RE = re.compile(
    r"(?<![\d-])(?:\+?1[ .-]?)?(?:\(\d{3}\)[ .-]?|\d{3}[ .-]?)\d{3}[ .-]?\d{4}(?![\d-])"
)
_SSN_RE = re.compile(r"(?<![\d-])\d{3}-\d{2}-\d{4}(?![\d-])")
_CARD_RE = re.compile(r"(?<![\d-])\d(?:[ -]?\d){12,18}(?![\d-])")
# phone, SSN and card patterns all contain seven digits with short separators
_DIGITS_RE = re.compile(r"\d(?:\D{0,3}\d){6}")


def luhn_valid(digits: str) -> bool:
    total = 0
    for i, ch in enumerate(reversed(digits)):
        d = ord(ch) - 48
        if i % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


def _card_ok(match: str) -> bool:
    digits = match.replace(" ", "").replace("-", "")
    return 13 <= len(digits) <= 19 and luhn_valid(digits)


def find_pii(text: str) -> list[tuple[int, int, str]]:
    """Return non-overlapping (start, end, class) spans, longest match first at each position."""
    if "@" not in text and _DIGITS_RE.search(text) is None:
        return []
    candidates = []
    for cls, regex in (("email", _EMAIL_RE), ("ssn", _SSN_RE), ("phone", _PHONE_RE), ("credit_card", _CARD_RE)):
        for m in regex.finditer(text):
            if cls == "credit_card" and not _card_ok(m.group()):
                continue
            candidates.append((m.start(), -(m.end() - m.start()), cls, m.end()))
    candidates.sort()
    spans = []
    pos = 0
    for start, _, cls, end in candidates:
        if start >= pos:
            spans.append((start, end, cls))
            pos = end
    return spans


def _pii_candidates(strings: list[str], chunk: int = 64) -> set[int]:
    """Indices of strings that may contain PII: the same pre-check find_pii applies."""
    search = _DIGITS_RE.search
    found: set[int] = set()
    for lo in range(0, len(strings), chunk):
        part = strings[lo : lo + chunk]
        # one scan over the joined chunk clears most chunks; a hit may span a separator, so recheck singly
        blob = "\x00".join(part)
        if "@" in blob or search(blob):
            found.update(lo + i for i, x in enumerate(part) if "@" in x or search(x))
    return found


def scrub_pii(text: str) -> tuple[str, RedactionReport]:
    """Replace emails, phone numbers, SSNs and Luhn-valid card numbers with class tokens."""
    report = RedactionReport()
    return _scrub_into(text, report), report


def _scrub_into(text: str, report: RedactionReport) -> str:
    spans = find_pii(text)
    if not spans:
        return text
    out = []
    pos = 0
    for start, end, cls in spans:
        out.append(text[pos:start])
        out.append(PII_TOKENS[cls])
        report.counts[cls] += 1
        pos = end
    out.append(text[pos:])
    return "".join(out)


# --------------------------------------------------------------------------
# Takeout parsing

_FRACTION_RE = re.compile(r"\.(\d+)")


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 instant, truncating to whole seconds, into aware UTC."""
    # Takeout's usual shape: 2020-02-01T13:45:12.345Z
    if len(value) >= 20 and value[-1] == "Z" and value[10] == "T" and (len(value) == 20 or value[19] == "."):
        try:
            return datetime.fromisoformat(value[:19] + "+00:00")
        except ValueError:
            pass
    s = value.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    if "." in s:
        s = _FRACTION_RE.sub("", s, count=1)
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp without offset: {value!r}")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _load_items(document: str | bytes) -> list:
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        items = json.loads(document)
    except json.JSONDecodeError as exc:
        offset = len(document[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed activity document: {exc.msg}", offset) from None
    if not isinstance(items, list):
        raise ParseError("activity document must be a JSON array", 0)
    return items


@contextmanager
def gc_paused():
    # bulk allocation of many small objects makes the cyclic GC rescan needlessly
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _parse(document, pid: str, rules) -> ParseResult:
    with gc_paused():
        return _parse_items(_load_items(document), pid, rules)


_ZULU_TAIL_RE = re.compile(r"(?:\.\d+)?Z")


def _parse_many(values: list) -> list:
    """Timestamps for ``values``; unparseable entries come back as the error message."""
    # fast path for the usual Takeout shape, e.g. 2020-02-01T13:45:12.345Z
    try:
        tails = {v[19:] for v in values}
        if all(_ZULU_TAIL_RE.fullmatch(t) for t in tails):
            fromiso = datetime.fromisoformat
            return [fromiso(v[:19] + "+00:00") for v in values]
    except (TypeError, ValueError):
        pass
    out = []
    for v in values:
        try:
            out.append(parse_timestamp(v))
        except (TypeError, ValueError) as exc:
            out.append(f"bad time: {exc}")
    return out


def _trusted_event(pid, ts, platform, kind, text, url, _new=object.__new__):
    # skips __post_init__: callers pass a known platform/kind pair and an aware UTC timestamp
    ev = _new(ActivityEvent)
    ev.pid = pid
    ev.ts = ts
    ev.platform = platform
    ev.kind = kind
    ev.text = text
    ev.url = url
    return ev


def _parse_items(items: list, pid: str, rules) -> ParseResult:
    result = ParseResult(events=[])
    errors = result.errors
    kept = []
    for index, item in enumerate(items):
        if type(item) is not dict and not isinstance(item, dict):
            errors.append(ItemError(index, "item is not an object"))
            continue
        title = item.get("title")
        if type(title) is not str:
            result.skipped += 1
            continue
        for rule in rules:
            if title.startswith(rule[0]):
                break
        else:
            result.skipped += 1
            continue
        raw_time = item.get("time")
        if raw_time is None:
            errors.append(ItemError(index, "missing field time"))
            continue
        kept.append((rule, title, raw_time, item.get("titleUrl"), index))

    stamps = _parse_many([k[2] for k in kept])
    if any(type(ts) is str for ts in stamps):
        for k, ts in zip(kept, stamps):
            if type(ts) is str:
                errors.append(ItemError(k[4], ts))
        errors.sort(key=lambda e: e.index)
        good = [j for j, ts in enumerate(stamps) if type(ts) is not str]
        kept = [kept[j] for j in good]
        stamps = [stamps[j] for j in good]

    texts = [title[len(rule[0]):] if rule[3] else "" for rule, title, *_ in kept]
    urls = [url if url is None or type(url) is str else str(url) for _, _, _, url, _ in kept]
    redactions = result.redactions
    for i in _pii_candidates(texts):
        texts[i] = _scrub_into(texts[i], redactions)
    for i in _pii_candidates([u or "" for u in urls]):
        urls[i] = _scrub_into(urls[i], redactions)
    result.events = [
        _trusted_event(pid, ts, k[0][1], k[0][2], text, url) for k, ts, text, url in zip(kept, stamps, texts, urls)
    ]
    return result


_SEARCH_RULES = (
    (SEARCH_PREFIX, "search", "query", True),
    (VISIT_PREFIX, "search", "url_visit", False),
)
_YOUTUBE_RULES = (
    (WATCH_PREFIX, "youtube", "video_watch", True),
    (SEARCH_PREFIX, "youtube", "youtube_search", True),
)


def parse_takeout_search(document: str | bytes, pid: str = "") -> ParseResult:
    """Parse a Google Search "My Activity" JSON array.

    "Searched for X" items become ``query`` events with text X, "Visited X"
    items become ``url_visit`` events carrying ``titleUrl``. Anything else is
    skipped and tallied in ``ParseResult.skipped``; items without a ``time``
    are reported in ``ParseResult.errors`` and parsing continues.
    """
    return _parse(document, pid, _SEARCH_RULES)


def parse_takeout_youtube(document: str | bytes, pid: str = "") -> ParseResult:
    """Parse a YouTube "My Activity" JSON array (watches and in-app searches)."""
    return _parse(document, pid, _YOUTUBE_RULES)


# --------------------------------------------------------------------------
# canonical NDJSON

_FIELDS = ("pid", "ts", "platform", "kind", "text", "url")


def event_to_json(ev: ActivityEvent) -> str:
    return json.dumps(
        {
            "pid": ev.pid,
            "ts": format_timestamp(ev.ts),
            "platform": ev.platform,
            "kind": ev.kind,
            "text": ev.text,
            "url": ev.url,
        },
        ensure_ascii=False,
        separators=(",", ":"),
    )


def sort_events(events: Iterable[ActivityEvent]) -> list[ActivityEvent]:
    return sorted(events, key=lambda ev: (ev.pid, ev.ts))


def write_events(path: str | Path, events: Iterable[ActivityEvent]) -> int:
    ordered = sort_events(events)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in ordered:
            fh.write(event_to_json(ev))
            fh.write("\n")
    return len(ordered)


def event_from_record(record: dict, line: int = 0) -> ActivityEvent:
    if not isinstance(record, dict):
        raise EventSchemaError(line, "expected a JSON object")
    for name in _FIELDS:
        if name not in record:
            raise EventSchemaError(line, f"missing field {name}")
    url = record["url"]
    if not isinstance(record["pid"], str) or not isinstance(record["text"], str):
        raise EventSchemaError(line, "pid and text must be strings")
    if url is not None and not isinstance(url, str):
        raise EventSchemaError(line, "url must be a string or null")
    try:
        ts = parse_timestamp(record["ts"])
        return ActivityEvent(record["pid"], ts, record["platform"], record["kind"], record["text"], url)
    except (TypeError, ValueError) as exc:
        raise EventSchemaError(line, str(exc)) from None


def iter_events(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise EventSchemaError(lineno, f"invalid JSON: {exc.msg}") from None
            yield event_from_record(record, lineno)


def read_events(path: str | Path) -> list[ActivityEvent]:
    return list(iter_events(path))
