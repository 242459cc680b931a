"""LIWC-style dictionary counting and content-category tagging.

Dictionary files use the ``.dic`` layout: a header of ``id name`` lines
between two ``%`` lines, then ``pattern id [id ...]`` lines. A pattern ending
in ``*`` matches any token starting with the stem.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence
from urllib.parse import parse_qs, urlsplit

from .ingest import ActivityEvent

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W\d_]+")

UNRESOLVED = "unresolved"


class LexiconError(ValueError):
    pass


class ProviderError(RuntimeError):
    """A category provider could not reach its backing service."""


def tokenize(text: str) -> list[str]:
    return _split_tokens(text.lower())


def _split_tokens(lowered: str) -> list[str]:
    # tokens never span whitespace, and an all-letter word is exactly one token
    words = lowered.split()
    odd = [i for i, ok in enumerate(map(str.isalpha, words)) if not ok]
    if not odd:
        return words
    out: list[str] = []
    prev = 0
    for i in odd:
        out += words[prev:i]
        out += _TOKEN_RE.findall(words[i])
        prev = i + 1
    out += words[prev:]
    return out


@dataclass
class TokenStream:
    """Tokens of several texts in order, with the word ``sep`` between consecutive texts."""

    tokens: list[str]
    sep: str
    n_texts: int

    @classmethod
    def of(cls, texts: Iterable[str], avoid: frozenset[str] = frozenset()) -> "TokenStream":
        lowered = [t.lower() for t in texts]
        gaps = max(len(lowered) - 1, 0)
        sep = "eventsep"
        while True:
            if sep not in avoid:
                tokens = _split_tokens(f" {sep} ".join(lowered))
                # any extra occurrence means some text already contains the word
                if tokens.count(sep) == gaps:
                    return cls(tokens, sep, len(lowered))
            sep += "x"

    @property
    def n_tokens(self) -> int:
        return len(self.tokens) - max(self.n_texts - 1, 0)


@dataclass
class Lexicon:
    categories: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for name, patterns in self.categories.items():
            if not patterns:
                raise LexiconError(f"category {name!r} is empty")
            for p in patterns:
                _check_pattern(p)

    @property
    def names(self) -> list[str]:
        return list(self.categories)


def _check_pattern(pattern: str) -> None:
    if not pattern or pattern == "*":
        raise LexiconError("empty pattern")
    if "*" in pattern[:-1]:
        raise LexiconError(f"interior wildcard in {pattern!r}")


def load_lexicon(document: str) -> Lexicon:
    lines = [ln.strip() for ln in document.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise LexiconError("no categories")
    if lines[0] != "%":
        raise LexiconError("missing '%' header delimiter")
    try:
        close = lines.index("%", 1)
    except ValueError:
        raise LexiconError("unterminated '%' header block") from None

    names: dict[str, str] = {}
    for ln in lines[1:close]:
        parts = ln.split(None, 1)
        if len(parts) != 2:
            raise LexiconError(f"bad header line {ln!r}")
        cid, name = parts
        if cid in names:
            raise LexiconError(f"duplicate category id {cid}")
        if name in names.values():
            raise LexiconError(f"duplicate category name {name!r}")
        names[cid] = name
    if not names:
        raise LexiconError("no categories")

    members: dict[str, list[str]] = {name: [] for name in names.values()}
    for ln in lines[close + 1 :]:
        parts = ln.split()
        pattern, ids = parts[0].lower(), parts[1:]
        _check_pattern(pattern)
        if not ids:
            raise LexiconError(f"pattern {pattern!r} has no category")
        for cid in ids:
            if cid not in names:
                raise LexiconError(f"pattern {pattern!r} refers to unknown category {cid}")
            members[names[cid]].append(pattern)
    for name, pats in members.items():
        if not pats:
            raise LexiconError(f"category {name!r} is empty")
    return Lexicon({name: tuple(p) for name, p in members.items()})


def load_lexicon_file(path: str | Path) -> Lexicon:
    return load_lexicon(Path(path).read_text(encoding="utf-8"))


def bundled_lexicon() -> Lexicon:
    """Small non-clinical demonstration dictionary covering the four dimensions."""
    text = resources.files("onlineshift.data").joinpath("demo_lexicon.dic").read_text(encoding="utf-8")
    return load_lexicon(text)


@dataclass
class MatchCounts:
    counts: dict[str, int]
    tokens: int

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        keys = self.counts.keys() | other.counts.keys()
        return MatchCounts(
            {k: self.counts.get(k, 0) + other.counts.get(k, 0) for k in keys},
            self.tokens + other.tokens,
        )


class LexiconMatcher:
    """Compiled form of a lexicon with a memo of token verdicts; reuse one per lexicon."""

    def __init__(self, lexicon: Lexicon):
        self.lexicon = lexicon
        self._literal: dict[str, set[str]] = {}
        self._stems: dict[str, set[str]] = {}
        for name, patterns in lexicon.categories.items():
            for p in patterns:
                if p.endswith("*"):
                    self._stems.setdefault(p[:-1], set()).add(name)
                else:
                    self._literal.setdefault(p, set()).add(name)
        self._max_stem = max((len(s) for s in self._stems), default=0)
        self._memo: dict[str, tuple[str, ...]] = {}

    def match(self, token: str) -> tuple[str, ...]:
        hit = self._memo.get(token)
        if hit is not None:
            return hit
        cats = set(self._literal.get(token, ()))
        for k in range(1, min(len(token), self._max_stem) + 1):
            stem_cats = self._stems.get(token[:k])
            if stem_cats:
                cats |= stem_cats
        hit = tuple(sorted(cats))
        self._memo[token] = hit
        return hit

    def count(self, corpus: Iterable[str] | TokenStream) -> MatchCounts:
        stream = corpus if isinstance(corpus, TokenStream) else TokenStream.of(corpus)
        tally = Counter(stream.tokens)
        tally.pop(stream.sep, None)
        counts = dict.fromkeys(self.lexicon.categories, 0)
        for tok, c in tally.items():
            for cat in self.match(tok):
                counts[cat] += c
        return MatchCounts(counts, stream.n_tokens)


def count_matches(corpus: Iterable[str], lexicon: Lexicon) -> MatchCounts:
    """Per-category match counts plus the total token count.

    A token counts once for every category it matches, whether through a
    literal entry or a wildcard stem.
    """
    return LexiconMatcher(lexicon).count(corpus)


# --------------------------------------------------------------------------
# content categories


class CategoryProvider(Protocol):
    def lookup(self, event: ActivityEvent) -> frozenset[str]: ...


_HOST_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*://(?:[^@/?#]*@)?(\[[^\]]*\]|[^:/?#]*)")


def _host(url: str | None) -> str:
    if not url:
        return ""
    m = _HOST_RE.match(url)
    if m is None:
        return ""
    return m.group(1).lower().rstrip(".")


def _read_list(path: Path) -> set[str]:
    entries = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            entries.add(line)
    return entries


@dataclass
class OfflineCategoryProvider:
    """Tags events by URL domain and by keyword/phrase occurrence in the text."""

    domains: dict[str, set[str]] = field(default_factory=dict)
    keywords: dict[str, set[str]] = field(default_factory=dict)

    def __post_init__(self):
        self._host_memo: dict[str, frozenset[str]] = {}
        # first token -> [(remaining tokens, categories)], longest phrases first
        self._phrases: dict[str, list[tuple[tuple[str, ...], frozenset[str]]]] = {}
        cats_of: dict[tuple[str, ...], set[str]] = {}
        for cat, words in self.keywords.items():
            for w in words:
                toks = tuple(tokenize(w))
                if toks:
                    cats_of.setdefault(toks, set()).add(cat)
        self._keyword_words = frozenset(w for t in cats_of for w in t)
        for toks in sorted(cats_of, key=lambda t: (-len(t), t)):
            self._phrases.setdefault(toks[0], []).append((toks[1:], frozenset(cats_of[toks])))
        # first tokens that only ever start one-word keywords need no look-ahead
        self._single = {w: entries[0][1] for w, entries in self._phrases.items() if len(entries) == 1 and not entries[0][0]}

    @classmethod
    def from_directory(cls, path: str | Path) -> "OfflineCategoryProvider":
        """Load ``<category>_domains.txt`` and ``<category>_keywords.txt`` files."""
        path = Path(path)
        domains: dict[str, set[str]] = {}
        keywords: dict[str, set[str]] = {}
        for f in sorted(path.glob("*_domains.txt")):
            domains[f.name[: -len("_domains.txt")]] = _read_list(f)
        for f in sorted(path.glob("*_keywords.txt")):
            keywords[f.name[: -len("_keywords.txt")]] = _read_list(f)
        return cls(domains, keywords)

    @classmethod
    def bundled(cls) -> "OfflineCategoryProvider":
        with resources.as_file(resources.files("onlineshift.data").joinpath("categories")) as p:
            return cls.from_directory(p)

    def _domain_tags(self, host: str) -> frozenset[str]:
        hit = self._host_memo.get(host)
        if hit is not None:
            return hit
        tags = set()
        labels = host.split(".")
        suffixes = {".".join(labels[i:]) for i in range(len(labels))}
        for cat, doms in self.domains.items():
            if suffixes & doms:
                tags.add(cat)
        hit = frozenset(tags)
        self._host_memo[host] = hit
        return hit

    def _phrase_tags(self, tokens: list[str], j: int, end: int) -> set[str]:
        tags: set[str] = set()
        for rest, cats in self._phrases[tokens[j]]:
            k = j + 1 + len(rest)
            if k <= end and tuple(tokens[j + 1 : k]) == rest:
                tags |= cats
        return tags

    def _text_tags(self, text: str) -> set[str]:
        tokens = tokenize(text)
        tags: set[str] = set()
        for j, tok in enumerate(tokens):
            if tok in self._phrases:
                tags |= self._phrase_tags(tokens, j, len(tokens))
        return tags

    def lookup(self, event: ActivityEvent) -> frozenset[str]:
        tags: set[str] = set()
        host = _host(event.url)
        if host:
            tags |= self._domain_tags(host)
        if event.text and self._phrases:
            tags |= self._text_tags(event.text)
        return frozenset(tags)

    def _hits(self, events: Sequence[ActivityEvent], stream: TokenStream | None = None) -> dict[str, set[int]]:
        """Indices of the events carrying each category, from one pass over all texts and URLs."""
        hits: dict[str, set[int]] = {}
        if self._phrases:
            if stream is None or stream.sep in self._keyword_words:
                stream = TokenStream.of([ev.text for ev in events], avoid=self._keyword_words)
            tokens, sep = stream.tokens, stream.sep
            keys = self._phrases.keys() | {sep}
            marks = [j for j, tok in enumerate(tokens) if tok in keys]
            single = self._single
            i = 0
            bounds = [j for j in marks if tokens[j] == sep] + [len(tokens)]
            for j in marks:
                tok = tokens[j]
                if tok == sep:
                    i += 1
                    continue
                cats = single.get(tok)
                if cats is None:
                    cats = self._phrase_tags(tokens, j, bounds[i])
                for cat in cats:
                    if cat in hits:
                        hits[cat].add(i)
                    else:
                        hits[cat] = {i}
        if self.domains:
            urls = [ev.url or "" for ev in events]
            # the host never extends past a "?" unless it is a bracketed literal
            raw = [u.partition("?")[0] for u in urls]
            keys = set(raw)
            if any("[" in k for k in keys):
                raw = urls
                keys = set(raw)
            hot = {}
            for k in keys:
                host = _host(k)
                if host:
                    cats = self._domain_tags(host)
                    if cats:
                        hot[k] = cats
            if hot:
                for i in [i for i, h in enumerate(raw) if h in hot]:
                    for cat in hot[raw[i]]:
                        hits.setdefault(cat, set()).add(i)
        return hits

    def lookup_many(self, events: Sequence[ActivityEvent]) -> list[frozenset[str]]:
        """``[lookup(ev) for ev in events]`` computed in bulk."""
        tags: list[set[str]] = [set() for _ in events]
        for cat, idx in self._hits(events).items():
            for i in idx:
                tags[i].add(cat)
        return [frozenset(t) for t in tags]

    def category_counts(self, events: Sequence[ActivityEvent], stream: TokenStream | None = None) -> dict[str, int]:
        """Number of events carrying each category (an event counts once per category).

        ``stream`` may carry the already tokenized event texts.
        """
        return {cat: len(idx) for cat, idx in self._hits(events, stream).items()}


def categorize_event(event: ActivityEvent, provider: CategoryProvider) -> frozenset[str]:
    """Provider verdict for one event; transport failures become ``{"unresolved"}``."""
    try:
        return frozenset(provider.lookup(event))
    except ProviderError as exc:
        log.warning("category lookup failed for %s at %s: %s", event.pid, event.ts, exc)
        return frozenset({UNRESOLVED})


# --------------------------------------------------------------------------
# video metadata

_VIDEO_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")
_YOUTUBE_HOSTS = {"youtube.com", "www.youtube.com", "m.youtube.com", "music.youtube.com"}


def video_id_from_url(url: str | None) -> str | None:
    """Watch id from ``youtube.com/watch?v=``, ``youtu.be/``, ``/shorts/`` and ``/embed/`` URLs."""
    host = _host(url)
    if not host:
        return None
    parts = urlsplit(url)
    candidate = None
    if host in ("youtu.be", "www.youtu.be"):
        candidate = parts.path.lstrip("/").split("/", 1)[0]
    elif host in _YOUTUBE_HOSTS:
        if parts.path == "/watch":
            values = parse_qs(parts.query).get("v")
            candidate = values[0] if values else None
        else:
            segs = parts.path.strip("/").split("/")
            if len(segs) >= 2 and segs[0] in ("shorts", "embed", "live", "v"):
                candidate = segs[1]
    if candidate and _VIDEO_ID_RE.match(candidate):
        return candidate
    return None


@dataclass
class RemoteProviderConfig:
    endpoint: str  # e.g. "https://host/videos/{id}"
    cache_path: str | Path
    api_key_env: str = "METADATA_API_KEY"
    timeout: float = 10.0
    min_interval: float = 0.0  # seconds between network requests


class _NotFound(Exception):
    pass


class VideoMetadataClient:
    """HTTP JSON lookups of video id -> {title, category} with an NDJSON disk cache."""

    def __init__(self, config: RemoteProviderConfig):
        self.config = config
        self.network_calls = 0
        self._pace_lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}
        self._last_call = 0.0
        self._cache: dict[str, dict] = {}
        self._missing: set[str] = set()
        path = Path(config.cache_path)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._cache[rec["id"]] = {"title": rec["title"], "category": rec["category"]}

    def _request(self, video_id: str) -> dict:
        key = os.environ.get(self.config.api_key_env, "")
        url = self.config.endpoint.format(id=video_id)
        req = urllib.request.Request(url, headers={"Authorization": f"Bearer {key}"} if key else {})
        with self._pace_lock:
            if self.config.min_interval:
                wait = self._last_call + self.config.min_interval - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
            self._last_call = time.monotonic()
            self.network_calls += 1
        try:
            with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise _NotFound(video_id) from None
            raise ProviderError(f"HTTP {exc.code} for {video_id}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise ProviderError(str(exc)) from None
        try:
            data = json.loads(body)
            return {"title": str(data["title"]), "category": str(data["category"])}
        except (ValueError, KeyError, TypeError):
            raise ValueError(f"malformed metadata response for {video_id}") from None

    def _lock_for(self, video_id: str) -> threading.Lock:
        with self._write_lock:
            return self._key_locks.setdefault(video_id, threading.Lock())

    def get(self, video_id: str) -> dict | None:
        """Cached or fetched record; ``None`` when the id is unknown.

        Readers never wait on each other; concurrent misses on one id make a
        single request. Raises ProviderError on transport or auth failures
        and ValueError on malformed responses.
        """
        hit = self._cache.get(video_id)
        if hit is not None or video_id in self._missing:
            return hit
        with self._lock_for(video_id):
            if video_id in self._cache or video_id in self._missing:
                return self._cache.get(video_id)
            try:
                record = self._request(video_id)
            except _NotFound:
                self._missing.add(video_id)
                return None
            with self._write_lock:
                with open(self.config.cache_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"id": video_id, **record}, ensure_ascii=False) + "\n")
                self._cache[video_id] = record
            return record

    def prefetch(self, video_ids: Iterable[str], threads: int = 1) -> None:
        """Warm the cache for ``video_ids``; failures are left for ``get`` to report."""
        todo = sorted({v for v in video_ids if v not in self._cache and v not in self._missing})
        if not todo:
            return

        def one(vid):
            try:
                self.get(vid)
            except (ProviderError, ValueError):
                pass

        if threads <= 1:
            for vid in todo:
                one(vid)
            return
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, todo))


def fetch_video_metadata(video_id: str, client: VideoMetadataClient) -> dict | None:
    try:
        return client.get(video_id)
    except ProviderError as exc:
        log.warning("metadata fetch failed for %s: %s", video_id, exc)
    except ValueError as exc:
        log.warning("%s", exc)
    return None


_CATEGORY_ALIASES = {
    "news": "news",
    "news & politics": "news",
    "news and politics": "news",
    "adult": "adult",
}


class RemoteCategoryProvider:
    """Video categories from the metadata service; other events go to ``fallback``."""

    def __init__(self, client: VideoMetadataClient, fallback: CategoryProvider | None = None):
        self.client = client
        self.fallback = fallback

    def prefetch(self, events: Iterable[ActivityEvent], threads: int = 1) -> None:
        self.client.prefetch(
            (v for ev in events if ev.kind == "video_watch" and (v := video_id_from_url(ev.url))), threads
        )

    def lookup(self, event: ActivityEvent) -> frozenset[str]:
        vid = video_id_from_url(event.url) if event.kind == "video_watch" else None
        if vid is not None:
            try:
                record = self.client.get(vid)
            except ValueError:
                record = None
            if record is not None:
                tag = _CATEGORY_ALIASES.get(record["category"].strip().lower())
                return frozenset({tag}) if tag else frozenset()
        if self.fallback is not None:
            return self.fallback.lookup(event)
        return frozenset()
