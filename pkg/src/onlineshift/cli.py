"""Command-line entry point: ingest, features, analyze, boxplot, simulate.

Exit codes: 0 success, 1 data error, 2 usage error. Every command writes a
``<output>.manifest.json`` (or ``manifest.json`` inside an output directory)
recording the config hash, input and output digests, tool version and run
timestamps. Set SOURCE_DATE_EPOCH to pin the timestamps.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, cohort, features, ingest, lexicon, synth
from .timeline import AnalysisConfig

log = logging.getLogger("onlineshift")

# config keys that select resources rather than analysis parameters
RESOURCE_KEYS = ("lexicon", "categories", "remote")


class UsageError(Exception):
    """Bad flags or an unusable config (exit 2)."""


class DataError(Exception):
    """Inputs that cannot be processed (exit 1)."""


# --------------------------------------------------------------------------
# run manifest


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    pinned = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(pinned) if pinned and pinned.isdigit() else time.time()
    return datetime.fromtimestamp(t, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class RunManifest:
    command: str
    config_sha256: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    started: str = field(default_factory=_now)
    finished: str = ""

    def add_inputs(self, paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def write(self, path: str | Path, outputs) -> Path:
        path = Path(path)
        # paths are keyed relative to the manifest so a moved directory still verifies
        self.inputs = {_relative(p, path.parent): digest for p, digest in self.inputs.items()}
        self.outputs = {_relative(p, path.parent): sha256_file(p) for p in outputs}
        self.finished = _now()
        doc = {
            "tool": "onlineshift",
            "version": self.version,
            "command": self.command,
            "config_sha256": self.config_sha256,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": self.finished,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _relative(p, base: Path) -> str:
    return Path(os.path.relpath(Path(p).resolve(), base.resolve())).as_posix()


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".manifest.json")


# --------------------------------------------------------------------------
# config and resources


@dataclass
class Settings:
    raw: dict
    analysis: AnalysisConfig
    base_dir: Path

    def resource_path(self, key: str) -> Path | None:
        value = self.raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


def load_settings(path: str | None) -> Settings:
    if path is None:
        return Settings({}, AnalysisConfig(), Path.cwd())
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a JSON object")
    try:
        analysis = AnalysisConfig.from_dict({k: v for k, v in raw.items() if k not in RESOURCE_KEYS})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None
    return Settings(raw, analysis, p.parent)


def build_matcher(settings: Settings) -> lexicon.LexiconMatcher:
    path = settings.resource_path("lexicon")
    lex = lexicon.load_lexicon_file(path) if path else lexicon.bundled_lexicon()
    return lexicon.LexiconMatcher(lex)


def build_provider(settings: Settings):
    path = settings.resource_path("categories")
    offline = lexicon.OfflineCategoryProvider.from_directory(path) if path else lexicon.OfflineCategoryProvider.bundled()
    remote = settings.raw.get("remote")
    if not remote:
        return offline
    cache = Path(remote.get("cache_path", "metadata_cache.ndjson"))
    if not cache.is_absolute():
        cache = settings.base_dir / cache
    client = lexicon.VideoMetadataClient(
        lexicon.RemoteProviderConfig(
            endpoint=remote["endpoint"],
            cache_path=cache,
            timeout=float(remote.get("timeout", 10.0)),
            min_interval=float(remote.get("min_interval", 0.0)),
        )
    )
    return lexicon.RemoteCategoryProvider(client, fallback=offline)


# --------------------------------------------------------------------------
# ingest


_TZ_RE = re.compile(r"([+-])(\d{2}):(\d{2})")


def parse_tz(value: str) -> int:
    """``+HH:MM`` / ``-HH:MM`` as minutes east of UTC."""
    m = _TZ_RE.fullmatch(value)
    if not m or int(m.group(3)) >= 60 or int(m.group(2)) > 14:
        raise argparse.ArgumentTypeError(f"expected ±HH:MM, got {value!r}")
    minutes = int(m.group(2)) * 60 + int(m.group(3))
    return -minutes if m.group(1) == "-" else minutes


def find_activity_files(takeout: Path) -> list[tuple[Path, str]]:
    """(path, "search"|"youtube") for each activity JSON in a Takeout tree."""
    found = []
    for path in sorted(takeout.rglob("*.json")):
        parent = path.parent.name.lower()
        if "youtube" in parent:
            found.append((path, "youtube"))
        elif "search" in parent:
            found.append((path, "search"))
    return found


def cmd_ingest(args, settings: Settings) -> int:
    takeout = Path(args.takeout)
    if not takeout.is_dir():
        raise UsageError(f"--takeout is not a directory: {takeout}")
    files = find_activity_files(takeout)
    if not files:
        raise DataError(f"no Search or YouTube activity JSON under {takeout}")
    manifest = RunManifest("ingest", config_digest({"pid": args.pid, "tz_offset": args.tz}))
    manifest.add_inputs(p for p, _ in files)

    events: list[ingest.ActivityEvent] = []
    redactions = ingest.RedactionReport()
    for path, platform in files:
        parse = ingest.parse_takeout_youtube if platform == "youtube" else ingest.parse_takeout_search
        try:
            result = parse(path.read_bytes(), args.pid)
        except ingest.ParseError as exc:
            raise DataError(f"{path}: {exc}") from None
        for err in result.errors:
            log.warning("%s: item %d: %s", path, err.index, err.message)
        if result.skipped:
            log.info("%s: skipped %d items of other kinds", path, result.skipped)
        events += result.events
        redactions.update(result.redactions)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = ingest.write_events(out, events)
    manifest.write(_sidecar(out), [out])
    if not args.quiet:
        print(f"{n} events written to {out} (participant {args.pid}, tz {args.tz:+d} min)")
        print("redactions: " + ", ".join(f"{k}={v}" for k, v in redactions.as_dict().items()))
    return 0


# --------------------------------------------------------------------------
# features


def _group_by_pid(path: Path) -> dict[str, list[ingest.ActivityEvent]]:
    groups: dict[str, list[ingest.ActivityEvent]] = {}
    try:
        for ev in ingest.iter_events(path):
            groups.setdefault(ev.pid, []).append(ev)
    except ingest.EventSchemaError as exc:
        raise DataError(f"{path}: {exc}") from None
    return groups


def cmd_features(args, settings: Settings) -> int:
    if args.events is None and args.cohort is None:
        raise UsageError("features needs --events or --cohort")
    offsets: dict[str, int] = {}
    paths: list[Path] = []
    if args.cohort:
        people = _load_cohort(args.cohort)
        offsets = {p.id: p.tz_offset for p in people}
        if args.events is None:
            paths = [Path(p.events) for p in people if p.events]
    if args.events is not None:
        paths = [Path(p) for p in args.events]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError(f"event files not found: {', '.join(missing)}")

    matcher = build_matcher(settings)
    provider = build_provider(settings)
    manifest = RunManifest("features", config_digest(settings.raw))
    manifest.add_inputs(paths)

    deltas: dict[str, features.FeatureDelta] = {}
    for path in paths:
        # one file at a time keeps memory bounded by the largest participant
        for pid, events in _group_by_pid(path).items():
            if pid in deltas:
                raise DataError(f"participant {pid} appears in more than one event file")
            if isinstance(provider, lexicon.RemoteCategoryProvider):
                provider.prefetch(events, args.threads)
            config = settings.analysis.for_participant(offsets.get(pid, settings.analysis.tz_offset))
            delta = features.extract_feature_delta(events, config, matcher, provider)
            for column, reason in sorted(delta.flags.items()):
                if reason != "uniform_fallback":
                    log.warning("participant %s: %s is %s", pid, column, reason.replace("_", " "))
            deltas[pid] = delta

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    features.write_features_csv(out, deltas)
    manifest.write(_sidecar(out), [out])
    if not args.quiet:
        print(f"{len(deltas)} participants written to {out}")
    return 0


# --------------------------------------------------------------------------
# analyze and boxplot


def _load_cohort(path: str) -> list[cohort.Participant]:
    try:
        return cohort.load_cohort(path)
    except FileNotFoundError:
        raise DataError(f"cohort file not found: {path}") from None
    except (cohort.CohortError, ValueError) as exc:
        raise DataError(str(exc)) from None


def _load_features(path: str) -> dict[str, features.FeatureDelta]:
    try:
        return features.read_features_csv(path)
    except FileNotFoundError:
        raise DataError(f"features file not found: {path}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def check_ids(people: Sequence[cohort.Participant], feats) -> None:
    expected = {p.id for p in people if p.complete}
    lacking = sorted(expected - set(feats))
    unknown = sorted(set(feats) - {p.id for p in people})
    problems = []
    if lacking:
        problems.append("no features for: " + ", ".join(lacking))
    if unknown:
        problems.append("not in cohort: " + ", ".join(unknown))
    if problems:
        raise DataError("cohort and features disagree; " + "; ".join(problems))


def write_demographics_csv(path: Path, tests) -> None:
    lines = ["factor,chi2,df,p"]
    for factor, res in tests.items():
        if res is None:
            lines.append(f"{factor},,,")
        else:
            lines.append(f"{factor},{res.statistic!r},{res.df[0]},{res.p!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_analyze(args, settings: Settings) -> int:
    people = _load_cohort(args.cohort)
    feats = _load_features(args.features)
    check_ids(people, feats)
    if args.covariates == "auto":
        covariates = None
    elif args.covariates == "none":
        covariates = ()
    else:
        covariates = tuple(c for c in args.covariates.split(",") if c)
        bad = [c for c in covariates if c not in cohort.DEMOGRAPHIC_FACTORS]
        if bad:
            raise UsageError(f"unknown covariates: {', '.join(bad)}")
    try:
        rows = cohort.run_group_analysis(people, args.grouping, feats, covariates=covariates, alpha=args.alpha)
    except cohort.CohortError as exc:
        raise DataError(str(exc)) from None
    demographics = cohort.demographic_tests(people, args.grouping)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = out / f"report_{args.grouping}.csv"
    markdown = out / f"report_{args.grouping}.md"
    demo = out / f"demographics_{args.grouping}.csv"
    cohort.write_report_csv(report, rows)
    markdown.write_text(cohort.render_markdown(rows, args.grouping, demographics), encoding="utf-8")
    write_demographics_csv(demo, demographics)

    manifest = RunManifest(
        "analyze", config_digest({"grouping": args.grouping, "covariates": args.covariates, "alpha": args.alpha})
    )
    manifest.add_inputs([args.cohort, args.features])
    manifest.write(out / f"report_{args.grouping}.manifest.json", [report, markdown, demo])
    if not args.quiet:
        rejected = [r.variable for r in rows if r.holm_reject]
        print(f"{len(rows)} variables tested; Holm rejects: {', '.join(rejected) or 'none'}")
        print(f"wrote {report}, {markdown}, {demo}")
    return 0


def five_numbers(values: Sequence[float]) -> dict | None:
    """Quartiles by linear interpolation between order statistics; whiskers at min and max."""
    x = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if x.size < 2:
        return None
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    return {
        "n": int(x.size),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "whisker_lo": float(x.min()),
        "whisker_hi": float(x.max()),
    }


def boxplot_data(people: Sequence[cohort.Participant], feats, grouping: str) -> dict:
    label_a, label_b = grouping.upper(), f"non-{grouping.upper()}"
    members = {p.id: cohort.in_group(p, grouping) for p in people if p.complete}
    out = {}
    for col in features.FEATURE_COLUMNS:
        entry = {}
        for label, want in ((label_a, True), (label_b, False)):
            vals = [feats[pid].as_row()[col] for pid, g in sorted(members.items()) if g == want]
            summary = five_numbers(vals)
            if summary is None:
                log.warning("%s: group %s has fewer than 2 values", col, label)
            entry[label] = summary
        out[col] = entry
    return out


def cmd_boxplot(args, settings: Settings) -> int:
    people = _load_cohort(args.cohort)
    feats = _load_features(args.features)
    check_ids(people, feats)
    data = boxplot_data(people, feats, args.grouping)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest = RunManifest("boxplot", config_digest({"grouping": args.grouping}))
    manifest.add_inputs([args.cohort, args.features])
    manifest.write(_sidecar(out), [out])
    if not args.quiet:
        print(f"box-plot data for {len(data)} variables written to {out}")
    return 0


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args, settings: Settings) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"spec file not found: {args.spec}") from None
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read spec {args.spec}: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError("spec must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = synth.SynthSpec.from_dict(raw)
    except (TypeError, ValueError, KeyError) as exc:
        raise DataError(f"invalid spec: {exc}") from None

    manifest = RunManifest("simulate", config_digest(raw))
    manifest.add_inputs([args.spec])
    dataset = synth.simulate(spec)
    out = Path(args.out)
    written = synth.write_dataset(dataset, out)
    manifest.write(out / "manifest.json", written)
    if not args.quiet:
        affected = sum(t["affected"] for t in dataset.ground_truth.values())
        n_events = sum(len(v) for v in dataset.events.values())
        print(f"{spec.n} participants ({affected} affected), {n_events} events written to {out}")
    return 0


# --------------------------------------------------------------------------
# entry point


def _positive_int(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onlineshift", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="analysis config JSON (defaults built in)")
    parser.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    parser.add_argument("--threads", type=_positive_int, default=1, help="workers for remote metadata lookups")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Takeout export -> canonical NDJSON")
    p.add_argument("--takeout", required=True, help="unpacked Takeout directory")
    p.add_argument("--pid", required=True, help="participant id")
    p.add_argument("--tz", required=True, type=parse_tz, help="participant UTC offset, ±HH:MM")
    p.add_argument("--out", required=True, help="output NDJSON path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("features", help="NDJSON events -> features CSV")
    p.add_argument("--events", nargs="+", help="NDJSON event files")
    p.add_argument("--cohort", help="cohort JSON supplying tz offsets (and event files if --events is absent)")
    p.add_argument("--config", dest="sub_config", help="analysis config JSON")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_features, needs_config=True)

    for name, func, help_text in (
        ("analyze", cmd_analyze, "group comparison report (CSV + Markdown)"),
        ("boxplot", cmd_boxplot, "box-plot five-number summaries as JSON"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--cohort", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--grouping", required=True, choices=cohort.GROUPINGS)
        p.add_argument("--out", required=True, help="output directory" if name == "analyze" else "output JSON path")
        if name == "analyze":
            p.add_argument("--covariates", default="female", help="comma list, 'auto' (chi-square selected) or 'none'")
            p.add_argument("--alpha", type=float, default=0.05)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="synthetic cohort with planted shifts")
    p.add_argument("--spec", required=True, help="simulation spec JSON")
    p.add_argument("--seed", type=int, help="overrides the spec's seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)
    return parser


def _join_tz(argv: Sequence[str]) -> list[str]:
    # argparse takes "-05:00" for an option; glue it to its flag
    out: list[str] = []
    for arg in argv:
        if out and out[-1] == "--tz" and _TZ_RE.fullmatch(arg):
            out[-1] = f"--tz={arg}"
        else:
            out.append(arg)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(_join_tz(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        config_path = getattr(args, "sub_config", None) or args.config
        if getattr(args, "needs_config", False) and config_path is None:
            raise UsageError(f"{args.command} needs --config")
        settings = load_settings(config_path)
        return args.func(args, settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"onlineshift: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, lexicon.LexiconError, lexicon.ProviderError) as exc:
        print(f"onlineshift: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"onlineshift: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
