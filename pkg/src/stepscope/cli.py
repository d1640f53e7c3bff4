"""Command-line front end: simulate runs, record baselines, diagnose.

Four subcommands tie the library into file-based, reproducible runs:

    simulate   scenario or config file -> .xtrace (+ .truth, .halt)
    baseline   healthy trace -> stored reference profile
    diagnose   trace (+ baseline store) -> .xreport, optional figures
    report     .xreport -> table or canonical line rendering

Exit codes: 0 clean, 1 anomalies found, 2 usage or config error, 3 I/O
error. Every output file is written atomically (temp then rename).
Ground-truth sidecars exist for tests and never feed back into
``diagnose``; the only nondeterministic manifest field is wall-clock
timing, kept under its own key so runs can be compared byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .baseline import BaselineError, BaselineStore, baseline_record
from .config import ConfigError, config_from_mapping
from .engine import diagnose
from .hang import halt_lines, parse_halt_lines
from .metrics import MetricError, Thresholds
from .reporting import parse_report_lines, render_figures, render_table, report_lines
from .scenarios import scenario
from .simulate import simulate
from .trace import (
    HALT_SUFFIX,
    REPORT_SUFFIX,
    TRACE_SUFFIX,
    TRUTH_SUFFIX,
    TraceError,
    dumps_plain,
    encode_records,
    flatten,
    read_trace,
)

EXIT_CLEAN = 0
EXIT_ANOMALIES = 1
EXIT_USAGE = 2
EXIT_IO = 3

MANIFEST_SUFFIX = ".manifest.json"


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def _read_items(path: Path) -> dict[str, str]:
    """Parse a plain key=value file; '#' starts a comment line."""
    items: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text("utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        items[key.strip()] = val.strip()
    return items


def _config_hash(config, anomalies) -> str:
    canonical = dumps_plain({
        "config": asdict(config),
        "anomalies": [asdict(a) for a in anomalies],
    })
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _write_manifest(path: Path, body: dict, wall_ms: float) -> None:
    body = dict(body)
    body["tool_version"] = __version__
    body["timing"] = {"wall_ms": round(wall_ms, 3)}
    _write_atomic(path, (dumps_plain(body) + "\n").encode("utf-8"))


def _parse_key(text: str) -> tuple[str, int, str]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"baseline key must be backbone:world_size:model_tag, got {text!r}")
    try:
        world = int(parts[1])
    except ValueError:
        raise ConfigError(f"baseline key world_size {parts[1]!r} is not an integer") from None
    return (parts[0], world, parts[2])


def _key_for_trace(trace_path: Path, key_arg: str | None) -> tuple[str, int, str]:
    if key_arg:
        return _parse_key(key_arg)
    manifest = trace_path.with_suffix("").with_name(
        trace_path.with_suffix("").name + MANIFEST_SUFFIX)
    try:
        obj = json.loads(manifest.read_text("utf-8"))
        b, w, m = obj["baseline_key"]
        return (b, int(w), m)
    except FileNotFoundError:
        raise ConfigError(
            f"no --key given and no manifest at {manifest}") from None
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"manifest {manifest} has no usable baseline_key: {exc}") from None


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    if bool(args.scenario) == bool(args.config):
        raise ConfigError("give exactly one of: a scenario name, or --config FILE")
    if args.scenario:
        config, anomalies = scenario(
            args.scenario, world_size=args.world_size, steps=args.steps,
            seed=args.seed)
        name = args.scenario
    else:
        config, anomalies = config_from_mapping(_read_items(Path(args.config)))
        name = Path(args.config).stem
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.steps is not None:
            config = replace(config, steps=args.steps)
        if args.world_size is not None:
            raise ConfigError("--world-size applies to catalog scenarios only")
    if args.no_anomalies:
        anomalies = ()
    out = simulate(config, anomalies)

    outdir = Path(args.out)
    trace_path = outdir / (name + TRACE_SUFFIX)
    _write_atomic(trace_path, encode_records(flatten(out.timelines)))
    truth_path = outdir / (name + TRUTH_SUFFIX)
    _write_atomic(truth_path, (dumps_plain(out.truth) + "\n").encode("utf-8"))
    outputs = [trace_path.name, truth_path.name]
    if out.halted:
        halt_path = outdir / (name + HALT_SUFFIX)
        lines = halt_lines(out.stacks, out.ring_snapshots)
        _write_atomic(halt_path, ("\n".join(lines) + "\n").encode("utf-8"))
        outputs.append(halt_path.name)
    _write_manifest(
        outdir / (name + MANIFEST_SUFFIX),
        {
            "command": "simulate",
            "scenario": args.scenario,
            "seed": config.seed,
            "config_sha256": _config_hash(config, anomalies),
            "baseline_key": list(config.baseline_key()),
            "outputs": outputs,
            "halted": out.halted,
        },
        (time.monotonic() - t0) * 1e3,
    )
    n_records = sum(len(tl.records) for tl in out.timelines)
    status = "halted" if out.halted else "completed"
    print(f"wrote {trace_path} ({n_records} records, {status})")
    return EXIT_CLEAN


def cmd_baseline(args) -> int:
    t0 = time.monotonic()
    trace_path = Path(args.trace)
    timelines = read_trace(trace_path)
    key = _key_for_trace(trace_path, args.key)
    store = BaselineStore(args.store)
    overwrote = store.path_for(key).exists()
    path = store.save(baseline_record(timelines, key))
    _write_manifest(
        path.with_name(path.name + MANIFEST_SUFFIX),
        {
            "command": "baseline",
            "key": list(key),
            "input": str(trace_path),
            "output": path.name,
            "overwrote_existing": overwrote,
        },
        (time.monotonic() - t0) * 1e3,
    )
    print(f"stored baseline for {key[0]}:{key[1]}:{key[2]} at {path}")
    return EXIT_CLEAN


def cmd_diagnose(args) -> int:
    t0 = time.monotonic()
    trace_path = Path(args.trace)
    timelines = read_trace(trace_path)
    stem = trace_path.with_suffix("")
    halt_path = stem.with_name(stem.name + HALT_SUFFIX)
    stacks, snaps = (), ()
    if halt_path.exists():
        stacks, snaps = parse_halt_lines(
            halt_path.read_text("utf-8").splitlines())

    thresholds = Thresholds()
    if args.thresholds:
        thresholds = Thresholds.from_items(_read_items(Path(args.thresholds)))
    profile = None
    if args.baseline_store:
        key = _key_for_trace(trace_path, args.key)
        profile = BaselineStore(args.baseline_store).load(key)

    result = diagnose(timelines, stacks, snaps, profile, thresholds)

    report_path = Path(args.report) if args.report else stem.with_name(
        stem.name + REPORT_SUFFIX)
    lines = report_lines(result.reports, result.notes)
    _write_atomic(report_path, ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))
    outputs = [report_path.name]
    if args.figures:
        outputs.extend(render_figures(Path(args.figures), result.figure_data))
    exit_code = EXIT_ANOMALIES if result.actionable else EXIT_CLEAN
    _write_manifest(
        report_path.with_name(report_path.name + MANIFEST_SUFFIX),
        {
            "command": "diagnose",
            "input": str(trace_path),
            "outputs": outputs,
            "reports": len(result.reports),
            "exit_code": exit_code,
        },
        (time.monotonic() - t0) * 1e3,
    )
    print(render_table(result.reports, result.notes))
    return exit_code


def cmd_report(args) -> int:
    text = Path(args.report).read_text("utf-8")
    reports, notes = parse_report_lines(text.splitlines())
    if args.format == "table":
        print(render_table(reports, notes))
    else:
        for line in report_lines(reports, notes):
            print(line)
    actionable = any(r.confidence in ("definite", "probable") for r in reports)
    return EXIT_ANOMALIES if actionable else EXIT_CLEAN


# --------------------------------------------------------------------------
# argument wiring

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepscope",
        description="Trace-based diagnostics for distributed training runs.",
    )
    parser.add_argument("--version", action="version", version=f"stepscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="produce a trace from a scenario or config file")
    p.add_argument("scenario", nargs="?", help="catalog scenario name")
    p.add_argument("--config", help="key=value job config file instead of a scenario")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--world-size", type=int, default=None)
    p.add_argument("--no-anomalies", action="store_true",
                   help="drop injected faults: the healthy twin of the same job")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="record a reference profile from a healthy trace")
    p.add_argument("trace")
    p.add_argument("--store", required=True, help="baseline store directory")
    p.add_argument("--key", help="backbone:world_size:model_tag (default: from manifest)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("diagnose", help="analyze a trace and write an .xreport")
    p.add_argument("trace")
    p.add_argument("--baseline-store", help="directory of recorded profiles")
    p.add_argument("--key", help="baseline key override (default: from manifest)")
    p.add_argument("--thresholds",
                   help="file of key=value threshold overrides")
    p.add_argument("--report", help="report output path (default: next to trace)")
    p.add_argument("--figures", help="directory for rendered PNG figures")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", help="render an .xreport file")
    p.add_argument("report")
    p.add_argument("--format", choices=("table", "lines"), default="table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_CLEAN if code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, MetricError, BaselineError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
