"""Trace data model and on-disk codec.

A trace is a stream of timed records, one per instrumented event: a
Python-level API call, a GPU compute kernel, a GPU communication kernel,
or a liveness heartbeat. Every record carries three timestamps in integer
microseconds since job start:

    issue_ts   host-side enqueue time
    start_ts   execution begin (device time for GPU kernels)
    end_ts     execution end

Python API calls are synchronous, so ``issue_ts == start_ts`` for them.
GPU kernels are issued asynchronously and may start long after issue; the
gap ``start_ts - issue_ts`` is the issue latency used by the diagnostics.

The on-disk format (extension ``.xtrace``) is UTF-8 text with one JSON
object per line, keys in sorted order, and every numeric field written as
a plain decimal integer (no exponents, no floats). That makes
encode/decode an exact round trip and keeps records diffable. Records are
grouped into per-(rank, step) timelines; a step opens with exactly one
``dataloader.next`` record whose issue time is the step boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Mapping, Sequence

KIND_PY_API = "py_api"
KIND_GPU_COMPUTE = "gpu_compute"
KIND_GPU_COMM = "gpu_comm"
KIND_HEARTBEAT = "heartbeat"
RECORD_KINDS = frozenset((KIND_PY_API, KIND_GPU_COMPUTE, KIND_GPU_COMM, KIND_HEARTBEAT))

# Kernel names recognized as collective communication functions.
COMM_FUNCTIONS = frozenset(
    ("allreduce", "allgather", "reduce_scatter", "broadcast", "sendrecv", "barrier")
)

DATALOADER_NAME = "dataloader.next"
GC_NAME = "gc.collect"
SYNC_NAME = "cuda.synchronize"
OPTIMIZER_NAME = "optimizer.step"
HEARTBEAT_NAME = "heartbeat"

TRACE_SUFFIX = ".xtrace"
TRUTH_SUFFIX = ".truth"
HALT_SUFFIX = ".halt"
REPORT_SUFFIX = ".xreport"

_RECORD_FIELDS = ("rank", "step", "kind", "name", "issue_ts", "start_ts", "end_ts", "stream")


class TraceError(ValueError):
    """Malformed record or trace content."""


@dataclass(frozen=True)
class TraceRecord:
    """One instrumented event. Treat as immutable after construction.

    ``attrs`` holds kind-specific integer payload: matmul-like kernels
    carry ``m``/``n``/``k``/``dtype_bytes``; communication kernels carry
    ``bytes``/``group_size``/``collective_seq``.
    """

    rank: int
    step: int
    kind: str
    name: str
    issue_ts: int
    start_ts: int
    end_ts: int
    stream: int
    attrs: Mapping[str, int] = field(default_factory=dict)

    @property
    def duration_us(self) -> int:
        return self.end_ts - self.start_ts

    @property
    def issue_latency_us(self) -> int:
        return self.start_ts - self.issue_ts

    @property
    def is_gpu(self) -> bool:
        return self.kind in (KIND_GPU_COMPUTE, KIND_GPU_COMM)


@dataclass(frozen=True)
class StepTimeline:
    """Records of one rank within one step, ordered by issue time.

    ``step_begin_ts`` is the issue time of the opening dataloader record;
    ``step_end_ts`` is the next step's begin, or the last event end for
    the final (or truncated) step of a run.
    """

    rank: int
    step: int
    step_begin_ts: int
    step_end_ts: int
    records: tuple[TraceRecord, ...]


@dataclass(frozen=True)
class CallStackSnapshot:
    """What one rank was doing when a run halted, innermost frame first.

    A frame for a pending collective embeds its sequence number as
    ``"allreduce@417"`` so a hang can be matched across ranks.
    ``present=False`` means the rank's process could not be observed at
    all (it died rather than hung).
    """

    rank: int
    frames: tuple[str, ...]
    captured_ts: int
    present: bool = True

    def innermost(self) -> str:
        return self.frames[0] if self.frames else ""


def frame_function(frame: str) -> str:
    """Function name of a stack frame label, with any ``@seq`` suffix dropped."""
    return frame.split("@", 1)[0]


def frame_collective_seq(frame: str) -> int | None:
    if "@" not in frame:
        return None
    tail = frame.split("@", 1)[1]
    try:
        return int(tail)
    except ValueError:
        return None


# --------------------------------------------------------------------------
# record validation

def record_violation(rec: TraceRecord) -> str | None:
    """Return a one-line rule violation for a single record, or None."""
    if rec.kind not in RECORD_KINDS:
        return f"kind: unknown kind {rec.kind!r}"
    if not rec.name:
        return "name: empty"
    for fname in ("rank", "step", "issue_ts", "start_ts", "end_ts", "stream"):
        v = getattr(rec, fname)
        if not isinstance(v, int) or isinstance(v, bool):
            return f"{fname}: not an integer"
        if v < 0:
            return f"{fname}: negative"
    if not (rec.issue_ts <= rec.start_ts <= rec.end_ts):
        return "timestamps: require issue_ts <= start_ts <= end_ts"
    if rec.kind == KIND_PY_API and rec.issue_ts != rec.start_ts:
        return "timestamps: py_api records are synchronous (issue_ts == start_ts)"
    for k, v in rec.attrs.items():
        if not isinstance(k, str):
            return "attrs: non-string key"
        if not isinstance(v, int) or isinstance(v, bool):
            return f"attrs: value for {k!r} not an integer"
    if rec.kind == KIND_GPU_COMM:
        if rec.attrs.get("bytes", 0) <= 0:
            return "attrs: comm kernel requires bytes > 0"
        if rec.attrs.get("group_size", 0) < 2:
            return "attrs: comm kernel requires group_size >= 2"
        if "collective_seq" not in rec.attrs:
            return "attrs: comm kernel requires collective_seq"
    return None


@dataclass(frozen=True)
class Violation:
    index: tuple[int, int, int]  # (rank, step, position within step)
    rule: str


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violation: Violation | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_trace(timelines: Sequence[StepTimeline]) -> ValidationResult:
    """Check structural invariants, returning the first violation found.

    Per-record rules first, then per-step rules (issue ordering, a single
    opening dataloader record, containment in the step window), then the
    cross-rank rule that every collective_seq value is carried by exactly
    group_size records agreeing on name, bytes and group size.
    """
    collectives: dict[int, list[tuple[tuple[int, int, int], TraceRecord]]] = {}
    for tl in sorted(timelines, key=lambda t: (t.rank, t.step)):
        prev_issue = None
        dataloader_seen = 0
        for pos, rec in enumerate(tl.records):
            idx = (tl.rank, tl.step, pos)
            rule = record_violation(rec)
            if rule is not None:
                return ValidationResult(False, Violation(idx, rule))
            if rec.rank != tl.rank or rec.step != tl.step:
                return ValidationResult(False, Violation(idx, "timeline: record rank/step mismatch"))
            if prev_issue is not None and rec.issue_ts < prev_issue:
                return ValidationResult(False, Violation(idx, "order: records not sorted by issue_ts"))
            prev_issue = rec.issue_ts
            if rec.end_ts > tl.step_end_ts:
                return ValidationResult(False, Violation(idx, "window: end_ts past step_end_ts"))
            if rec.name == DATALOADER_NAME:
                dataloader_seen += 1
                if pos != 0:
                    return ValidationResult(False, Violation(idx, "dataloader: must open the step"))
                if rec.issue_ts != tl.step_begin_ts:
                    return ValidationResult(False, Violation(idx, "dataloader: issue_ts must equal step_begin_ts"))
            if rec.kind == KIND_GPU_COMM:
                collectives.setdefault(rec.attrs["collective_seq"], []).append((idx, rec))
        if dataloader_seen != 1:
            idx = (tl.rank, tl.step, 0)
            return ValidationResult(False, Violation(idx, "dataloader: exactly one per step required"))
    for seq in sorted(collectives):
        members = collectives[seq]
        idx0, first = members[0]
        sig = (first.name, first.attrs["bytes"], first.attrs["group_size"])
        for idx, rec in members[1:]:
            if (rec.name, rec.attrs["bytes"], rec.attrs["group_size"]) != sig:
                return ValidationResult(
                    False, Violation(idx, f"collective_seq: inconsistent records for seq {seq}")
                )
        if len(members) != first.attrs["group_size"]:
            return ValidationResult(
                False,
                Violation(idx0, f"collective_seq: seq {seq} has {len(members)} records, expected group_size {sig[2]}"),
            )
        ranks = {rec.rank for _, rec in members}
        if len(ranks) != len(members):
            return ValidationResult(False, Violation(idx0, f"collective_seq: duplicate rank in seq {seq}"))
    return ValidationResult(True, None)


# --------------------------------------------------------------------------
# codec

def encode_record(rec: TraceRecord) -> str:
    rule = record_violation(rec)
    if rule is not None:
        raise TraceError(f"refusing to encode invalid record: {rule}")
    obj = {f: getattr(rec, f) for f in _RECORD_FIELDS}
    obj["attrs"] = dict(sorted(rec.attrs.items()))
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def decode_record(line: str) -> TraceRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceError(f"bad record line: {exc}") from None
    if not isinstance(obj, dict):
        raise TraceError("bad record line: not an object")
    try:
        attrs = obj.pop("attrs", {})
        rec = TraceRecord(attrs=attrs, **{f: obj[f] for f in _RECORD_FIELDS})
    except (KeyError, TypeError) as exc:
        raise TraceError(f"bad record line: missing field ({exc})") from None
    rule = record_violation(rec)
    if rule is not None:
        raise TraceError(f"bad record line: {rule}")
    return rec


def encode_records(records: Iterable[TraceRecord]) -> bytes:
    lines = [encode_record(r) for r in records]
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_records(data: bytes | str) -> list[TraceRecord]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return [decode_record(line) for line in data.splitlines() if line.strip()]


def flatten(timelines: Iterable[StepTimeline]) -> list[TraceRecord]:
    out: list[TraceRecord] = []
    for tl in sorted(timelines, key=lambda t: (t.rank, t.step)):
        out.extend(tl.records)
    return out


def group_into_steps(records: Sequence[TraceRecord]) -> list[StepTimeline]:
    """Rebuild per-(rank, step) timelines from a flat record stream.

    The step window begin is the dataloader issue time; the end is the
    next step's begin on the same rank, falling back to the last event end
    for the final step.
    """
    by_rank: dict[int, dict[int, list[TraceRecord]]] = {}
    for rec in records:
        by_rank.setdefault(rec.rank, {}).setdefault(rec.step, []).append(rec)
    out: list[StepTimeline] = []
    for rank in sorted(by_rank):
        steps = sorted(by_rank[rank])
        begins: dict[int, int] = {}
        for s in steps:
            recs = by_rank[rank][s]
            begins[s] = min(r.issue_ts for r in recs)
        for i, s in enumerate(steps):
            recs = by_rank[rank][s]
            end = begins[steps[i + 1]] if i + 1 < len(steps) else max(r.end_ts for r in recs)
            out.append(
                StepTimeline(
                    rank=rank,
                    step=s,
                    step_begin_ts=begins[s],
                    step_end_ts=max(end, max(r.end_ts for r in recs)),
                    records=tuple(recs),
                )
            )
    return out


def read_trace(path) -> list[StepTimeline]:
    with open(path, "rb") as fh:
        return group_into_steps(decode_records(fh.read()))


# --------------------------------------------------------------------------
# plain-decimal JSON for files that carry floats (baselines, reports)

def format_number(x) -> str:
    """Format int/float as plain decimal text, never exponent notation."""
    if isinstance(x, bool):
        raise TypeError("bool is not a numeric field")
    if isinstance(x, int):
        return str(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    text = repr(float(x))
    if "e" in text or "E" in text:
        # Expand shortest-roundtrip exponent form; Decimal keeps it exact.
        text = format(Decimal(text), "f")
        if "." not in text:
            text += ".0"
    return text


def dumps_plain(obj, indent: int = 0) -> str:
    """JSON text with sorted keys and plain-decimal numerics."""
    pad = " " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, float)):
        return format_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ",".join("\n" + pad + "  " + dumps_plain(v, indent + 2) for v in obj)
        return "[" + inner + "\n" + pad + "]"
    if isinstance(obj, Mapping):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj):
            if not isinstance(k, str):
                raise TypeError(f"non-string key {k!r}")
            items.append("\n" + pad + "  " + json.dumps(k) + ": " + dumps_plain(obj[k], indent + 2))
        return "{" + ",".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_plain_line(obj) -> str:
    """Single-line variant of :func:`dumps_plain` for line-delimited files."""
    if isinstance(obj, Mapping):
        items = (json.dumps(k) + ":" + dumps_plain_line(obj[k]) for k in sorted(obj))
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_plain_line(v) for v in obj) + "]"
    if obj is None or isinstance(obj, (bool, str)):
        return dumps_plain(obj)
    return format_number(obj)
