"""Hang detection from heartbeats and classification from call stacks.

Detection is liveness-based: a rank is silent when its last heartbeat or
its last completed (non-heartbeat) record is older than the hang timeout
relative to the newest timestamp anywhere in the trace. A collectively
hung job keeps heartbeating, so the completed-event clause is what fires
there, listing every rank and deferring blame to the stacks.

Classification looks only at the innermost frame of each rank's stack:
a vanished snapshot means a crash; a strict minority stuck outside the
communication functions names those ranks directly; everyone inside the
same collective call is the classic all-blocked case that needs ring
counter escalation to localize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .metrics import Thresholds
from .reporting import (
    CLASS_CRASH,
    CLASS_HANG_COMM,
    CLASS_HANG_NONCOMM,
    CLASS_INDETERMINATE,
)
from .ring import RingSnapshot, parse_ring_snapshot_lines, ring_snapshot_lines
from .trace import (
    COMM_FUNCTIONS,
    KIND_HEARTBEAT,
    CallStackSnapshot,
    StepTimeline,
    TraceError,
    dumps_plain_line,
    frame_collective_seq,
    frame_function,
)


@dataclass(frozen=True)
class HangAlert:
    now_us: int
    silent: frozenset[int]
    last_seen: Mapping[int, int]


def detect_hang(timelines: Sequence[StepTimeline],
                thresholds: Thresholds) -> HangAlert | None:
    last_hb: dict[int, int] = {}
    last_event: dict[int, int] = {}
    now = 0
    for tl in timelines:
        hb = last_hb.setdefault(tl.rank, 0)
        ev = last_event.setdefault(tl.rank, 0)
        for rec in tl.records:
            if rec.kind == KIND_HEARTBEAT:
                hb = max(hb, rec.issue_ts)
            else:
                ev = max(ev, rec.end_ts)
        last_hb[tl.rank] = hb
        last_event[tl.rank] = ev
        now = max(now, hb, ev)
    timeout = thresholds.hang_timeout_us
    silent = frozenset(
        rank for rank in last_hb
        if now - last_hb[rank] > timeout or now - last_event[rank] > timeout
    )
    if not silent:
        return None
    last_seen = {rank: max(last_hb[rank], last_event[rank]) for rank in last_hb}
    return HangAlert(now_us=now, silent=silent, last_seen=last_seen)


@dataclass(frozen=True)
class StackClassification:
    kind: str                      # report class, or indeterminate
    ranks: frozenset[int] = frozenset()
    collective_seq: int | None = None


def classify_stacks(snapshots: Sequence[CallStackSnapshot]) -> StackClassification:
    if not snapshots:
        return StackClassification(CLASS_INDETERMINATE)
    missing = frozenset(s.rank for s in snapshots if not s.present)
    if missing:
        return StackClassification(CLASS_CRASH, missing)
    non_comm = frozenset(
        s.rank for s in snapshots
        if frame_function(s.innermost()) not in COMM_FUNCTIONS
    )
    if non_comm and 2 * len(non_comm) < len(snapshots):
        return StackClassification(CLASS_HANG_NONCOMM, non_comm)
    if not non_comm:
        seqs = {frame_collective_seq(s.innermost()) for s in snapshots}
        if len(seqs) == 1 and None not in seqs:
            return StackClassification(CLASS_HANG_COMM, collective_seq=seqs.pop())
    return StackClassification(CLASS_INDETERMINATE)


# --------------------------------------------------------------------------
# halt-file codec: call stacks and ring counter dumps, one JSON line each

def stack_lines(snapshots: Sequence[CallStackSnapshot]) -> list[str]:
    return [
        dumps_plain_line({
            "kind": "stack",
            "rank": s.rank,
            "frames": list(s.frames),
            "captured_ts": s.captured_ts,
            "present": s.present,
        })
        for s in sorted(snapshots, key=lambda s: s.rank)
    ]


def parse_stack_lines(lines: Sequence[str]) -> list[CallStackSnapshot]:
    out = []
    for line in lines:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"bad stack line: {exc}") from None
        if obj.get("kind") != "stack":
            raise TraceError("bad stack line: wrong kind")
        try:
            out.append(CallStackSnapshot(
                rank=obj["rank"],
                frames=tuple(obj["frames"]),
                captured_ts=obj["captured_ts"],
                present=obj["present"],
            ))
        except (KeyError, TypeError) as exc:
            raise TraceError(f"bad stack line: {exc}") from None
    return out


def halt_lines(stacks: Sequence[CallStackSnapshot],
               ring_snapshots: Sequence[RingSnapshot]) -> list[str]:
    lines = stack_lines(stacks)
    for snap in ring_snapshots:
        lines.extend(ring_snapshot_lines(snap))
    return lines


def parse_halt_lines(
    lines: Sequence[str],
) -> tuple[list[CallStackSnapshot], list[RingSnapshot]]:
    stack_raw: list[str] = []
    ring_raw: list[str] = []
    for line in lines:
        if not line.strip():
            continue
        try:
            kind = json.loads(line).get("kind")
        except json.JSONDecodeError as exc:
            raise TraceError(f"bad halt line: {exc}") from None
        if kind == "stack":
            stack_raw.append(line)
        elif kind == "ring_snapshot":
            ring_raw.append(line)
        else:
            raise TraceError(f"bad halt line: unknown kind {kind!r}")
    return parse_stack_lines(stack_raw), parse_ring_snapshot_lines(ring_raw)
