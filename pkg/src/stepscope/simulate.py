"""Discrete-event execution of a job schedule into trace records.

The host model is a deep queue: each rank's host thread issues every
kernel of a step in a few hundred microseconds and only blocks at python
level (dataloader, gc, explicit synchronize, the implicit step-end wait
before the optimizer). Device streams consume the queue at kernel speed,
so issue latency (start - issue) of a gpu record measures how far the
device lags the host at that point of the step.

Collectives couple ranks: each member's kernel starts at its own device
arrival time, the transfer begins at the latest arrival, and all members
share one end timestamp. Ranks are co-simulated round-robin. A rank
parks when the next op needs a device time that is not known yet (a
stream blocked behind an unresolved collective); parking is pure lazy
evaluation and never changes a timestamp, because host-side clocks only
couple to the device at explicit waits.

Injected faults can wedge a collective or a rank forever. When no rank
can make progress the run halts, live ranks keep heartbeating for a
grace window, and the simulator captures python stacks plus ring counter
snapshots for any collective that had started on some rank.
"""

from __future__ import annotations

import bisect
import zlib
from dataclasses import dataclass, field
from typing import Sequence

from . import ring as ringmod
from .config import AnomalySpec, ConfigError, HALTING_KINDS, JobConfig, check_anomalies
from .schedule import (
    OP_COMM,
    OP_COMPUTE,
    OP_GAP,
    STREAM_COMM,
    STREAM_COMPUTE,
    STREAM_HOST,
    Schedule,
    TemplateOp,
    build_schedule,
    bus_bytes,
)
from .trace import (
    DATALOADER_NAME,
    GC_NAME,
    HEARTBEAT_NAME,
    KIND_GPU_COMM,
    KIND_GPU_COMPUTE,
    KIND_HEARTBEAT,
    KIND_PY_API,
    OPTIMIZER_NAME,
    SYNC_NAME,
    CallStackSnapshot,
    StepTimeline,
    TraceRecord,
    group_into_steps,
)

# Outer frames shared by every captured stack, innermost-first order:
# these come after whatever the rank was actually stuck in.
HANG_OUTER_FRAMES = ("train.py:train_step", "train.py:main")


class SimError(RuntimeError):
    pass


class SimBudgetError(SimError):
    pass


_RUN = "run"
_WAIT = "wait"
_PY_HANG = "py_hang"
_DEAD = "dead"
_DONE = "done"


def _jitter(seed: int, rank: int, slot: int, frac: float) -> float:
    if frac <= 0.0:
        return 1.0
    u = zlib.crc32(f"{seed}:{rank}:{slot}".encode()) / 0xFFFFFFFF
    return 1.0 + frac * (2.0 * u - 1.0)


@dataclass
class _Collective:
    name: str
    bytes: int
    group: tuple[int, ...]
    seq: int
    arrivals: dict[int, int] = field(default_factory=dict)
    issue_of: dict[int, int] = field(default_factory=dict)
    stream_of: dict[int, int] = field(default_factory=dict)
    pos_of: dict[int, int] = field(default_factory=dict)
    waiters: list[int] = field(default_factory=list)
    end_ts: int = -1
    wedged_by: int = -1

    @property
    def resolved(self) -> bool:
        return self.end_ts >= 0


@dataclass
class _Rank:
    rank: int
    ops: tuple[TemplateOp, ...]
    layer_ordinal: tuple[int, ...]
    state: str = _RUN
    step: int = 0
    cursor: int = -1                      # -1: before the step's dataloader call
    host_us: int = 0
    gpu_issues: int = 0
    last_gc_at: int = -1
    synced_at: set = field(default_factory=set)
    stream_free: dict[int, int] = field(default_factory=lambda: {STREAM_COMPUTE: 0, STREAM_COMM: 0})
    stream_blocker: dict = field(default_factory=dict)   # stream -> (step, coll_key)
    op_end: dict[int, int] = field(default_factory=dict)
    wait_cursor: int = 0
    records: list = field(default_factory=list)           # (step, pos, TraceRecord)
    step_begins: list = field(default_factory=list)
    death_us: int = -1
    hang_frames: tuple[str, ...] = ()
    last_seen_us: int = 0

    def emit(self, rec: TraceRecord, pos: int) -> None:
        self.records.append((rec.step, pos, rec))
        if rec.end_ts > self.last_seen_us:
            self.last_seen_us = rec.end_ts


@dataclass(frozen=True)
class SimOutput:
    config: JobConfig
    anomalies: tuple[AnomalySpec, ...]
    timelines: tuple[StepTimeline, ...]
    halted: bool
    stacks: tuple[CallStackSnapshot, ...]
    ring_snapshots: tuple[ringmod.RingSnapshot, ...]
    truth: dict

    def rank_timelines(self, rank: int) -> list[StepTimeline]:
        return [t for t in self.timelines if t.rank == rank]


def _collective_seqs(schedule: Schedule, steps: int) -> dict[tuple[int, str], int]:
    """Stable run-wide numbering of logical collectives, in issue order."""
    keys = schedule.collective_keys()
    out: dict[tuple[int, str], int] = {}
    seq = 0
    for step in range(steps):
        for _, key in keys:
            out[(step, key)] = seq
            seq += 1
    return out


def _layer_ordinals(ops: tuple[TemplateOp, ...]) -> tuple[int, ...]:
    out, n = [], 0
    for op in ops:
        if op.layer_first:
            n += 1
        out.append(n)
    return tuple(out)


class _Sim:
    def __init__(self, config: JobConfig, anomalies: tuple[AnomalySpec, ...]):
        self.config = config
        self.anomalies = anomalies
        self.by_kind = {a.kind: a for a in anomalies}
        self.schedule = build_schedule(config)
        self.seqs = _collective_seqs(self.schedule, config.steps)
        self.ranks = [
            _Rank(r, self.schedule.per_rank[r], _layer_ordinals(self.schedule.per_rank[r]))
            for r in range(config.world_size)
        ]
        self.colls: dict[tuple[int, str], _Collective] = {}
        self.wedged_key: tuple[int, str] | None = None
        self.wedged_rank = -1
        wedge = self.by_kind.get("comm_hang")
        if wedge is not None:
            self.wedged_key = (wedge.onset_step, self._first_bucket_key(wedge.target_rank))
            self.wedged_rank = wedge.target_rank
        self.halted = False

    def _first_bucket_key(self, rank: int) -> str:
        for op in self.schedule.per_rank[rank]:
            if op.op_kind == OP_COMM and op.stream == STREAM_COMM:
                return op.coll_key
        raise ConfigError("comm_hang needs a data-parallel gradient bucket to wedge")

    def _active(self, kind: str, step: int) -> AnomalySpec | None:
        a = self.by_kind.get(kind)
        if a is not None and step >= a.onset_step:
            return a
        return None

    def _gc_phase(self, rank: int, period: int) -> int:
        # Per-rank phase so the stall pattern is not rank-synchronized.
        return zlib.crc32(f"{self.config.seed}:gc:{rank}".encode()) % period

    # -- durations ---------------------------------------------------------

    def _compute_us(self, op: TemplateOp, r: _Rank, idx: int) -> int:
        eff = op.eff
        mis = self._active("layout_misalign", r.step)
        if mis is not None and op.misaligned:
            eff *= 1.0 - mis.magnitude
        base = op.flops / (eff * self.config.gpu_flops_nominal) * 1e6
        uc = self._active("underclock", r.step)
        if uc is not None and r.rank == uc.target_rank:
            base /= uc.magnitude
        base *= _jitter(self.config.seed, r.rank, idx, self.config.jitter_frac)
        return max(1, round(base))

    def _comm_us(self, c: _Collective, step: int, key: str) -> int:
        bw = self.config.link_bw_nominal
        nj = self._active("network_jitter", step)
        if nj is not None:
            bw *= nj.magnitude
        base = bus_bytes(c.name, c.bytes, len(c.group)) / bw * 1e6
        slot = zlib.crc32(key.encode()) % 999983
        base *= _jitter(self.config.seed, 0, slot, self.config.jitter_frac)
        return max(1, round(base))

    def _gap_us(self, op: TemplateOp, step: int) -> int:
        gap = op.gap_us
        mb = self._active("minority_bloat", step)
        if gap and mb is not None:
            gap = round(gap * mb.magnitude)
        return gap

    # -- collective bookkeeping -------------------------------------------

    def _coll(self, step: int, op: TemplateOp) -> _Collective:
        key = (step, op.coll_key)
        c = self.colls.get(key)
        if c is None:
            c = _Collective(op.name, op.bytes, op.group, self.seqs[key])
            self.colls[key] = c
        return c

    def _try_resolve(self, key: tuple[int, str]) -> None:
        c = self.colls[key]
        if c.resolved or c.wedged_by >= 0 or len(c.arrivals) < len(c.group):
            return
        start = max(c.arrivals.values())
        c.end_ts = start + self._comm_us(c, key[0], key[1])
        for member in c.group:
            r = self.ranks[member]
            stream = c.stream_of[member]
            r.emit(TraceRecord(
                rank=member, step=key[0], kind=KIND_GPU_COMM, name=c.name,
                issue_ts=c.issue_of[member], start_ts=c.arrivals[member], end_ts=c.end_ts,
                stream=stream,
                attrs={"bytes": c.bytes, "group_size": len(c.group), "collective_seq": c.seq},
            ), c.pos_of[member])
            if r.stream_blocker.get(stream) == key:
                r.stream_free[stream] = c.end_ts
                del r.stream_blocker[stream]
            r.op_end[c.pos_of[member]] = c.end_ts
        for member in c.waiters:
            if self.ranks[member].state == _WAIT:
                self.ranks[member].state = _RUN
        c.waiters = []

    def _park(self, r: _Rank, key: tuple[int, str]) -> None:
        c = self.colls[key]
        if r.rank not in c.waiters:
            c.waiters.append(r.rank)
        r.state = _WAIT
        r.hang_frames = (f"{c.name}@{c.seq}", "collective.py:wait") + HANG_OUTER_FRAMES

    # -- python-level events ----------------------------------------------

    def _begin_step(self, r: _Rank) -> bool:
        nh = self.by_kind.get("noncomm_hang")
        if nh is not None and r.rank == nh.target_rank and r.step == nh.onset_step:
            r.state = _PY_HANG
            r.hang_frames = (DATALOADER_NAME, "loader.py:fetch") + HANG_OUTER_FRAMES
            return False
        r.step_begins.append(r.host_us)
        dl = self.config.dataloader_us
        slow = self._active("dataloader_slow", r.step)
        if slow is not None:
            dl = round(dl * slow.magnitude)
        r.emit(TraceRecord(
            rank=r.rank, step=r.step, kind=KIND_PY_API, name=DATALOADER_NAME,
            issue_ts=r.host_us, start_ts=r.host_us, end_ts=r.host_us + dl,
            stream=STREAM_HOST, attrs={"samples": self.config.batch},
        ), -1)
        r.host_us += dl
        r.cursor = 0
        return True

    def _maybe_gc(self, r: _Rank) -> None:
        a = self._active("gc_stall", r.step)
        if a is None:
            return
        phase = self._gc_phase(r.rank, a.period)
        if r.gpu_issues == 0 or r.gpu_issues % a.period != phase or r.gpu_issues == r.last_gc_at:
            return
        r.last_gc_at = r.gpu_issues
        pause = round(a.magnitude)
        r.emit(TraceRecord(
            rank=r.rank, step=r.step, kind=KIND_PY_API, name=GC_NAME,
            issue_ts=r.host_us, start_ts=r.host_us, end_ts=r.host_us + pause,
            stream=STREAM_HOST, attrs={},
        ), -2)
        r.host_us += pause

    def _maybe_sync(self, r: _Rank, op: TemplateOp, idx: int) -> bool:
        """Extra synchronize at every Nth layer start. True when parked."""
        a = self._active("extra_sync", r.step)
        if a is None or not op.layer_first:
            return False
        k = r.layer_ordinal[idx]
        if k <= 1 or (k - 1) % round(a.magnitude) != 0 or idx in r.synced_at:
            return False
        done = self._issued_device_done(r)
        if done is None:
            return True
        r.synced_at.add(idx)
        end = max(r.host_us, done)
        r.emit(TraceRecord(
            rank=r.rank, step=r.step, kind=KIND_PY_API, name=SYNC_NAME,
            issue_ts=r.host_us, start_ts=r.host_us, end_ts=end,
            stream=STREAM_HOST, attrs={},
        ), -2)
        r.host_us = end
        return False

    def _issued_device_done(self, r: _Rank) -> int | None:
        """Completion time of everything this rank issued so far this step.

        Parks and returns None when an issued collective has not resolved.
        """
        pending = [
            key for key, c in self.colls.items()
            if key[0] == r.step and not c.resolved and r.rank in c.arrivals
        ]
        if pending:
            self._park(r, min(pending, key=lambda k: self.colls[k].seq))
            return None
        return max(r.op_end.values(), default=0)

    def _crash_point(self, r: _Rank) -> bool:
        a = self.by_kind.get("proc_crash")
        if (a is not None and r.rank == a.target_rank
                and r.step == a.onset_step and r.cursor == len(r.ops) // 3):
            r.state = _DEAD
            r.death_us = r.host_us
            return True
        return False

    # -- the per-rank machine ---------------------------------------------

    def _advance(self, r: _Rank) -> bool:
        """Run one rank until it parks, dies or finishes the step."""
        if r.state != _RUN:
            return False
        if r.host_us > self.config.sim_budget_us:
            raise SimBudgetError(f"rank {r.rank} exceeded the simulated time budget")
        progressed = False
        if r.cursor < 0:
            if not self._begin_step(r):
                return True
            progressed = True
        while r.cursor < len(r.ops):
            op = r.ops[r.cursor]
            idx = r.cursor
            if self._crash_point(r):
                return True
            if op.op_kind == OP_GAP:
                # An uninstrumented micro-kernel: costs host issue time
                # but leaves no record and is too small to count toward
                # the issue-periodic stall counter. If the stream end is
                # unknown (blocked behind a collective) it must wait, or
                # its busy time would be overwritten on resolve.
                if op.stream in r.stream_blocker:
                    self._park(r, r.stream_blocker[op.stream])
                    return progressed
                gap = self._gap_us(op, r.step)
                issue = r.host_us
                r.host_us += self.config.issue_cost_us
                if gap:
                    r.stream_free[op.stream] = max(r.stream_free[op.stream], issue) + gap
                r.cursor += 1
                progressed = True
                continue
            self._maybe_gc(r)
            if self._maybe_sync(r, op, idx):
                return progressed
            if op.op_kind == OP_COMPUTE:
                if op.stream in r.stream_blocker:
                    self._park(r, r.stream_blocker[op.stream])
                    return progressed
                issue = r.host_us
                r.host_us += self.config.issue_cost_us
                r.gpu_issues += 1
                start = max(issue, r.stream_free[op.stream])
                end = start + self._compute_us(op, r, idx)
                r.stream_free[op.stream] = end
                r.op_end[idx] = end
                r.emit(TraceRecord(
                    rank=r.rank, step=r.step, kind=KIND_GPU_COMPUTE, name=op.name,
                    issue_ts=issue, start_ts=start, end_ts=end, stream=op.stream,
                    attrs={"m": op.m, "n": op.n, "k": op.k,
                           "dtype_bytes": self.config.dtype_bytes}), idx)
            else:
                if op.stream in r.stream_blocker:
                    self._park(r, r.stream_blocker[op.stream])
                    return progressed
                if op.dep >= 0 and op.dep not in r.op_end:
                    dep_op = r.ops[op.dep]
                    if dep_op.op_kind != OP_COMM:
                        raise SimError("compute dependency resolved out of order")
                    self._park(r, (r.step, dep_op.coll_key))
                    return progressed
                issue = r.host_us
                r.host_us += self.config.issue_cost_us
                r.gpu_issues += 1
                dep_end = r.op_end.get(op.dep, 0) if op.dep >= 0 else 0
                arrival = max(issue, r.stream_free[op.stream], dep_end)
                key = (r.step, op.coll_key)
                c = self._coll(r.step, op)
                c.arrivals[r.rank] = arrival
                c.issue_of[r.rank] = issue
                c.stream_of[r.rank] = op.stream
                c.pos_of[r.rank] = idx
                if key == self.wedged_key and r.rank == self.wedged_rank:
                    c.wedged_by = r.rank
                r.stream_blocker[op.stream] = key
                self._try_resolve(key)
            r.cursor += 1
            progressed = True
        return self._finish_step(r) or progressed

    def _finish_step(self, r: _Rank) -> bool:
        # The host waits on each issued collective in order, then on the
        # streams, then runs the optimizer and opens the next step.
        keys = [(r.step, op.coll_key) for op in r.ops if op.op_kind == OP_COMM]
        while r.wait_cursor < len(keys):
            c = self.colls.get(keys[r.wait_cursor])
            if c is None:
                raise SimError("collective issued but never registered")
            if not c.resolved:
                self._park(r, keys[r.wait_cursor])
                return True
            r.wait_cursor += 1
        done = max(r.op_end.values(), default=r.host_us)
        host = max(r.host_us, done)
        r.emit(TraceRecord(
            rank=r.rank, step=r.step, kind=KIND_PY_API, name=OPTIMIZER_NAME,
            issue_ts=host, start_ts=host, end_ts=host + self.config.optimizer_us,
            stream=STREAM_HOST, attrs={},
        ), 10 ** 6)
        r.host_us = host + self.config.optimizer_us
        r.step += 1
        r.cursor = -1
        r.wait_cursor = 0
        r.op_end = {}
        r.synced_at = set()
        if r.step >= self.config.steps:
            r.state = _DONE
        return True

    # -- run loop and halt capture ----------------------------------------

    def run(self) -> SimOutput:
        while True:
            progressed = False
            for r in self.ranks:
                while self._advance(r):
                    progressed = True
            if all(r.state == _DONE for r in self.ranks):
                break
            if not progressed:
                if not any(k in self.by_kind for k in HALTING_KINDS):
                    raise SimError("no rank can progress and no halting fault was injected")
                self.halted = True
                break
        return self._collect()

    def _collect(self) -> SimOutput:
        for r in self.ranks:
            if r.state == _DEAD:
                r.records = [t for t in r.records if t[2].end_ts <= r.death_us]
                r.last_seen_us = max((t[2].end_ts for t in r.records), default=0)
        last = max((r.last_seen_us for r in self.ranks), default=0)
        halt_now = last + self.config.hang_grace_us if self.halted else last
        self._emit_heartbeats(halt_now)
        stacks: list[CallStackSnapshot] = []
        rings: list[ringmod.RingSnapshot] = []
        if self.halted:
            for r in self.ranks:
                if r.state == _DEAD:
                    stacks.append(CallStackSnapshot(
                        rank=r.rank, frames=(), captured_ts=halt_now, present=False))
                else:
                    frames = r.hang_frames or HANG_OUTER_FRAMES
                    stacks.append(CallStackSnapshot(
                        rank=r.rank, frames=frames, captured_ts=halt_now, present=True))
            rings = self._ring_snapshots()
        timelines: list[StepTimeline] = []
        for r in self.ranks:
            r.records.sort(key=lambda t: (t[0], t[2].issue_ts, t[1]))
            timelines.extend(group_into_steps([t[2] for t in r.records]))
        return SimOutput(
            config=self.config, anomalies=self.anomalies, timelines=tuple(timelines),
            halted=self.halted, stacks=tuple(stacks), ring_snapshots=tuple(rings),
            truth=self._truth(),
        )

    def _emit_heartbeats(self, halt_now: int) -> None:
        hb = self.config.heartbeat_us
        for r in self.ranks:
            if not r.step_begins:
                continue
            stop = r.death_us if r.state == _DEAD else (
                halt_now if self.halted else r.last_seen_us)
            t = hb
            while t <= stop:
                pos = bisect.bisect_right(r.step_begins, t) - 1
                step = min(max(pos, 0), self.config.steps - 1)
                r.emit(TraceRecord(
                    rank=r.rank, step=step, kind=KIND_HEARTBEAT, name=HEARTBEAT_NAME,
                    issue_ts=t, start_ts=t, end_ts=t, stream=STREAM_HOST, attrs={},
                ), 10 ** 6 + 1)
                t += hb

    def _ring_snapshots(self) -> list[ringmod.RingSnapshot]:
        out = []
        for key in sorted(self.colls, key=lambda k: self.colls[k].seq):
            c = self.colls[key]
            if c.resolved or not c.arrivals:
                continue
            n = len(c.group)
            chunks = max(n + 12, min(1024, c.bytes // (1 << 20)))
            cfg = ringmod.RingConfig(n_ranks=n, n_channels=2, chunks=chunks,
                                     fifo_depth=8, protocol=ringmod.PROTO_SIMPLE)
            state = ringmod.ring_init(cfg)
            order = sorted(c.group)
            dead = [p for p, m in enumerate(order) if m not in c.arrivals]
            wedged = [p for p, m in enumerate(order) if m == c.wedged_by]
            for p in dead:
                state = ringmod.ring_freeze(state, p)
            if wedged and not dead:
                state = ringmod.ring_advance(state, rounds=cfg.total_steps // 3)
                for p in wedged:
                    state = ringmod.ring_freeze(state, p)
            state = ringmod.ring_advance(state, rounds=None)
            out.append(ringmod.ring_snapshot(state, cfg.protocol,
                                             ranks=tuple(order), collective_seq=c.seq))
        return out

    def _truth(self) -> dict:
        if not self.anomalies:
            return {"kind": "none"}
        items = []
        for a in self.anomalies:
            t: dict = {"kind": a.kind, "onset_step": a.onset_step, "magnitude": a.magnitude}
            if a.target_rank is not None:
                t["target_rank"] = a.target_rank
            if a.period:
                t["period"] = a.period
            items.append(t)
        if len(items) == 1:
            return items[0]
        return {"kind": "multiple", "anomalies": items}


def simulate(config: JobConfig, anomalies: Sequence[AnomalySpec] = ()) -> SimOutput:
    live = tuple(a for a in anomalies if a.kind != "none")
    check_anomalies(config, live)
    return _Sim(config, live).run()
