"""Chunked ring-allreduce progress model for intra-kernel hang localization.

Each rank keeps a send counter and a receive counter per communication
channel. Data moves around the ring one hop at a time: rank r sends its
next chunk message to next(r), bounded by three rules,

  * a rank can only send what it owns or has already received
    (``send <= recv + initial_ownership``),
  * the receiver's FIFO has finite depth
    (``send[r] - recv[next(r)] < fifo_depth``),
  * nothing can be received before it was sent
    (``recv[r] <= send[prev(r)]``).

A healthy ring drives every counter to ``total_steps``. A frozen rank
stops both of its counters; the rest of the ring drains until no rule
fires, and at that quiescent point the frozen rank holds the strictly
smallest send counter while its upstream neighbor is pinned at most
``fifo_depth`` ahead. Diagnosis reads one counter snapshot and reports
the argmin.

Counters are advanced in synchronous rounds (each eligible counter gains
at most one per round, decided against the pre-round state), which keeps
runs deterministic and lets callers freeze a rank "after w rounds".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .trace import dumps_plain_line, TraceError
import json

PROTO_SIMPLE = "SIMPLE"
PROTO_LL = "LL"
PROTO_LL128 = "LL128"
PROTOCOLS = (PROTO_SIMPLE, PROTO_LL, PROTO_LL128)

# Per-thread scan cost by protocol. SIMPLE needs only the first thread of
# each block; LL carries a flag word per data word, so scanning it costs a
# little more than LL128.
_SCAN_UNIT = {PROTO_SIMPLE: 1.0, PROTO_LL128: 1.0, PROTO_LL: 1.125}


class RingError(ValueError):
    """Invalid ring configuration or operation."""


@dataclass(frozen=True)
class RingConfig:
    n_ranks: int
    n_channels: int
    chunks: int
    fifo_depth: int
    protocol: str = PROTO_SIMPLE
    threads_per_block: int = 256

    def __post_init__(self):
        if self.n_ranks < 2:
            raise RingError("n_ranks must be >= 2")
        if self.n_channels < 1:
            raise RingError("n_channels must be >= 1")
        if self.fifo_depth < 1:
            raise RingError("fifo_depth must be >= 1")
        if self.protocol not in PROTOCOLS:
            raise RingError(f"unknown protocol {self.protocol!r}")
        if self.threads_per_block < 1:
            raise RingError("threads_per_block must be >= 1")
        # Below this bound the drained counters need not separate cleanly.
        if self.chunks < self.n_ranks + self.fifo_depth + 2:
            raise RingError("chunks must be >= n_ranks + fifo_depth + 2")

    @property
    def ownership(self) -> int:
        """Chunks a rank can send without receiving anything first."""
        return math.ceil(self.chunks / self.n_ranks)

    @property
    def total_steps(self) -> int:
        return 2 * (self.n_ranks - 1) * self.ownership


@dataclass
class RingState:
    """Counter state; value semantics (transition functions return copies)."""

    config: RingConfig
    send: np.ndarray  # int64 [n_ranks, n_channels]
    recv: np.ndarray
    frozen: frozenset[int] = frozenset()
    quiescent: bool = False

    def copy(self) -> "RingState":
        return RingState(self.config, self.send.copy(), self.recv.copy(), self.frozen, self.quiescent)

    @property
    def complete(self) -> bool:
        t = self.config.total_steps
        return bool((self.send == t).all() and (self.recv == t).all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RingState):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.send, other.send)
            and np.array_equal(self.recv, other.recv)
            and self.frozen == other.frozen
            and self.quiescent == other.quiescent
        )


def ring_init(config: RingConfig) -> RingState:
    shape = (config.n_ranks, config.n_channels)
    return RingState(config, np.zeros(shape, np.int64), np.zeros(shape, np.int64))


def ring_freeze(state: RingState, rank: int) -> RingState:
    if not 0 <= rank < state.config.n_ranks:
        raise RingError(f"rank {rank} out of range")
    out = state.copy()
    out.frozen = state.frozen | {rank}
    out.quiescent = False
    return out


def _one_round(state: RingState) -> bool:
    """Apply one synchronous round in place; True if anything moved."""
    cfg = state.config
    t, own, depth = cfg.total_steps, cfg.ownership, cfg.fifo_depth
    send, recv = state.send, state.recv
    live = np.ones(cfg.n_ranks, bool)
    for r in state.frozen:
        live[r] = False
    live = live[:, None]

    recv_next = np.roll(recv, -1, axis=0)   # recv[next(r)]
    send_prev = np.roll(send, 1, axis=0)    # send[prev(r)]
    send_cap = np.minimum(t, np.minimum(recv + own, recv_next + depth))
    recv_cap = np.minimum(t, send_prev)
    new_send = np.where(live, np.maximum(send, np.minimum(send + 1, send_cap)), send)
    new_recv = np.where(live, np.maximum(recv, np.minimum(recv + 1, recv_cap)), recv)
    moved = bool((new_send != send).any() or (new_recv != recv).any())
    state.send, state.recv = new_send, new_recv
    return moved


def ring_advance(state: RingState, rounds: int | None = None) -> RingState:
    """Advance the ring; with ``rounds=None`` run until complete or stuck.

    Returns a new state. ``quiescent`` is set when no rule fires while
    chunks remain outstanding (a stall), and stays False on completion.
    """
    out = state.copy()
    out.quiescent = False
    remaining = rounds
    while remaining is None or remaining > 0:
        moved = _one_round(out)
        if remaining is not None:
            remaining -= 1
        if not moved:
            out.quiescent = not out.complete
            break
        if out.complete:
            break
    return out


# --------------------------------------------------------------------------
# snapshot and diagnosis

@dataclass(frozen=True)
class RingSnapshot:
    """One debugger pass over the counters of a (possibly hung) ring.

    ``ranks`` maps ring position to global rank id. ``cost`` is the
    modeled scan cost: channels times threads inspected per channel,
    scaled by the protocol's per-thread unit cost.
    """

    n_ranks: int
    n_channels: int
    fifo_depth: int
    protocol: str
    send: tuple[tuple[int, ...], ...]
    recv: tuple[tuple[int, ...], ...]
    ranks: tuple[int, ...]
    scanned_threads: int
    cost: float
    collective_seq: int | None = None


def snapshot_cost(config: RingConfig, protocol: str | None = None) -> tuple[int, float]:
    proto = protocol or config.protocol
    if proto not in PROTOCOLS:
        raise RingError(f"unknown protocol {proto!r}")
    per_channel = 1 if proto == PROTO_SIMPLE else config.threads_per_block
    scanned = config.n_channels * per_channel
    return scanned, scanned * _SCAN_UNIT[proto]


def ring_snapshot(
    state: RingState,
    protocol: str | None = None,
    ranks: Sequence[int] | None = None,
    collective_seq: int | None = None,
) -> RingSnapshot:
    cfg = state.config
    scanned, cost = snapshot_cost(cfg, protocol)
    ids = tuple(ranks) if ranks is not None else tuple(range(cfg.n_ranks))
    if len(ids) != cfg.n_ranks:
        raise RingError("ranks mapping must cover every ring position")
    return RingSnapshot(
        n_ranks=cfg.n_ranks,
        n_channels=cfg.n_channels,
        fifo_depth=cfg.fifo_depth,
        protocol=protocol or cfg.protocol,
        send=tuple(tuple(int(v) for v in row) for row in state.send),
        recv=tuple(tuple(int(v) for v in row) for row in state.recv),
        ranks=ids,
        scanned_threads=scanned,
        cost=cost,
        collective_seq=collective_seq,
    )


CONF_DEFINITE = "definite"
CONF_PROBABLE = "probable"
CONF_INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class RingDiagnosis:
    confidence: str
    definite: frozenset[int]   # global rank ids
    probable: frozenset[int]
    spread: int

    @property
    def implicated(self) -> frozenset[int]:
        return self.definite | self.probable


def ring_diagnose(snapshot: RingSnapshot) -> RingDiagnosis:
    """Localize the stuck rank from one counter snapshot.

    The per-rank progress score is the minimum send counter across
    channels. A rank with zero progress carries no evidence (its kernel
    may simply not have launched), and uniform counters carry none
    either (completed or never started), so both cases come back
    indeterminate. Otherwise the argmin is the culprit; an exact send
    tie is broken by the receive counters (a frozen rank stops receiving
    too, while its downstream neighbor keeps draining, so at small ring
    sizes the flow-control cap can pin a live neighbor to the same send
    value). Ring neighbors of the culprit are reported as probable
    because they are the other endpoints of the stuck FIFO.
    """
    send = np.asarray(snapshot.send, np.int64)
    recv = np.asarray(snapshot.recv, np.int64)
    score = send.min(axis=1)
    spread = int(score.max() - score.min())
    n = snapshot.n_ranks
    if int(score.min()) == 0:
        return RingDiagnosis(CONF_INDETERMINATE, frozenset(), frozenset(), spread)
    if spread == 0 and int(recv.max() - recv.min()) == 0:
        return RingDiagnosis(CONF_INDETERMINATE, frozenset(), frozenset(), spread)
    cands = [r for r in range(n) if score[r] == score.min()]
    if len(cands) > 1:
        rscore = recv.min(axis=1)
        best = min(rscore[r] for r in cands)
        cands = [r for r in cands if rscore[r] == best]
    ids = snapshot.ranks
    if len(cands) == 1:
        f = cands[0]
        neighbors = frozenset({ids[(f - 1) % n], ids[(f + 1) % n]})
        return RingDiagnosis(CONF_DEFINITE, frozenset({ids[f]}), neighbors - {ids[f]}, spread)
    implicated = set()
    for f in cands:
        implicated.update({ids[f], ids[(f - 1) % n], ids[(f + 1) % n]})
    return RingDiagnosis(CONF_PROBABLE, frozenset(), frozenset(implicated), spread)


# --------------------------------------------------------------------------
# serialization (same line-delimited text shape as traces)

def ring_snapshot_lines(snap: RingSnapshot) -> list[str]:
    lines = []
    for pos in range(snap.n_ranks):
        for ch in range(snap.n_channels):
            obj = {
                "kind": "ring_snapshot",
                "rank": snap.ranks[pos],
                "position": pos,
                "channel": ch,
                "send_step": snap.send[pos][ch],
                "recv_step": snap.recv[pos][ch],
                "n_ranks": snap.n_ranks,
                "n_channels": snap.n_channels,
                "fifo_depth": snap.fifo_depth,
                "protocol": snap.protocol,
                "scanned_threads": snap.scanned_threads,
                "collective_seq": snap.collective_seq,
            }
            lines.append(dumps_plain_line(obj))
    return lines


def parse_ring_snapshot_lines(lines: Sequence[str]) -> list[RingSnapshot]:
    """Group serialized counter lines back into snapshots (one per seq)."""
    rows = []
    for line in lines:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"bad ring snapshot line: {exc}") from None
        if obj.get("kind") != "ring_snapshot":
            raise TraceError("bad ring snapshot line: wrong kind")
        rows.append(obj)
    groups: dict[object, list[dict]] = {}
    for obj in rows:
        groups.setdefault(obj.get("collective_seq"), []).append(obj)
    out = []
    for seq in sorted(groups, key=lambda s: (s is None, s)):
        members = groups[seq]
        head = members[0]
        n, ch = head["n_ranks"], head["n_channels"]
        send = [[0] * ch for _ in range(n)]
        recv = [[0] * ch for _ in range(n)]
        ranks = [0] * n
        for obj in members:
            pos, c = obj["position"], obj["channel"]
            send[pos][c] = obj["send_step"]
            recv[pos][c] = obj["recv_step"]
            ranks[pos] = obj["rank"]
        proto = head["protocol"]
        cfg_threads = head["scanned_threads"] // ch if proto != PROTO_SIMPLE else 256
        out.append(
            RingSnapshot(
                n_ranks=n,
                n_channels=ch,
                fifo_depth=head["fifo_depth"],
                protocol=proto,
                send=tuple(tuple(row) for row in send),
                recv=tuple(tuple(row) for row in recv),
                ranks=tuple(ranks),
                scanned_threads=head["scanned_threads"],
                cost=head["scanned_threads"] * _SCAN_UNIT[proto],
                collective_seq=seq,
            )
        )
    return out
