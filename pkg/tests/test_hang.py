"""Liveness detection, stack classification, halt-file codec."""

import pytest

from stepscope import hang as H
from stepscope.config import AnomalySpec
from stepscope.metrics import Thresholds
from stepscope.reporting import (
    CLASS_CRASH,
    CLASS_HANG_COMM,
    CLASS_HANG_NONCOMM,
    CLASS_INDETERMINATE,
)
from stepscope.scenarios import scenario
from stepscope.simulate import simulate
from stepscope.trace import (
    DATALOADER_NAME,
    KIND_GPU_COMPUTE,
    KIND_HEARTBEAT,
    KIND_PY_API,
    CallStackSnapshot,
    StepTimeline,
    TraceError,
    TraceRecord,
)

TH = Thresholds(hang_timeout_us=1_000_000)


def _rank_timeline(rank, step, events, heartbeats=(), t0=0, t1=50_000_000):
    recs = [TraceRecord(rank, step, KIND_PY_API, DATALOADER_NAME,
                        t0, t0, t0 + 100, 0, {"samples": 2})]
    for ts in events:
        recs.append(TraceRecord(rank, step, KIND_GPU_COMPUTE, "matmul.x",
                                ts, ts, ts + 50, 1,
                                {"m": 8, "n": 8, "k": 8, "dtype_bytes": 2}))
    for ts in heartbeats:
        recs.append(TraceRecord(rank, step, KIND_HEARTBEAT, "heartbeat",
                                ts, ts, ts, 0))
    recs.sort(key=lambda r: r.issue_ts)
    return StepTimeline(rank, step, t0, t1, tuple(recs))


# --------------------------------------------------------------------------
# detection

def test_no_alert_when_everyone_is_live():
    tls = [_rank_timeline(r, 0, events=[10_000_000],
                          heartbeats=[9_500_000]) for r in range(4)]
    assert H.detect_hang(tls, TH) is None


def test_single_silent_rank_is_flagged():
    tls = [_rank_timeline(r, 0, events=[10_000_000],
                          heartbeats=[9_500_000]) for r in range(3)]
    tls.append(_rank_timeline(3, 0, events=[2_000_000],
                              heartbeats=[2_000_000]))
    alert = H.detect_hang(tls, TH)
    assert alert is not None
    assert alert.silent == {3}
    assert alert.now_us == 10_000_050
    assert alert.last_seen[3] == 2_000_050


def test_collective_hang_flags_all_despite_heartbeats():
    # Heartbeats keep arriving while no rank finishes any work: the
    # completed-event clause lists everyone.
    tls = [_rank_timeline(r, 0, events=[1_000_000],
                          heartbeats=[5_000_000, 9_000_000])
           for r in range(4)]
    alert = H.detect_hang(tls, TH)
    assert alert is not None
    assert alert.silent == frozenset(range(4))


def test_healthy_simulation_raises_no_alert(healthy_out):
    assert H.detect_hang(healthy_out.timelines, Thresholds()) is None


def test_comm_hang_simulation_raises_alert():
    cfg, anomalies = scenario("comm_hang_rank_1", world_size=4, steps=6)
    out = simulate(cfg, anomalies)
    assert out.halted
    alert = H.detect_hang(out.timelines, Thresholds())
    assert alert is not None
    assert alert.silent == frozenset(range(4))


# --------------------------------------------------------------------------
# classification

def _stack(rank, frames, present=True):
    return CallStackSnapshot(rank=rank, frames=tuple(frames),
                             captured_ts=1000, present=present)

OUTER = ("train.py:train_step", "train.py:main")


def test_classify_empty_is_indeterminate():
    assert H.classify_stacks([]).kind == CLASS_INDETERMINATE


def test_classify_missing_rank_as_crash():
    snaps = [_stack(r, ("allreduce@7", "collective.py:wait") + OUTER)
             for r in range(3)]
    snaps.append(_stack(3, (), present=False))
    got = H.classify_stacks(snaps)
    assert got.kind == CLASS_CRASH
    assert got.ranks == {3}


def test_classify_minority_noncomm():
    snaps = [_stack(r, ("allreduce@7",) + OUTER) for r in range(3)]
    snaps.append(_stack(3, (DATALOADER_NAME, "loader.py:fetch") + OUTER))
    got = H.classify_stacks(snaps)
    assert got.kind == CLASS_HANG_NONCOMM
    assert got.ranks == {3}


def test_classify_even_split_is_indeterminate():
    snaps = [_stack(0, ("allreduce@7",) + OUTER),
             _stack(1, ("allreduce@7",) + OUTER),
             _stack(2, (DATALOADER_NAME,) + OUTER),
             _stack(3, ("optimizer.py:step",) + OUTER)]
    assert H.classify_stacks(snaps).kind == CLASS_INDETERMINATE


def test_classify_all_comm_same_seq():
    snaps = [_stack(r, ("reduce_scatter@42",) + OUTER) for r in range(4)]
    got = H.classify_stacks(snaps)
    assert got.kind == CLASS_HANG_COMM
    assert got.collective_seq == 42
    assert got.ranks == frozenset()


def test_classify_all_comm_mismatched_seq():
    snaps = [_stack(r, (f"allreduce@{7 + (r == 2)}",) + OUTER)
             for r in range(4)]
    assert H.classify_stacks(snaps).kind == CLASS_INDETERMINATE


def test_classify_comm_frame_without_seq_is_indeterminate():
    snaps = [_stack(r, ("allreduce",) + OUTER) for r in range(4)]
    assert H.classify_stacks(snaps).kind == CLASS_INDETERMINATE


# --------------------------------------------------------------------------
# halt-file codec

@pytest.fixture(scope="module")
def halted_run():
    cfg, anomalies = scenario("comm_hang_rank_2", world_size=4, steps=6)
    out = simulate(cfg, anomalies)
    assert out.halted and out.stacks and out.ring_snapshots
    return out


def test_halt_lines_round_trip(halted_run):
    lines = H.halt_lines(halted_run.stacks, halted_run.ring_snapshots)
    stacks, rings = H.parse_halt_lines(lines)
    assert tuple(stacks) == tuple(sorted(halted_run.stacks,
                                         key=lambda s: s.rank))
    assert tuple(rings) == tuple(halted_run.ring_snapshots)


def test_parse_halt_skips_blank_lines(halted_run):
    lines = H.halt_lines(halted_run.stacks, halted_run.ring_snapshots)
    padded = ["", lines[0], "   ", *lines[1:], ""]
    stacks, rings = H.parse_halt_lines(padded)
    assert len(stacks) == len(halted_run.stacks)
    assert len(rings) == len(halted_run.ring_snapshots)


def test_parse_halt_rejects_garbage():
    with pytest.raises(TraceError):
        H.parse_halt_lines(['{"kind": "mystery"}'])
    with pytest.raises(TraceError):
        H.parse_halt_lines(["not json"])
    with pytest.raises(TraceError):
        H.parse_stack_lines(['{"kind": "ring_snapshot"}'])


def test_stack_lines_sorted_by_rank(halted_run):
    lines = H.stack_lines(halted_run.stacks)
    ranks = [s.rank for s in H.parse_stack_lines(lines)]
    assert ranks == sorted(ranks)
