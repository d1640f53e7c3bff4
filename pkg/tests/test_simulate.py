"""Event-loop semantics: determinism, causality, coupling, halting."""

import pytest

from stepscope import trace as T
from stepscope import metrics as M
from stepscope.config import AnomalySpec, JobConfig
from stepscope.scenarios import scenario
from stepscope.simulate import SimBudgetError, simulate
from stepscope.trace import dumps_plain, encode_records, flatten


def _small(**kw):
    base = dict(world_size=4, dp=2, tp=2, pp=1, layers=2, seq_len=1024,
                hidden=512, steps=6, minority_gap_us=200)
    base.update(kw)
    return JobConfig(**base)


def test_bit_identical_reruns():
    cfg = _small()
    a = simulate(cfg, ())
    b = simulate(cfg, ())
    assert encode_records(flatten(a.timelines)) == encode_records(flatten(b.timelines))
    assert dumps_plain(a.truth) == dumps_plain(b.truth)
    assert a.stacks == b.stacks


def test_seed_changes_trace():
    a = simulate(_small(seed=0), ())
    b = simulate(_small(seed=1), ())
    assert encode_records(flatten(a.timelines)) != encode_records(flatten(b.timelines))


def test_output_validates():
    out = simulate(_small(), ())
    res = T.validate_trace(out.timelines)
    assert res.ok, res.violation


def test_causality_and_stream_serialization():
    out = simulate(_small(), ())
    for tl in out.timelines:
        last_end = {}
        for r in tl.records:
            assert r.issue_ts <= r.start_ts <= r.end_ts
            if r.is_gpu:
                assert r.start_ts >= last_end.get(r.stream, 0)
                last_end[r.stream] = r.end_ts


def test_collective_closure_shares_end_ts():
    out = simulate(_small(), ())
    by_seq = {}
    for tl in out.timelines:
        for r in tl.records:
            if r.kind == T.KIND_GPU_COMM:
                by_seq.setdefault(r.attrs["collective_seq"], []).append(r)
    assert by_seq
    for seq, members in by_seq.items():
        assert len(members) == members[0].attrs["group_size"]
        assert len({r.end_ts for r in members}) == 1, f"seq {seq} end_ts differ"


def test_steady_state_walls_identical():
    out = simulate(_small(steps=8), ())
    walls = M.step_wall_times(out.timelines)
    for rank in range(4):
        vals = {walls[(rank, s)] for s in range(2, 7)}
        assert len(vals) == 1


def test_gap_ops_leave_no_records():
    out = simulate(_small(minority_gap_us=500), ())
    names = {r.name for tl in out.timelines for r in tl.records}
    assert not [n for n in names if "gap" in n]
    # but the gap time exists: device coverage has holes
    voids = M.void_percentages(out.timelines)
    assert all(v.t_minority_us > 0 for v in voids)


def test_heartbeats_present():
    cfg = _small(heartbeat_us=2_000)
    out = simulate(cfg, ())
    hb = [r for tl in out.timelines for r in tl.records
          if r.kind == T.KIND_HEARTBEAT]
    assert hb
    assert {r.rank for r in hb} == set(range(4))


def test_budget_cap_raises():
    with pytest.raises(SimBudgetError):
        simulate(_small(sim_budget_us=1000), ())


def test_truth_names_injection():
    out = simulate(_small(), (AnomalySpec("underclock", target_rank=1,
                                          magnitude=0.8, onset_step=2),))
    assert out.truth["kind"] == "underclock"
    assert out.truth["target_rank"] == 1
    healthy = simulate(_small(), ())
    assert healthy.truth == {"kind": "none"}


# --------------------------------------------------------------------------
# anomaly semantics

def test_underclock_scales_target_matmuls_and_couples():
    cfg = _small(steps=8)
    base = simulate(cfg, ())
    out = simulate(cfg, (AnomalySpec("underclock", target_rank=3,
                                     magnitude=0.8, onset_step=4),))

    def kernel_durs(o, rank, step):
        return [r.duration_us for tl in o.timelines
                if tl.rank == rank and tl.step == step
                for r in tl.records if r.kind == T.KIND_GPU_COMPUTE]

    pre, post = kernel_durs(out, 3, 2), kernel_durs(out, 3, 5)
    ref_pre, ref_post = kernel_durs(base, 3, 2), kernel_durs(base, 3, 5)
    assert pre == ref_pre
    assert all(d >= r for d, r in zip(post, ref_post))
    assert sum(post) > sum(ref_post) * 1.15

    # collective coupling slows every rank, not just the target
    walls = M.step_wall_times(out.timelines)
    ref = M.step_wall_times(base.timelines)
    for rank in range(4):
        assert walls[(rank, 6)] > ref[(rank, 6)]


def test_underclock_monotone_in_severity():
    cfg = _small(steps=6)
    last = None
    for factor in (0.9, 0.8, 0.7, 0.6):
        out = simulate(cfg, (AnomalySpec("underclock", target_rank=0,
                                         magnitude=factor, onset_step=1),))
        wall = M.step_wall_times(out.timelines)[(0, 4)]
        if last is not None:
            assert wall >= last
        last = wall


def test_network_jitter_slows_collectives():
    cfg = _small(steps=6)
    base = simulate(cfg, ())
    out = simulate(cfg, (AnomalySpec("network_jitter", magnitude=0.25,
                                     onset_step=1),))

    def comm_time(o):
        return sum(r.duration_us for tl in o.timelines
                   if tl.step == 3 for r in tl.records
                   if r.kind == T.KIND_GPU_COMM)

    assert comm_time(out) > comm_time(base) * 2.0


def test_dataloader_slow_stretches_fetch():
    cfg = _small(steps=6)
    out = simulate(cfg, (AnomalySpec("dataloader_slow", magnitude=10.0,
                                     onset_step=2),))
    for tl in out.timelines:
        dl = M.dataloader_record(tl)
        if tl.step >= 2:
            assert dl.duration_us == cfg.dataloader_us * 10
        else:
            assert dl.duration_us == cfg.dataloader_us


def test_gc_stall_emits_collect_records():
    cfg = _small(steps=6)
    out = simulate(cfg, (AnomalySpec("gc_stall", magnitude=30_000.0,
                                     onset_step=1, period=40),))
    gc = [r for tl in out.timelines for r in tl.records
          if r.name == T.GC_NAME]
    assert gc
    assert all(r.duration_us == 30_000 for r in gc)
    assert {r.rank for r in gc} == set(range(4))


def test_extra_sync_emits_synchronize_records():
    cfg = _small(steps=6, layers=4)
    out = simulate(cfg, (AnomalySpec("extra_sync", magnitude=4.0,
                                     onset_step=1),))
    sync = [r for tl in out.timelines for r in tl.records
            if r.name == T.SYNC_NAME]
    assert sync
    assert all(r.step >= 1 for r in sync)


def test_layout_misalign_halves_ffn_efficiency():
    bad = _small(world_size=4, dp=1, tp=4, hidden=512, ffn_hidden=8468,
                 minority_gap_us=0)
    out = simulate(bad, (AnomalySpec("layout_misalign", magnitude=0.5,
                                     onset_step=0),))
    clean = simulate(bad, ())
    def ffn_time(o):
        return sum(r.duration_us for tl in o.timelines if tl.step == 2
                   for r in tl.records if r.name.startswith("matmul.ffn"))
    assert ffn_time(out) > ffn_time(clean) * 1.8


# --------------------------------------------------------------------------
# halting runs

def test_comm_hang_quiesces_run():
    cfg, anomalies = scenario("comm_hang_rank_2", world_size=4, steps=6)
    out = simulate(cfg, anomalies)
    assert out.halted
    # nobody reaches the step after the hang onset
    onset = anomalies[0].onset_step
    assert max(tl.step for tl in out.timelines) <= onset
    assert len(out.stacks) == 4
    for s in out.stacks:
        assert s.present
        assert T.frame_function(s.innermost()) in T.COMM_FUNCTIONS
    seqs = {T.frame_collective_seq(s.innermost()) for s in out.stacks}
    assert len(seqs) == 1
    assert out.ring_snapshots


def test_crash_drops_rank_records():
    cfg, anomalies = scenario("crash_rank_1", world_size=4, steps=6)
    out = simulate(cfg, anomalies)
    assert out.halted
    stacks = {s.rank: s for s in out.stacks}
    assert not stacks[1].present
    assert stacks[0].present
    last = {}
    for tl in out.timelines:
        for r in tl.records:
            last[r.rank] = max(last.get(r.rank, 0), r.end_ts)
    assert last[1] < max(last.values())


def test_noncomm_hang_sticks_in_dataloader():
    cfg, anomalies = scenario("noncomm_hang_rank_3", world_size=4, steps=6)
    out = simulate(cfg, anomalies)
    assert out.halted
    stacks = {s.rank: s for s in out.stacks}
    assert stacks[3].innermost() == T.DATALOADER_NAME
    others = [s for r, s in stacks.items() if r != 3]
    assert all(T.frame_function(s.innermost()) in T.COMM_FUNCTIONS
               for s in others)


def test_healthy_idle_under_15_percent(healthy_out):
    cfg = healthy_out.config
    for tl in healthy_out.timelines:
        if tl.step in (0, cfg.steps - 1):
            continue
        merged = []
        for r in sorted(tl.records, key=lambda r: r.start_ts):
            if not r.is_gpu:
                continue
            if merged and r.start_ts <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], r.end_ts)
            else:
                merged.append([r.start_ts, r.end_ts])
        covered = sum(hi - lo for lo, hi in merged)
        span = tl.step_end_ts - tl.step_begin_ts
        assert 1 - covered / span < 0.15
