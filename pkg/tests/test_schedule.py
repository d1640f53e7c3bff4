"""Step-template arithmetic: shapes, byte counts, op ordering."""

import pytest

from stepscope import schedule as S
from stepscope.config import JobConfig


def _cfg(**kw):
    base = dict(world_size=8, dp=4, tp=2, pp=1, layers=4, seq_len=2048,
                hidden=1024, minority_gap_us=500)
    base.update(kw)
    return JobConfig(**base)


def test_matmul_flops_and_time():
    op = S.TemplateOp("matmul.x", S.OP_COMPUTE, S.STREAM_COMPUTE, "fwd",
                      m=8, n=16, k=32, eff=0.5)
    assert op.flops == 2 * 8 * 16 * 32
    cfg = _cfg(gpu_flops_nominal=1e12)
    # 1e9 flops at 0.5 * 1e12 flops/s = 2000 us
    assert S.matmul_us(10 ** 9, 0.5, cfg) == 2000
    assert S.matmul_us(0, 0.5, cfg) == 0
    assert S.matmul_us(1, 1.0, cfg) == 1  # floor at one microsecond


@pytest.mark.parametrize("name,payload,g,expect", [
    ("allreduce", 1000, 4, 1500),
    ("allreduce", 1000, 2, 1000),
    ("reduce_scatter", 1000, 4, 750),
    ("allgather", 1000, 4, 750),
    ("sendrecv", 1000, 4, 1000),
    ("broadcast", 1000, 8, 1000),
])
def test_bus_bytes(name, payload, g, expect):
    assert S.bus_bytes(name, payload, g) == expect


def test_collective_us_scales_with_bandwidth():
    a = S.collective_us("allreduce", 10 ** 9, 4, 100e9)
    b = S.collective_us("allreduce", 10 ** 9, 4, 200e9)
    assert a == 2 * b


def test_layer_param_bytes():
    cfg = _cfg(hidden=1024, ffn_hidden=4096, tp=2, dtype_bytes=2)
    # attention 4h^2 + mlp 2hf, tp-split, 2 bytes
    expect = (4 * 1024 * 1024 + 2 * 1024 * 4096) // 2 * 2
    assert S.layer_param_bytes(cfg) == expect


def test_schedule_op_counts():
    cfg = _cfg()
    sched = S.build_schedule(cfg)
    assert len(sched.per_rank) == cfg.world_size
    ops = sched.per_rank[0]
    per_layer = cfg.layers
    compute = [o for o in ops if o.op_kind == S.OP_COMPUTE]
    comm = [o for o in ops if o.op_kind == S.OP_COMM]
    gaps = [o for o in ops if o.op_kind == S.OP_GAP]
    # 5 fwd + 5 bwd matmuls per layer
    assert len(compute) == 10 * per_layer
    # tp fwd + tp bwd + dp bucket per layer
    assert len(comm) == 3 * per_layer
    # one burst of GAP_BURST micro-kernels per layer and phase
    assert len(gaps) == 2 * per_layer * S.GAP_BURST


def test_gap_burst_preserves_budget():
    cfg = _cfg(minority_gap_us=707)
    ops = S.build_schedule(cfg).per_rank[0]
    by_phase = {}
    for o in ops:
        if o.op_kind == S.OP_GAP:
            by_phase.setdefault((o.phase, o.layer), []).append(o.gap_us)
    assert len(by_phase) == 2 * cfg.layers
    for chunk in by_phase.values():
        assert sum(chunk) == 707
        assert len(chunk) == S.GAP_BURST
        assert max(chunk) - min(chunk) <= 1


def test_no_gaps_when_budget_zero():
    cfg = _cfg(minority_gap_us=0)
    ops = S.build_schedule(cfg).per_rank[0]
    assert not [o for o in ops if o.op_kind == S.OP_GAP]


def test_dp_buckets_overlap_next_layer():
    cfg = _cfg()
    ops = S.build_schedule(cfg).per_rank[0]
    overlapped = [o for o in ops if o.overlapped]
    # every backward layer except the last-processed one overlaps a bucket
    assert len(overlapped) == cfg.layers - 1
    assert all(o.phase == "bwd" and o.op_kind == S.OP_COMPUTE
               for o in overlapped)


def test_no_overlap_without_dp():
    cfg = _cfg(world_size=2, dp=1, tp=2)
    ops = S.build_schedule(cfg).per_rank[0]
    assert not [o for o in ops if o.overlapped]
    assert not [o for o in ops if "bucket" in o.coll_key]


def test_misalignment_flags():
    # 4 tp shards of 8468 ffn columns: 2117 * 2 bytes % 128 != 0
    bad = _cfg(world_size=4, dp=1, tp=4, hidden=512, ffn_hidden=8468)
    ops = S.build_schedule(bad).per_rank[0]
    assert any(o.misaligned for o in ops)
    good = _cfg(world_size=4, dp=1, tp=4, hidden=512, ffn_hidden=8704)
    ops = S.build_schedule(good).per_rank[0]
    assert not any(o.misaligned for o in ops)


def test_collectives_share_groups():
    cfg = _cfg()
    sched = S.build_schedule(cfg)
    for rank, ops in enumerate(sched.per_rank):
        for op in ops:
            if op.op_kind == S.OP_COMM:
                assert rank in op.group
                assert len(op.group) >= 2


def test_nominal_step_compute_is_positive():
    assert S.nominal_step_compute_us(_cfg()) > 0
