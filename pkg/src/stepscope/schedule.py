"""Per-rank step templates: which kernels a rank runs, in what order.

A step is: one dataloader fetch, a forward pass over the rank's local
layers, a mirrored backward pass, and (with dp > 1) one gradient
allreduce bucket per layer issued onto the communication stream as that
layer's backward work finishes. Tensor-parallel allreduces sit on the
compute stream because the next layer depends on them; pipeline
activations move as sendrecv pairs at stage boundaries.

Durations are not resolved here. Template ops carry shapes, byte counts
and efficiency factors; the simulator turns those into times (applying
anomalies and per-op jitter). FLOPs for matmul-like ops follow 2*m*n*k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .config import ConfigError, JobConfig

STREAM_HOST = 0
STREAM_COMPUTE = 1
STREAM_COMM = 2

OP_COMPUTE = "compute"
OP_COMM = "comm"
OP_GAP = "gap"

# Uninstrumented kernels per minority burst (per layer and phase).
GAP_BURST = 8


class ScheduleError(ConfigError):
    pass


@dataclass(frozen=True)
class TemplateOp:
    name: str
    op_kind: str
    stream: int
    phase: str                      # "fwd" or "bwd"
    layer: int = -1                 # global layer index, -1 when not layer-bound
    m: int = 0
    n: int = 0
    k: int = 0
    eff: float = 0.0
    overlapped: bool = False        # scheduled concurrently with a gradient bucket
    misaligned: bool = False        # leading dim bytes off the alignment quantum
    bytes: int = 0
    group: tuple[int, ...] = ()
    coll_key: str = ""              # shared id of a logical collective within a step
    dep: int = -1                   # template index whose completion gates device start
    gap_us: int = 0
    layer_first: bool = False       # first op of a layer (sync insertion point)

    @property
    def flops(self) -> int:
        return 2 * self.m * self.n * self.k


@dataclass(frozen=True)
class Schedule:
    config: JobConfig
    per_rank: tuple[tuple[TemplateOp, ...], ...]

    def collective_keys(self) -> list[tuple[int, str]]:
        """Unique (first template index, coll_key) pairs, in issue order."""
        seen: dict[str, int] = {}
        for ops in self.per_rank:
            for idx, op in enumerate(ops):
                if op.op_kind == OP_COMM and op.coll_key not in seen:
                    seen[op.coll_key] = idx
                elif op.op_kind == OP_COMM:
                    seen[op.coll_key] = min(seen[op.coll_key], idx)
        return sorted(((idx, key) for key, idx in seen.items()), key=lambda p: (p[0], p[1]))


def matmul_us(flops: int, eff: float, config: JobConfig) -> int:
    if flops <= 0:
        return 0
    return max(1, round(flops / (eff * config.gpu_flops_nominal) * 1e6))


def bus_bytes(name: str, payload: int, group_size: int) -> int:
    """Wire bytes per link for a collective, nccl-tests style."""
    g = group_size
    if name == "allreduce":
        return round(payload * 2 * (g - 1) / g)
    if name in ("reduce_scatter", "allgather"):
        return round(payload * (g - 1) / g)
    return payload  # sendrecv, broadcast, barrier


def collective_us(name: str, payload: int, group_size: int, link_bw: float) -> int:
    return max(1, round(bus_bytes(name, payload, group_size) / link_bw * 1e6))


def _misaligned(dim: int, config: JobConfig) -> bool:
    return (dim * config.dtype_bytes) % config.alignment_quantum != 0


def _stage_layers(config: JobConfig) -> list[range]:
    if config.layers < config.pp:
        raise ScheduleError(
            f"per-rank layer share is zero: {config.layers} layers over {config.pp} stages"
        )
    base, extra = divmod(config.layers, config.pp)
    out, lo = [], 0
    for p in range(config.pp):
        hi = lo + base + (1 if p < extra else 0)
        out.append(range(lo, hi))
        lo = hi
    return out


def layer_param_bytes(config: JobConfig) -> int:
    """Per-rank weight bytes of one layer after the tp split."""
    h, f, tp = config.hidden, config.ffn, config.tp
    elems = (3 * h * h + h * h + 2 * h * f) // tp
    return elems * config.dtype_bytes


def build_schedule(config: JobConfig) -> Schedule:
    s, h, tp = config.seq_len, config.hidden, config.tp
    f = config.ffn
    if h % tp or f % tp:
        raise ScheduleError("hidden and ffn must divide tp")
    stages = _stage_layers(config)
    eff = config.compute_eff
    act_bytes = s * h * config.dtype_bytes
    grad_bytes = layer_param_bytes(config)

    def matmuls(prefix: str, layer: int) -> list[dict]:
        # (name, m, n, k); shapes are per rank.
        shapes = [
            ("matmul.qkv", s, 3 * h // tp, h),
            ("flash_attn", s, s, 2 * h // tp),
            ("matmul.attn_out", s, h, h // tp),
            ("matmul.ffn_up", s, f // tp, h),
            ("matmul.ffn_down", s, h, f // tp),
        ]
        return [
            dict(name=name, m=m, n=n, k=k, layer=layer,
                 misaligned=_misaligned(n, config) or _misaligned(k, config))
            for name, m, n, k in shapes
        ]

    per_rank: list[tuple[TemplateOp, ...]] = []
    for rank in range(config.world_size):
        d, p, t = config.coords(rank)
        local = stages[p]
        ops: list[TemplateOp] = []

        def tp_group() -> tuple[int, ...]:
            base = (d * config.pp + p) * tp
            return tuple(base + i for i in range(tp))

        def dp_group() -> tuple[int, ...]:
            return tuple((dd * config.pp + p) * tp + t for dd in range(config.dp))

        def pp_peer(stage: int) -> int:
            return (d * config.pp + stage) * tp + t

        def add(op: TemplateOp) -> int:
            ops.append(op)
            return len(ops) - 1

        def add_gaps(phase: str, layer: int) -> None:
            # The minority budget is a burst of small uninstrumented
            # kernels, not one long one; each is issued separately.
            total = config.minority_gap_us
            if total <= 0:
                return
            n = min(GAP_BURST, total)
            base, extra = divmod(total, n)
            for i in range(n):
                add(TemplateOp("gap.minority", OP_GAP, STREAM_COMPUTE, phase,
                               layer=layer, gap_us=base + (1 if i < extra else 0)))

        # forward
        if p > 0:
            add(TemplateOp("sendrecv", OP_COMM, STREAM_COMPUTE, "fwd",
                           bytes=act_bytes, group=(pp_peer(p - 1), rank),
                           coll_key=f"pp_fwd:s{p - 1}:d{d}:t{t}"))
        for li, layer in enumerate(local):
            first = True
            for spec in matmuls("fwd", layer):
                add(TemplateOp(spec["name"], OP_COMPUTE, STREAM_COMPUTE, "fwd",
                               layer=layer, m=spec["m"], n=spec["n"], k=spec["k"],
                               eff=eff, misaligned=spec["misaligned"], layer_first=first))
                first = False
            if tp > 1:
                add(TemplateOp("allreduce", OP_COMM, STREAM_COMPUTE, "fwd", layer=layer,
                               bytes=act_bytes, group=tp_group(),
                               coll_key=f"tp_fwd:L{layer}:d{d}:p{p}"))
            add_gaps("fwd", layer)
        if p < config.pp - 1:
            add(TemplateOp("sendrecv", OP_COMM, STREAM_COMPUTE, "fwd",
                           bytes=act_bytes, group=(rank, pp_peer(p + 1)),
                           coll_key=f"pp_fwd:s{p}:d{d}:t{t}"))

        # backward, deepest local layer first
        if p < config.pp - 1:
            add(TemplateOp("sendrecv", OP_COMM, STREAM_COMPUTE, "bwd",
                           bytes=act_bytes, group=(pp_peer(p + 1), rank),
                           coll_key=f"pp_bwd:s{p}:d{d}:t{t}"))
        bwd_layers = list(reversed(local))
        for li, layer in enumerate(bwd_layers):
            # A bucket from the previously processed layer lands inside this
            # layer's leading matmul, so that one runs in overlapped mode.
            overlapped = config.dp > 1 and li > 0
            order = ["matmul.ffn_down", "matmul.ffn_up", "flash_attn",
                     "gap", "matmul.attn_out", "matmul.qkv"]
            shapes = {spec["name"]: spec for spec in matmuls("bwd", layer)}
            first = True
            for name in order:
                if name == "gap":
                    add_gaps("bwd", layer)
                    continue
                spec = shapes[name]
                mark = overlapped and name == "matmul.ffn_down"
                add(TemplateOp(name, OP_COMPUTE, STREAM_COMPUTE, "bwd", layer=layer,
                               m=spec["m"], n=spec["n"], k=spec["k"],
                               eff=eff * (config.overlap_eff if mark else 1.0),
                               overlapped=mark, misaligned=spec["misaligned"],
                               layer_first=first))
                first = False
            last_idx = len(ops) - 1
            if tp > 1:
                last_idx = add(TemplateOp("allreduce", OP_COMM, STREAM_COMPUTE, "bwd", layer=layer,
                                          bytes=act_bytes, group=tp_group(),
                                          coll_key=f"tp_bwd:L{layer}:d{d}:p{p}"))
            if config.dp > 1:
                add(TemplateOp("allreduce", OP_COMM, STREAM_COMM, "bwd", layer=layer,
                               bytes=grad_bytes, group=dp_group(),
                               coll_key=f"bucket:L{layer}:p{p}:t{t}", dep=last_idx))
        if p > 0:
            add(TemplateOp("sendrecv", OP_COMM, STREAM_COMPUTE, "bwd",
                           bytes=act_bytes, group=(rank, pp_peer(p - 1)),
                           coll_key=f"pp_bwd:s{p - 1}:d{d}:t{t}"))
        per_rank.append(tuple(ops))
    return Schedule(config=config, per_rank=tuple(per_rank))


def nominal_step_compute_us(config: JobConfig) -> int:
    """Covered kernel time of one rank's step at nominal efficiency.

    Sums compute durations and the serialized collective times on the
    compute stream, plus the trailing gradient bucket that outlives the
    backward pass. Used to size minority gaps, not by the diagnostics.
    """
    sched = build_schedule(config)
    ops = sched.per_rank[0]
    total = 0
    bucket = 0
    for op in ops:
        if op.op_kind == OP_COMPUTE:
            total += matmul_us(op.flops, op.eff, config)
        elif op.op_kind == OP_COMM and op.stream == STREAM_COMPUTE:
            total += collective_us(op.name, op.bytes, len(op.group), config.link_bw_nominal)
        elif op.op_kind == OP_COMM and op.stream == STREAM_COMM:
            bucket = collective_us(op.name, op.bytes, len(op.group), config.link_bw_nominal)
    return total + bucket
