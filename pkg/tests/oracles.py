"""Independent reference implementations the test suite checks against.

Everything here is deliberately written by a different route than the
library code: coverage by boolean microsecond grids instead of merged
interval lists, CDF statistics by explicit cumulative sums, and so on.
Slow is fine; these only run under pytest.
"""

from __future__ import annotations

import numpy as np

from stepscope.trace import (
    DATALOADER_NAME,
    KIND_GPU_COMM,
    KIND_GPU_COMPUTE,
    KIND_HEARTBEAT,
    KIND_PY_API,
    StepTimeline,
    TraceRecord,
)

COMM_NAMES = ("allreduce", "allgather", "reduce_scatter", "broadcast",
              "sendrecv", "barrier")


# --------------------------------------------------------------------------
# brute-force void percentages

def bruteforce_voids(timelines):
    """(rank, step, t_step, t_inter, t_minority) per measured step.

    Coverage is a literal boolean array over microseconds, one flag per
    microsecond of the step window, with every record of any kind
    painted onto it.
    """
    per_rank = {}
    for tl in timelines:
        per_rank.setdefault(tl.rank, {})[tl.step] = tl
    common = None
    for steps in per_rank.values():
        s = set(steps)
        common = s if common is None else common & s
    measured = sorted(common)[1:-1]

    out = []
    for rank in sorted(per_rank):
        recs = [r for s in sorted(per_rank[rank])
                for r in per_rank[rank][s].records]
        gpu = [r for r in recs
               if r.kind in (KIND_GPU_COMPUTE, KIND_GPU_COMM)]
        for step in measured:
            if step + 1 not in per_rank[rank]:
                continue
            dl = _dataloader_issue(per_rank[rank][step])
            dl_next = _dataloader_issue(per_rank[rank][step + 1])
            t_step = dl_next - dl
            after = [r.start_ts for r in gpu if r.start_ts >= dl]
            before = [r.end_ts for r in gpu if r.end_ts <= dl]
            first_after = min(after)
            last_before = max(before)
            t_inter = max(0, first_after - last_before)
            ends_in = [r.end_ts for r in gpu if r.end_ts <= dl_next]
            window_end = max(ends_in) if ends_in else first_after
            window_end = max(window_end, first_after)

            span = window_end - first_after
            grid = np.zeros(span, dtype=bool)
            for r in recs:
                lo = max(r.start_ts, first_after) - first_after
                hi = min(r.end_ts, window_end) - first_after
                if hi > lo:
                    grid[lo:hi] = True
            t_minority = span - int(grid.sum())
            out.append((rank, step, t_step, t_inter, t_minority))
    return out


def _dataloader_issue(tl):
    for r in tl.records:
        if r.kind == KIND_PY_API and r.name == DATALOADER_NAME:
            return r.issue_ts
    raise AssertionError(f"no dataloader record in rank {tl.rank} step {tl.step}")


def random_void_trace(rng, n_ranks=5, n_steps=10):
    """Timelines with randomized kernel layouts for the void oracle.

    Structure is only as sane as the void computation needs: each step gets a
    dataloader record, gpu kernels scattered after it, and a sprinkling
    of host-side records that may or may not cover the device gaps.
    """
    timelines = []
    for rank in range(n_ranks):
        t = int(rng.integers(0, 50))
        for step in range(n_steps):
            recs = []
            dl_len = int(rng.integers(1, 400))
            recs.append(TraceRecord(rank, step, KIND_PY_API, DATALOADER_NAME,
                                    t, t, t + dl_len, 0,
                                    {"samples": 4}))
            cursor = t + dl_len + int(rng.integers(0, 300))
            n_kernels = int(rng.integers(2, 9))
            for i in range(n_kernels):
                dur = int(rng.integers(1, 500))
                issue = max(t, cursor - int(rng.integers(0, 50)))
                if rng.random() < 0.5 and i > 0:
                    kind, name = KIND_GPU_COMM, str(rng.choice(COMM_NAMES))
                    attrs = {"bytes": int(rng.integers(1, 10 ** 6)),
                             "group_size": int(rng.integers(2, 9)),
                             "collective_seq": int(rng.integers(0, 10 ** 4))}
                else:
                    kind, name = KIND_GPU_COMPUTE, "matmul.rand"
                    attrs = {}
                recs.append(TraceRecord(rank, step, kind, name,
                                        issue, cursor, cursor + dur, 1, attrs))
                cursor += dur + int(rng.integers(0, 200))
            # host-side overlays that sometimes cover device-idle spans
            for _ in range(int(rng.integers(0, 3))):
                s = t + int(rng.integers(0, max(1, cursor - t)))
                e = s + int(rng.integers(1, 600))
                recs.append(TraceRecord(rank, step, KIND_PY_API, "gc.collect",
                                        s, s, e, 0, {}))
            if rng.random() < 0.3:
                hb = t + int(rng.integers(0, max(1, cursor - t)))
                recs.append(TraceRecord(rank, step, KIND_HEARTBEAT, "heartbeat",
                                        hb, hb, hb, 0, {}))
            nxt = cursor + int(rng.integers(1, 300))
            timelines.append(StepTimeline(rank=rank, step=step,
                                          step_begin_ts=t, step_end_ts=nxt,
                                          records=tuple(recs)))
            t = nxt
    return timelines


# --------------------------------------------------------------------------
# randomized valid records for the codec round trip

def random_record(rng) -> TraceRecord:
    kind = str(rng.choice((KIND_PY_API, KIND_GPU_COMPUTE, KIND_GPU_COMM,
                           KIND_HEARTBEAT)))
    issue = int(rng.integers(0, 10 ** 12))
    start = issue if kind == KIND_PY_API else issue + int(rng.integers(0, 10 ** 9))
    end = start + int(rng.integers(0, 10 ** 9))
    attrs = {}
    if kind == KIND_GPU_COMM:
        name = str(rng.choice(COMM_NAMES))
        attrs = {"bytes": int(rng.integers(1, 10 ** 12)),
                 "group_size": int(rng.integers(2, 1025)),
                 "collective_seq": int(rng.integers(0, 10 ** 9))}
    elif kind == KIND_GPU_COMPUTE:
        name = "matmul." + str(rng.choice(("qkv", "ffn_up", "ffn_down")))
        if rng.random() < 0.7:
            attrs = {"m": int(rng.integers(1, 10 ** 5)),
                     "n": int(rng.integers(1, 10 ** 5)),
                     "k": int(rng.integers(1, 10 ** 5)),
                     "dtype_bytes": int(rng.choice((1, 2, 4)))}
    elif kind == KIND_PY_API:
        name = str(rng.choice(("dataloader.next", "gc.collect",
                               "cuda.synchronize", "optimizer.step")))
        if name == "dataloader.next":
            attrs = {"samples": int(rng.integers(1, 4097))}
    else:
        name = "heartbeat"
    return TraceRecord(rank=int(rng.integers(0, 1024)),
                       step=int(rng.integers(0, 10 ** 6)),
                       kind=kind, name=name, issue_ts=issue, start_ts=start,
                       end_ts=end, stream=int(rng.integers(0, 8)),
                       attrs=attrs)


# --------------------------------------------------------------------------
# two-sample binned KS by explicit cumulative sums

def bruteforce_ks(counts_a, counts_b) -> float:
    a = np.asarray(counts_a, dtype=np.float64)
    b = np.asarray(counts_b, dtype=np.float64)
    if a.sum() == 0 or b.sum() == 0:
        return 0.0
    ca = np.cumsum(a) / a.sum()
    cb = np.cumsum(b) / b.sum()
    return float(np.max(np.abs(ca - cb)))
