"""Aggregated per-step metrics computed from trace timelines.

Five metric families feed the diagnostic verdicts: step wall time and
throughput, per-matmul FLOPS with overlap exclusion, per-collective bus
bandwidth, issue-latency distributions, and void percentages (device
idle around the dataloader, and intra-step time no instrumented record
covers). Everything here is a pure function of the timelines; verdict
thresholds arrive as an explicit Thresholds value.

The first step of a trace is always excluded (warm-up), and so is the
last (its wall time needs the next step's dataloader record).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, fields, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .schedule import bus_bytes
from .trace import (
    DATALOADER_NAME,
    KIND_GPU_COMM,
    KIND_GPU_COMPUTE,
    StepTimeline,
    TraceRecord,
)

# 64 log-spaced latency buckets over [1 us, 10 s].
LATENCY_EDGES = np.logspace(0.0, 7.0, 65)

MATMUL_DIM_KEYS = ("m", "n", "k", "dtype_bytes")


class MetricError(ValueError):
    """Trace is structurally unfit for a metric (missing records/fields)."""


@dataclass(frozen=True)
class Thresholds:
    """Verdict thresholds. All fractions sit in (0, 1).

    gc_period_min and autocorr_r parameterize the periodic-stall
    discriminator: an issue-gap autocorrelation peak above autocorr_r at
    a lag of at least gc_period_min issues reads as a GC-like stall,
    anything else as a sync-like one.
    """

    hang_timeout_us: int = 10_000_000
    throughput_drop_frac: float = 0.05
    flops_rank_spread_frac: float = 0.10
    flops_low_frac: float = 0.30
    bandwidth_low_frac: float = 0.20
    ks_threshold: float = 0.25
    v_inter_max: float = 0.05
    v_minority_max: float = 0.12
    autocorr_r: float = 0.5
    gc_period_min: int = 50

    def __post_init__(self):
        if self.hang_timeout_us <= 0:
            raise MetricError("hang_timeout_us must be > 0")
        if self.gc_period_min < 2:
            raise MetricError("gc_period_min must be >= 2")
        for f in fields(self):
            if f.name in ("hang_timeout_us", "gc_period_min"):
                continue
            v = getattr(self, f.name)
            if not 0.0 < v < 1.0:
                raise MetricError(f"{f.name} must be in (0, 1), got {v}")

    @classmethod
    def from_items(cls, items: Mapping[str, str]) -> "Thresholds":
        base = cls()
        kwargs = {}
        known = {f.name: f.type for f in fields(cls)}
        for raw_key, raw_val in items.items():
            key = raw_key.strip()
            if key not in known:
                raise MetricError(f"unknown threshold {key!r}")
            typ = known[key]
            kwargs[key] = int(raw_val) if typ in ("int", int) else float(raw_val)
        return replace(base, **kwargs)


# --------------------------------------------------------------------------
# step bookkeeping

def by_rank(timelines: Sequence[StepTimeline]) -> dict[int, dict[int, StepTimeline]]:
    out: dict[int, dict[int, StepTimeline]] = {}
    for tl in timelines:
        out.setdefault(tl.rank, {})[tl.step] = tl
    return out


def measured_steps(timelines: Sequence[StepTimeline]) -> list[int]:
    """Step indices used by every metric: present on all ranks, minus the
    warm-up step and the final one."""
    ranks = by_rank(timelines)
    if not ranks:
        return []
    common = set.intersection(*(set(steps) for steps in ranks.values()))
    ordered = sorted(common)
    return ordered[1:-1]


def dataloader_record(tl: StepTimeline) -> TraceRecord:
    for rec in tl.records:
        if rec.name == DATALOADER_NAME:
            return rec
    raise MetricError(f"rank {tl.rank} step {tl.step} has no dataloader record")


# --------------------------------------------------------------------------
# wall time and throughput

def step_wall_times(timelines: Sequence[StepTimeline]) -> dict[tuple[int, int], int]:
    """(rank, step) -> dataloader-to-dataloader wall time in us."""
    ranks = by_rank(timelines)
    out: dict[tuple[int, int], int] = {}
    for rank, steps in ranks.items():
        for step in measured_steps(timelines):
            nxt = steps.get(step + 1)
            if nxt is None:
                continue
            t = dataloader_record(nxt).issue_ts - dataloader_record(steps[step]).issue_ts
            if t <= 0:
                raise MetricError(f"non-positive wall time at rank {rank} step {step}")
            out[(rank, step)] = t
    return out


def throughput_series(timelines: Sequence[StepTimeline]) -> dict[int, float]:
    """Per-step global samples/sec, using the median wall time across ranks."""
    walls = step_wall_times(timelines)
    ranks = by_rank(timelines)
    out: dict[int, float] = {}
    for step in measured_steps(timelines):
        times = [walls[(r, step)] for r in ranks if (r, step) in walls]
        if not times:
            continue
        any_rank = next(iter(ranks))
        samples = dataloader_record(ranks[any_rank][step]).attrs.get("samples", 0)
        if not samples:
            raise MetricError(f"step {step} carries no sample count")
        out[step] = samples * 1e6 / float(np.median(times))
    return out


def throughput_drop(series: Mapping[int, float], baseline_mean: float | None,
                    frac: float, window: int = 4) -> dict:
    """Trailing-window mean vs max(baseline, early-window) reference."""
    steps = sorted(series)
    if len(steps) < 2:
        return {"flagged": False}
    w = max(1, min(window, len(steps) // 2))
    early = float(np.mean([series[s] for s in steps[:w]]))
    trailing = float(np.mean([series[s] for s in steps[-w:]]))
    ref = max(baseline_mean or 0.0, early)
    if ref <= 0:
        return {"flagged": False}
    flagged = trailing < (1.0 - frac) * ref
    return {
        "flagged": flagged,
        "trailing_mean": trailing,
        "early_mean": early,
        "reference": ref,
        "drop_frac": max(0.0, 1.0 - trailing / ref),
    }


# --------------------------------------------------------------------------
# void percentages

@dataclass(frozen=True)
class StepVoids:
    rank: int
    step: int
    t_step_us: int
    t_inter_us: int
    t_minority_us: int

    @property
    def v_inter(self) -> float:
        return min(1.0, max(0.0, self.t_inter_us / self.t_step_us))

    @property
    def v_minority(self) -> float:
        denom = self.t_step_us - self.t_inter_us
        if denom <= 0:
            return 0.0
        return min(1.0, max(0.0, self.t_minority_us / denom))


class _Coverage:
    """Merged union of [start, end) intervals with O(log n) window queries."""

    def __init__(self, intervals: Iterable[tuple[int, int]]):
        merged: list[list[int]] = []
        for lo, hi in sorted(i for i in intervals if i[1] > i[0]):
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        self.los = [m[0] for m in merged]
        self.his = [m[1] for m in merged]
        acc, total = [], 0
        for m in merged:
            total += m[1] - m[0]
            acc.append(total)
        self.prefix = acc

    def covered(self, lo: int, hi: int) -> int:
        if hi <= lo or not self.los:
            return 0
        i = bisect.bisect_right(self.his, lo)
        j = bisect.bisect_left(self.los, hi)
        if i >= j:
            return 0
        total = self.prefix[j - 1] - (self.prefix[i - 1] if i else 0)
        # trim the partial segments at both ends
        total -= max(0, lo - self.los[i])
        total -= max(0, self.his[j - 1] - hi)
        return total


def void_percentages(timelines: Sequence[StepTimeline]) -> list[StepVoids]:
    """Inter-step and minority voids per (rank, measured step).

    t_inter is the device-idle gap bracketing the dataloader call: last
    gpu-kernel end before the dataloader's issue to first gpu-kernel
    start after it. t_minority is the part of the in-step kernel window
    no record of any kind covers.
    """
    ranks = by_rank(timelines)
    steps = measured_steps(timelines)
    out: list[StepVoids] = []
    for rank in sorted(ranks):
        recs = [r for tl in sorted(ranks[rank].values(), key=lambda t: t.step)
                for r in tl.records]
        gpu = [r for r in recs if r.kind in (KIND_GPU_COMPUTE, KIND_GPU_COMM)]
        gpu_starts = sorted(r.start_ts for r in gpu)
        gpu_ends = sorted(r.end_ts for r in gpu)
        cover = _Coverage((r.start_ts, r.end_ts) for r in recs)
        for step in steps:
            nxt = ranks[rank].get(step + 1)
            if nxt is None:
                continue
            dl = dataloader_record(ranks[rank][step]).issue_ts
            dl_next = dataloader_record(nxt).issue_ts
            t_step = dl_next - dl
            i = bisect.bisect_left(gpu_starts, dl)
            j = bisect.bisect_right(gpu_ends, dl)
            if i >= len(gpu_starts) or j == 0:
                raise MetricError(f"rank {rank} step {step} has no gpu kernels around the dataloader")
            first_after = gpu_starts[i]
            last_before = gpu_ends[j - 1]
            t_inter = max(0, first_after - last_before)
            jj = bisect.bisect_right(gpu_ends, dl_next)
            window_end = gpu_ends[jj - 1] if jj else first_after
            window_end = max(window_end, first_after)
            t_minority = (window_end - first_after) - cover.covered(first_after, window_end)
            out.append(StepVoids(rank, step, t_step, t_inter, t_minority))
    return out


def void_medians(voids: Sequence[StepVoids]) -> dict[int, tuple[float, float]]:
    """rank -> (median v_inter, median v_minority)."""
    per_rank: dict[int, list[StepVoids]] = {}
    for v in voids:
        per_rank.setdefault(v.rank, []).append(v)
    return {
        rank: (float(np.median([v.v_inter for v in vs])),
               float(np.median([v.v_minority for v in vs])))
        for rank, vs in per_rank.items()
    }


@dataclass(frozen=True)
class MetricSummary:
    """Everything measured about one step, rolled up across ranks.

    Per-rank quantities (wall time, the void times) enter as the median
    across ranks. ``flops`` groups kernel instances by signature;
    ``bandwidth`` lists bus rates per collective name; ``issue_latencies``
    lists (rank, latency_us) per comm-kernel name.
    """

    step: int
    wall_time_us: float
    throughput: float
    flops: Mapping[tuple, tuple]
    bandwidth: Mapping[str, tuple[float, ...]]
    issue_latencies: Mapping[str, tuple[tuple[int, int], ...]]
    t_inter_us: float
    t_minority_us: float
    v_inter: float
    v_minority: float

    def __post_init__(self):
        if not 0.0 <= self.v_inter <= 1.0 or not 0.0 <= self.v_minority <= 1.0:
            raise MetricError(f"step {self.step}: void fractions outside [0, 1]")
        if not self.throughput > 0:
            raise MetricError(f"step {self.step}: nonpositive throughput")


def summarize_steps(timelines: Sequence[StepTimeline]) -> dict[int, MetricSummary]:
    """Per-step :class:`MetricSummary` for every measured step."""
    steps = measured_steps(timelines)
    walls = step_wall_times(timelines)
    series = throughput_series(timelines)
    voids = void_percentages(timelines)
    flops = flops_instances(timelines)
    bws = bandwidth_instances(timelines)

    out: dict[int, MetricSummary] = {}
    for step in steps:
        step_flops: dict[tuple, list] = {}
        for inst in flops:
            if inst.step == step:
                step_flops.setdefault(inst.signature, []).append(inst)
        step_bw: dict[str, list[float]] = {}
        for inst in bws:
            if inst.step == step:
                step_bw.setdefault(inst.name, []).append(inst.bus_bw)
        lats: dict[str, list[tuple[int, int]]] = {}
        for tl in timelines:
            if tl.step != step:
                continue
            for rec in tl.records:
                if rec.kind == KIND_GPU_COMM:
                    lats.setdefault(rec.name, []).append((rec.rank, rec.issue_latency_us))
        sv = [v for v in voids if v.step == step]
        out[step] = MetricSummary(
            step=step,
            wall_time_us=float(np.median([walls[k] for k in walls if k[1] == step])),
            throughput=series[step],
            flops={sig: tuple(v) for sig, v in step_flops.items()},
            bandwidth={n: tuple(v) for n, v in step_bw.items()},
            issue_latencies={n: tuple(v) for n, v in lats.items()},
            t_inter_us=float(np.median([v.t_inter_us for v in sv])) if sv else 0.0,
            t_minority_us=float(np.median([v.t_minority_us for v in sv])) if sv else 0.0,
            v_inter=float(np.median([v.v_inter for v in sv])) if sv else 0.0,
            v_minority=float(np.median([v.v_minority for v in sv])) if sv else 0.0,
        )
    return out


# --------------------------------------------------------------------------
# FLOPS with overlap exclusion

@dataclass(frozen=True)
class FlopsInstance:
    signature: tuple
    rank: int
    step: int
    flops_per_s: float
    duration_us: int
    overlapped: bool


def matmul_signature(rec: TraceRecord) -> tuple:
    try:
        dims = tuple(rec.attrs[k] for k in MATMUL_DIM_KEYS)
    except KeyError as exc:
        raise MetricError(f"matmul record {rec.name!r} missing dim {exc}") from None
    return (rec.name,) + dims


def collective_signature(rec: TraceRecord) -> tuple:
    return (rec.name, rec.attrs.get("bytes", 0), rec.attrs.get("group_size", 0))


def flops_instances(timelines: Sequence[StepTimeline]) -> list[FlopsInstance]:
    """One entry per compute record with matmul dims, overlap-marked when
    any same-rank comm record intersects its [start_ts, end_ts)."""
    ranks = by_rank(timelines)
    steps = set(measured_steps(timelines))
    out: list[FlopsInstance] = []
    for rank in sorted(ranks):
        recs = [r for tl in ranks[rank].values() for r in tl.records]
        comm = sorted((r.start_ts, r.end_ts) for r in recs if r.kind == KIND_GPU_COMM)
        comm_starts = [c[0] for c in comm]
        max_end = []
        running = 0
        for _, e in comm:
            running = max(running, e)
            max_end.append(running)

        def intersects(lo: int, hi: int) -> bool:
            # any comm interval with start < hi and end > lo
            i = bisect.bisect_left(comm_starts, hi)
            return i > 0 and max_end[i - 1] > lo

        for tl in ranks[rank].values():
            if tl.step not in steps:
                continue
            for rec in tl.records:
                if rec.kind != KIND_GPU_COMPUTE or "m" not in rec.attrs:
                    continue
                sig = matmul_signature(rec)
                dur = rec.end_ts - rec.start_ts
                if dur <= 0:
                    raise MetricError(f"zero-duration compute record {rec.name!r}")
                flops = 2.0 * rec.attrs["m"] * rec.attrs["n"] * rec.attrs["k"]
                out.append(FlopsInstance(
                    sig, rank, tl.step, flops / dur * 1e6, dur,
                    intersects(rec.start_ts, rec.end_ts)))
    return out


def _sig_rank_medians(instances: Sequence[FlopsInstance]) -> dict[tuple, dict[int, float]]:
    acc: dict[tuple, dict[int, list[float]]] = {}
    for inst in instances:
        if inst.overlapped:
            continue
        acc.setdefault(inst.signature, {}).setdefault(inst.rank, []).append(inst.flops_per_s)
    return {
        sig: {rank: float(np.median(vals)) for rank, vals in per_rank.items()}
        for sig, per_rank in acc.items()
    }


def flops_verdicts(instances: Sequence[FlopsInstance], thresholds: Thresholds,
                   flops_ref: Mapping[tuple, float] | None) -> tuple[dict, dict]:
    """(underclocked ranks, unoptimized signatures) with evidence.

    Underclocking is judged against the cross-rank median so it needs no
    baseline. Unoptimized-kernel needs a reference rate; a signature
    absent from the reference map falls back to the reference median,
    and with no references at all the verdict stays silent.
    """
    medians = _sig_rank_medians(instances)
    under: dict[int, dict] = {}
    for sig, per_rank in medians.items():
        if len(per_rank) < 2:
            continue
        cross = float(np.median(list(per_rank.values())))
        floor = (1.0 - thresholds.flops_rank_spread_frac) * cross
        for rank, med in per_rank.items():
            if med < floor:
                ev = under.setdefault(rank, {"signatures": 0, "worst_ratio": 1.0})
                ev["signatures"] += 1
                ev["worst_ratio"] = min(ev["worst_ratio"], med / cross)

    unopt: dict[tuple, dict] = {}
    if flops_ref:
        fallback = float(np.median(list(flops_ref.values())))
        totals = {
            sig: sum(i.duration_us for i in instances
                     if i.signature == sig and not i.overlapped)
            for sig in medians
        }
        if totals:
            ordered = sorted(totals.values(), reverse=True)
            top_count = max(1, -(-len(ordered) // 10))
            duration_floor = ordered[top_count - 1]
            for sig, per_rank in medians.items():
                ref = flops_ref.get(sig, fallback)
                if ref <= 0 or totals[sig] < duration_floor:
                    continue
                ceiling = (1.0 - thresholds.flops_low_frac) * ref
                if per_rank and all(med < ceiling for med in per_rank.values()):
                    worst = max(per_rank.values())
                    unopt[sig] = {
                        "reference": ref,
                        "best_rank_ratio": worst / ref,
                        "share_of_compute": totals[sig] / sum(totals.values()),
                    }
    return under, unopt


# --------------------------------------------------------------------------
# collective bus bandwidth

@dataclass(frozen=True)
class BandwidthInstance:
    name: str
    collective_seq: int
    step: int
    bytes: int
    group_size: int
    window_us: int
    bus_bw: float        # bytes/sec


def bandwidth_instances(timelines: Sequence[StepTimeline]) -> list[BandwidthInstance]:
    steps = set(measured_steps(timelines))
    groups: dict[int, list[TraceRecord]] = {}
    for tl in timelines:
        if tl.step not in steps:
            continue
        for rec in tl.records:
            if rec.kind == KIND_GPU_COMM:
                groups.setdefault(rec.attrs["collective_seq"], []).append(rec)
    out = []
    for seq in sorted(groups):
        members = groups[seq]
        g = members[0].attrs["group_size"]
        if g < 2:
            raise MetricError(f"collective_seq {seq} has group_size {g}")
        if len(members) != g:
            raise MetricError(
                f"collective_seq {seq} has {len(members)} records for group_size {g}")
        end = members[0].end_ts
        window = end - max(m.start_ts for m in members)
        if window <= 0:
            raise MetricError(f"collective_seq {seq} has an empty transfer window")
        nbytes = members[0].attrs["bytes"]
        out.append(BandwidthInstance(
            members[0].name, seq, members[0].step, nbytes, g, window,
            bus_bytes(members[0].name, nbytes, g) / window * 1e6))
    return out


def bandwidth_verdicts(instances: Sequence[BandwidthInstance], thresholds: Thresholds,
                       bandwidth_ref: Mapping[str, float] | None) -> dict[str, dict]:
    if not bandwidth_ref:
        return {}
    per_name: dict[str, list[float]] = {}
    for inst in instances:
        per_name.setdefault(inst.name, []).append(inst.bus_bw)
    verdicts: dict[str, dict] = {}
    for name, vals in per_name.items():
        ref = bandwidth_ref.get(name)
        if not ref or ref <= 0:
            continue
        med = float(np.median(vals))
        if med < (1.0 - thresholds.bandwidth_low_frac) * ref:
            verdicts[name] = {"median_bus_bw": med, "reference": ref,
                              "ratio": med / ref, "collectives": len(vals)}
    return verdicts


# --------------------------------------------------------------------------
# issue-latency distributions

def issue_latency_samples(timelines: Sequence[StepTimeline]) -> dict[str, list[tuple[int, int]]]:
    """Comm-kernel issue latencies. Key = kernel name, plus "*" pooled.
    Values are (rank, latency_us)."""
    steps = set(measured_steps(timelines))
    out: dict[str, list[tuple[int, int]]] = {"*": []}
    for tl in timelines:
        if tl.step not in steps:
            continue
        for rec in tl.records:
            if rec.kind != KIND_GPU_COMM:
                continue
            lat = rec.start_ts - rec.issue_ts
            out.setdefault(rec.name, []).append((rec.rank, lat))
            out["*"].append((rec.rank, lat))
    return out


def latency_histogram(latencies_us: Iterable[float]) -> np.ndarray:
    vals = np.clip(np.asarray(list(latencies_us), dtype=np.float64),
                   LATENCY_EDGES[0], LATENCY_EDGES[-1] - 1e-9)
    counts, _ = np.histogram(vals, bins=LATENCY_EDGES)
    return counts.astype(np.int64)


def compare_cdf(current: np.ndarray, baseline: np.ndarray) -> float:
    """Two-sample KS statistic over the shared binned CDFs."""
    cur = np.asarray(current, dtype=np.float64)
    base = np.asarray(baseline, dtype=np.float64)
    if cur.sum() == 0 or base.sum() == 0:
        return 0.0
    return float(np.max(np.abs(np.cumsum(cur) / cur.sum()
                               - np.cumsum(base) / base.sum())))


def histogram_median_us(counts) -> float:
    """Median latency of a binned histogram, at the geometric center of
    the bin holding the midpoint. Zero for an empty histogram."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return 0.0
    i = int(np.searchsorted(np.cumsum(c), total / 2.0))
    i = min(i, len(c) - 1)
    return float(np.sqrt(LATENCY_EDGES[i] * LATENCY_EDGES[i + 1]))


def cdf_linearity(latencies_us: Sequence[float]) -> float:
    """Max deviation of the empirical CDF from the straight line through
    its 5th/95th percentile points. Small values mean a uniform ramp."""
    vals = np.sort(np.asarray(latencies_us, dtype=np.float64))
    if len(vals) < 20:
        return 0.0
    p5, p95 = np.percentile(vals, [5.0, 95.0])
    if p95 <= p5:
        return 1.0
    inside = (vals >= p5) & (vals <= p95)
    xs = vals[inside]
    empirical = (np.nonzero(inside)[0] + 1) / len(vals)
    expected = 0.05 + 0.9 * (xs - p5) / (p95 - p5)
    return float(np.max(np.abs(empirical - expected)))


# --------------------------------------------------------------------------
# periodic-stall discrimination

def _positional_residuals(step_series: Sequence[Sequence[int]]) -> np.ndarray:
    """Issue-gap series minus the per-position median across steps.

    Patterns locked to the step template (dataloader ramp, step-end wait,
    a sync at a fixed layer) cancel out; drifting periodic stalls like GC
    survive as spikes.
    """
    n = min(len(s) for s in step_series)
    mat = np.asarray([list(s[:n]) for s in step_series], dtype=np.float64)
    return (mat - np.median(mat, axis=0)).ravel()


def _autocorr_peak(series: np.ndarray, lag_max: int) -> tuple[int, float]:
    x = series - series.mean()
    denom = float(np.dot(x, x))
    if denom <= 0 or len(x) < 8:
        return 0, 0.0
    best_lag, best_r = 0, 0.0
    top = min(lag_max, len(x) // 3)
    for lag in range(2, top + 1):
        r = float(np.dot(x[:-lag], x[lag:]) / denom)
        if r > best_r:
            best_lag, best_r = lag, r
    return best_lag, best_r


def stall_signature(timelines: Sequence[StepTimeline], thresholds: Thresholds,
                    lag_max: int = 256) -> dict:
    """Classify an issue-latency stall as GC-like or sync-like.

    Builds each rank's gpu issue-gap series (one diff per issued kernel,
    step-boundary diff included), detrends by per-step-position median,
    and looks for an autocorrelation peak. A peak above autocorr_r at a
    lag of at least gc_period_min issues means a stall source with its
    own period, detached from the step structure: GC-like.
    """
    ranks = by_rank(timelines)
    steps = measured_steps(timelines)
    best = {"label": "sync_like", "lag": 0, "r": 0.0, "rank": -1}
    for rank in sorted(ranks):
        series: list[list[int]] = []
        prev_last: int | None = None
        for step in steps:
            tl = ranks[rank].get(step)
            if tl is None:
                continue
            issues = sorted(r.issue_ts for r in tl.records
                            if r.kind in (KIND_GPU_COMPUTE, KIND_GPU_COMM))
            if len(issues) < 2:
                continue
            diffs = [issues[i] - issues[i - 1] for i in range(1, len(issues))]
            if prev_last is not None:
                diffs.insert(0, issues[0] - prev_last)
                series.append(diffs)
            prev_last = issues[-1]
        if len(series) < 4:
            continue
        lag, r = _autocorr_peak(_positional_residuals(series), lag_max)
        if r > best["r"]:
            best = {"label": "sync_like", "lag": lag, "r": r, "rank": rank}
    if best["r"] > thresholds.autocorr_r and best["lag"] >= thresholds.gc_period_min:
        best["label"] = "gc_like"
    return best
