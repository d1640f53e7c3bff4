"""Diagnosis orchestrator: trace in, anomaly reports out.

Two regimes, chosen by what the run left behind. A halted run comes with
call-stack snapshots (and usually ring counter snapshots); those pin the
failure directly and produce exactly one hang-family report, with the
slowdown analysis skipped because the trace tail is poisoned by the
stall. A completed run goes through the slowdown battery instead:
per-rank compute rates, collective bus bandwidth, idle-void
percentages, the issue-latency distribution shift, and end-to-end
throughput.

Comparisons that need a healthy reference (latency distribution, kernel
efficiency, bandwidth) are disabled when no baseline is supplied; a note
in the output says so rather than guessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .baseline import BaselineProfile
from .hang import classify_stacks, detect_hang
from .metrics import (
    Thresholds,
    bandwidth_instances,
    bandwidth_verdicts,
    cdf_linearity,
    compare_cdf,
    flops_instances,
    flops_verdicts,
    histogram_median_us,
    issue_latency_samples,
    latency_histogram,
    measured_steps,
    stall_signature,
    throughput_drop,
    throughput_series,
    void_medians,
    void_percentages,
)
from .reporting import (
    ATTRIBUTION_FOR,
    ATTR_ALGORITHM,
    ATTR_INFRASTRUCTURE,
    CLASS_CRASH,
    CLASS_HANG_COMM,
    CLASS_HANG_NONCOMM,
    CLASS_INDETERMINATE,
    CLASS_INTERSTEP_OVERHEAD,
    CLASS_KERNEL_ISSUE_STALL,
    CLASS_MINORITY_BLOAT,
    CLASS_SLOW_LINK,
    CLASS_THROUGHPUT_DROP,
    CLASS_UNDERCLOCKED_GPU,
    CLASS_UNOPTIMIZED_KERNEL,
    CONF_DEFINITE,
    CONF_INDETERMINATE,
    CONF_PROBABLE,
    AnomalyReport,
    sort_key,
)
from .ring import RingSnapshot, ring_diagnose
from .trace import CallStackSnapshot, StepTimeline


@dataclass(frozen=True)
class DiagnosisResult:
    reports: tuple[AnomalyReport, ...]
    notes: tuple[str, ...] = ()
    figure_data: Mapping = field(default_factory=dict)

    @property
    def actionable(self) -> bool:
        """True when any report is confident enough to page someone."""
        return any(r.confidence in (CONF_DEFINITE, CONF_PROBABLE) for r in self.reports)


def sig_label(sig: tuple) -> str:
    """Compact text form of a matmul signature for report evidence."""
    name, m, n, k, dtype_bytes = sig
    return f"{name}:{m}x{n}x{k}:b{dtype_bytes}"


def diagnose(timelines: Sequence[StepTimeline],
             stacks: Sequence[CallStackSnapshot] = (),
             ring_snapshots: Sequence[RingSnapshot] = (),
             baseline: BaselineProfile | None = None,
             thresholds: Thresholds | None = None) -> DiagnosisResult:
    thresholds = thresholds or Thresholds()
    if stacks:
        return _diagnose_halt(timelines, stacks, ring_snapshots, thresholds)
    alert = detect_hang(timelines, thresholds)
    if alert is not None:
        stalled = max(alert.now_us - alert.last_seen.get(r, 0) for r in alert.silent)
        report = AnomalyReport(
            CLASS_INDETERMINATE,
            implicated_ranks=alert.silent,
            evidence={"silent_ranks": sorted(alert.silent), "stalled_us": stalled},
            confidence=CONF_PROBABLE,
        )
        note = "run looks hung but no call stacks were captured; cannot classify"
        return DiagnosisResult((report,), (note,))
    return _diagnose_slowdown(timelines, baseline, thresholds)


# --------------------------------------------------------------------------
# halted runs

def _diagnose_halt(timelines, stacks, ring_snapshots, thresholds) -> DiagnosisResult:
    cls = classify_stacks(stacks)
    halted_ts = max((s.captured_ts for s in stacks), default=0)
    if cls.kind == CLASS_CRASH:
        report = AnomalyReport(
            CLASS_CRASH,
            implicated_ranks=cls.ranks,
            evidence={"vanished_ranks": sorted(cls.ranks), "halted_ts": halted_ts},
            confidence=CONF_DEFINITE,
        )
        return DiagnosisResult((report,))
    if cls.kind == CLASS_HANG_NONCOMM:
        frames = {s.rank: s.innermost() for s in stacks if s.rank in cls.ranks}
        report = AnomalyReport(
            CLASS_HANG_NONCOMM,
            implicated_ranks=cls.ranks,
            evidence={"stuck_in": sorted(set(frames.values())), "halted_ts": halted_ts},
            confidence=CONF_DEFINITE,
        )
        return DiagnosisResult((report,))
    if cls.kind == CLASS_HANG_COMM:
        return _diagnose_comm_hang(cls.collective_seq, ring_snapshots, halted_ts)
    ranks = frozenset(s.rank for s in stacks)
    report = AnomalyReport(
        CLASS_INDETERMINATE,
        implicated_ranks=ranks,
        evidence={"halted_ts": halted_ts},
        confidence=CONF_INDETERMINATE,
    )
    note = "stacks disagree in a pattern the classifier does not recognize"
    return DiagnosisResult((report,), (note,))


def _diagnose_comm_hang(seq, ring_snapshots, halted_ts) -> DiagnosisResult:
    snap = next((s for s in ring_snapshots if s.collective_seq == seq), None)
    if snap is None and ring_snapshots:
        # No exact tag match; fall back to the earliest snapshot, which
        # sits at the front of the stalled collective queue.
        snap = min(ring_snapshots,
                   key=lambda s: s.collective_seq if s.collective_seq is not None else -1)
    if snap is None:
        report = AnomalyReport(
            CLASS_HANG_COMM,
            evidence={"collective_seq": seq, "halted_ts": halted_ts},
            confidence=CONF_INDETERMINATE,
        )
        note = "all ranks blocked in the same collective but no ring counters were captured"
        return DiagnosisResult((report,), (note,))
    diag = ring_diagnose(snap)
    evidence = {
        "collective_seq": seq,
        "halted_ts": halted_ts,
        "ring_spread": diag.spread,
        "scanned_threads": snap.scanned_threads,
    }
    if diag.confidence == CONF_DEFINITE:
        frozen = next(iter(diag.definite))
        links = frozenset(
            (min(frozen, nb), max(frozen, nb)) for nb in diag.probable
        )
        evidence["neighbor_ranks"] = sorted(diag.probable)
        report = AnomalyReport(
            CLASS_HANG_COMM,
            implicated_ranks=diag.definite,
            implicated_links=links,
            evidence=evidence,
            confidence=CONF_DEFINITE,
        )
        return DiagnosisResult((report,))
    if diag.confidence == CONF_PROBABLE:
        evidence["candidate_ranks"] = sorted(diag.probable)
        report = AnomalyReport(
            CLASS_HANG_COMM,
            implicated_ranks=diag.probable,
            evidence=evidence,
            confidence=CONF_PROBABLE,
        )
        return DiagnosisResult((report,))
    report = AnomalyReport(
        CLASS_HANG_COMM, evidence=evidence, confidence=CONF_INDETERMINATE,
    )
    note = "ring counters show no usable progress spread; cannot localize the hang"
    return DiagnosisResult((report,), (note,))


# --------------------------------------------------------------------------
# completed runs

def _diagnose_slowdown(timelines, baseline, thresholds) -> DiagnosisResult:
    reports: list[AnomalyReport] = []
    notes: list[str] = []
    if not measured_steps(timelines):
        return DiagnosisResult((), ("fewer than three steps; nothing to measure",))
    if baseline is None:
        notes.append("no baseline profile; latency, kernel-efficiency and "
                     "bandwidth comparisons disabled")

    insts = flops_instances(timelines)
    under, unopt = flops_verdicts(
        insts, thresholds, baseline.flops_ref if baseline else None)
    for rank in sorted(under):
        reports.append(AnomalyReport(
            CLASS_UNDERCLOCKED_GPU,
            implicated_ranks=frozenset({rank}),
            attribution=ATTRIBUTION_FOR[CLASS_UNDERCLOCKED_GPU],
            evidence=dict(under[rank]),
            confidence=CONF_DEFINITE,
        ))
    for sig in sorted(unopt):
        reports.append(AnomalyReport(
            CLASS_UNOPTIMIZED_KERNEL,
            attribution=ATTRIBUTION_FOR[CLASS_UNOPTIMIZED_KERNEL],
            evidence={"kernel": sig_label(sig), **unopt[sig]},
            confidence=CONF_DEFINITE,
        ))

    bw = bandwidth_verdicts(
        bandwidth_instances(timelines), thresholds,
        baseline.bandwidth_ref if baseline else None)
    for name in sorted(bw):
        reports.append(AnomalyReport(
            CLASS_SLOW_LINK,
            attribution=ATTRIBUTION_FOR[CLASS_SLOW_LINK],
            evidence={"collective": name, **bw[name]},
            confidence=CONF_DEFINITE,
        ))

    vm = void_medians(void_percentages(timelines))
    inter = {r: v for r, (v, _) in vm.items() if v > thresholds.v_inter_max}
    minority = {r: v for r, (_, v) in vm.items() if v > thresholds.v_minority_max}
    if inter:
        reports.append(AnomalyReport(
            CLASS_INTERSTEP_OVERHEAD,
            implicated_ranks=frozenset(inter),
            attribution=ATTRIBUTION_FOR[CLASS_INTERSTEP_OVERHEAD],
            evidence={"worst_v_inter": max(inter.values()),
                      "v_inter_max": thresholds.v_inter_max},
            confidence=CONF_DEFINITE,
        ))
    if minority:
        reports.append(AnomalyReport(
            CLASS_MINORITY_BLOAT,
            implicated_ranks=frozenset(minority),
            attribution=ATTRIBUTION_FOR[CLASS_MINORITY_BLOAT],
            evidence={"worst_v_minority": max(minority.values()),
                      "v_minority_max": thresholds.v_minority_max},
            confidence=CONF_DEFINITE,
        ))

    samples = issue_latency_samples(timelines)
    pooled = [lat for _, lat in samples["*"]]
    cur_hist = latency_histogram(pooled)
    figure_data: dict = {
        "latency_hist_current": tuple(int(c) for c in cur_hist),
        "void_medians": vm,
    }
    if baseline is not None:
        base_hist = baseline.issue_latency_hist.get("*")
        if base_hist is not None:
            figure_data["latency_hist_baseline"] = tuple(base_hist)
        if pooled and base_hist is not None:
            ks = compare_cdf(cur_hist, np.asarray(base_hist))
            cur_med = float(np.median(pooled))
            base_med = histogram_median_us(base_hist)
            # The shift must point toward shorter latencies: a host-side
            # stall drains the device queue, so kernels start the moment
            # they are issued. A shift toward longer latencies is the
            # device falling behind and belongs to other verdicts.
            if ks > thresholds.ks_threshold and cur_med < base_med:
                style = stall_signature(timelines, thresholds)
                gc_like = style["label"] == "gc_like"
                evidence = {
                    "ks": ks,
                    "stall_style": style["label"],
                    "period_issues": style["lag"],
                    "autocorr_r": style["r"],
                    "median_latency_us": cur_med,
                    "baseline_median_us": base_med,
                    "cdf_linearity": cdf_linearity(pooled),
                }
                if gc_like:
                    evidence["consult"] = "infrastructure,algorithm"
                reports.append(AnomalyReport(
                    CLASS_KERNEL_ISSUE_STALL,
                    attribution=ATTR_INFRASTRUCTURE if gc_like else ATTR_ALGORITHM,
                    evidence=evidence,
                    confidence=CONF_PROBABLE,
                ))

    series = throughput_series(timelines)
    drop = throughput_drop(series, baseline.throughput_mean if baseline else None,
                           thresholds.throughput_drop_frac)
    figure_data["throughput_series"] = dict(series)
    if baseline is not None:
        figure_data["throughput_baseline_mean"] = baseline.throughput_mean
    if drop.get("flagged"):
        reports.append(AnomalyReport(
            CLASS_THROUGHPUT_DROP,
            attribution=ATTRIBUTION_FOR[CLASS_THROUGHPUT_DROP],
            evidence={k: v for k, v in drop.items() if k != "flagged"},
            confidence=CONF_PROBABLE,
        ))

    reports.sort(key=sort_key)
    return DiagnosisResult(tuple(reports), tuple(notes), figure_data)
