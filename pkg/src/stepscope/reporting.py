"""Anomaly reports: the value type, line codec, table and figure rendering.

A diagnosis run produces a (possibly empty) list of AnomalyReports plus
free-text notes (e.g. degraded mode). Reports serialize one JSON object
per line into ``.xreport`` files with the same plain-decimal conventions
as traces, render to a fixed-width table for humans, and optionally to a
set of matplotlib figures next to the report file.

Report ordering is deterministic and causal: families that localize a
root cause (hang, compute rate, link bandwidth, voids) sort before the
distribution and throughput symptoms they explain, so the first report
names the most actionable finding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .trace import TraceError, dumps_plain_line

CLASS_HANG_NONCOMM = "hang_noncomm"
CLASS_HANG_COMM = "hang_comm"
CLASS_CRASH = "crash"
CLASS_THROUGHPUT_DROP = "throughput_drop"
CLASS_UNDERCLOCKED_GPU = "underclocked_gpu"
CLASS_UNOPTIMIZED_KERNEL = "unoptimized_kernel"
CLASS_SLOW_LINK = "slow_link"
CLASS_KERNEL_ISSUE_STALL = "kernel_issue_stall"
CLASS_INTERSTEP_OVERHEAD = "interstep_overhead"
CLASS_MINORITY_BLOAT = "minority_kernel_bloat"
CLASS_INDETERMINATE = "indeterminate"

ALL_CLASSES = frozenset((
    CLASS_HANG_NONCOMM, CLASS_HANG_COMM, CLASS_CRASH, CLASS_THROUGHPUT_DROP,
    CLASS_UNDERCLOCKED_GPU, CLASS_UNOPTIMIZED_KERNEL, CLASS_SLOW_LINK,
    CLASS_KERNEL_ISSUE_STALL, CLASS_INTERSTEP_OVERHEAD, CLASS_MINORITY_BLOAT,
    CLASS_INDETERMINATE,
))

ATTR_ALGORITHM = "algorithm"
ATTR_INFRASTRUCTURE = "infrastructure"
ATTR_OPERATIONS = "operations"
ALL_ATTRIBUTIONS = frozenset((ATTR_ALGORITHM, ATTR_INFRASTRUCTURE, ATTR_OPERATIONS))

CONF_DEFINITE = "definite"
CONF_PROBABLE = "probable"
CONF_INDETERMINATE = "indeterminate"
ALL_CONFIDENCES = frozenset((CONF_DEFINITE, CONF_PROBABLE, CONF_INDETERMINATE))

# Report families, in causal order: a hang explains everything, a slow
# GPU or link explains distribution shifts, voids explain throughput.
FAMILY_OF = {
    CLASS_HANG_NONCOMM: 0, CLASS_HANG_COMM: 0, CLASS_CRASH: 0,
    CLASS_UNDERCLOCKED_GPU: 1, CLASS_UNOPTIMIZED_KERNEL: 1,
    CLASS_SLOW_LINK: 2,
    CLASS_INTERSTEP_OVERHEAD: 3, CLASS_MINORITY_BLOAT: 3,
    CLASS_KERNEL_ISSUE_STALL: 4,
    CLASS_THROUGHPUT_DROP: 5,
    CLASS_INDETERMINATE: 6,
}

# Default team per class. kernel_issue_stall is resolved per stall style
# by the engine (GC-like lands on infrastructure, sync-like on algorithm).
ATTRIBUTION_FOR = {
    CLASS_HANG_NONCOMM: ATTR_OPERATIONS,
    CLASS_HANG_COMM: ATTR_OPERATIONS,
    CLASS_CRASH: ATTR_OPERATIONS,
    CLASS_UNDERCLOCKED_GPU: ATTR_OPERATIONS,
    CLASS_SLOW_LINK: ATTR_OPERATIONS,
    CLASS_UNOPTIMIZED_KERNEL: ATTR_INFRASTRUCTURE,
    CLASS_MINORITY_BLOAT: ATTR_INFRASTRUCTURE,
    CLASS_KERNEL_ISSUE_STALL: ATTR_ALGORITHM,
    CLASS_INTERSTEP_OVERHEAD: ATTR_ALGORITHM,
    CLASS_THROUGHPUT_DROP: ATTR_ALGORITHM,
    CLASS_INDETERMINATE: ATTR_OPERATIONS,
}


class ReportError(TraceError):
    pass


@dataclass(frozen=True)
class AnomalyReport:
    anomaly_class: str
    implicated_ranks: frozenset[int] = frozenset()
    implicated_links: frozenset[tuple[int, int]] = frozenset()
    attribution: str = ATTR_OPERATIONS
    evidence: Mapping = field(default_factory=dict)
    confidence: str = CONF_PROBABLE

    def __post_init__(self):
        if self.anomaly_class not in ALL_CLASSES:
            raise ReportError(f"unknown anomaly class {self.anomaly_class!r}")
        if self.attribution not in ALL_ATTRIBUTIONS:
            raise ReportError(f"unknown attribution {self.attribution!r}")
        if self.confidence not in ALL_CONFIDENCES:
            raise ReportError(f"unknown confidence {self.confidence!r}")
        if (self.anomaly_class == CLASS_HANG_COMM
                and self.confidence != CONF_INDETERMINATE
                and not self.implicated_ranks and not self.implicated_links):
            raise ReportError("hang_comm report localizes nothing")


def sort_key(report: AnomalyReport) -> tuple:
    return (FAMILY_OF[report.anomaly_class], report.anomaly_class,
            sorted(report.implicated_ranks), sorted(report.implicated_links))


# --------------------------------------------------------------------------
# line codec

def encode_report(report: AnomalyReport) -> str:
    obj = {
        "class": report.anomaly_class,
        "confidence": report.confidence,
        "attribution": report.attribution,
        "implicated_ranks": sorted(report.implicated_ranks),
        "implicated_links": [list(l) for l in sorted(report.implicated_links)],
        "evidence": dict(report.evidence),
    }
    return dumps_plain_line(obj)


def encode_note(text: str) -> str:
    return dumps_plain_line({"note": text})


def parse_report_lines(lines: Sequence[str]) -> tuple[list[AnomalyReport], list[str]]:
    reports: list[AnomalyReport] = []
    notes: list[str] = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReportError(f"bad report line {i + 1}: {exc}") from None
        if "note" in obj and "class" not in obj:
            notes.append(obj["note"])
            continue
        try:
            reports.append(AnomalyReport(
                anomaly_class=obj["class"],
                implicated_ranks=frozenset(obj.get("implicated_ranks", ())),
                implicated_links=frozenset(
                    (int(a), int(b)) for a, b in obj.get("implicated_links", ())),
                attribution=obj["attribution"],
                evidence=obj.get("evidence", {}),
                confidence=obj["confidence"],
            ))
        except KeyError as exc:
            raise ReportError(f"report line {i + 1} missing field {exc}") from None
    return reports, notes


def report_lines(reports: Sequence[AnomalyReport], notes: Sequence[str] = ()) -> list[str]:
    return [encode_note(n) for n in notes] + [encode_report(r) for r in reports]


# --------------------------------------------------------------------------
# human rendering

def _fmt_evidence(evidence: Mapping, limit: int = 5) -> str:
    parts = []
    for k in sorted(evidence):
        v = evidence[k]
        if isinstance(v, float):
            parts.append(f"{k}={v:.4g}")
        elif isinstance(v, (list, tuple)):
            parts.append(f"{k}={','.join(str(x) for x in v)}")
        else:
            parts.append(f"{k}={v}")
    tail = " ..." if len(parts) > limit else ""
    return " ".join(parts[:limit]) + tail


def render_table(reports: Sequence[AnomalyReport], notes: Sequence[str] = ()) -> str:
    lines = [f"# {n}" for n in notes]
    if not reports:
        lines.append("no anomalies")
        return "\n".join(lines) + "\n"
    header = f"{'CLASS':<22} {'CONF':<13} {'TEAM':<15} {'RANKS':<14} EVIDENCE"
    lines.append(header)
    lines.append("-" * len(header))
    for rep in sorted(reports, key=sort_key):
        ranks = ",".join(str(r) for r in sorted(rep.implicated_ranks)) or "-"
        lines.append(
            f"{rep.anomaly_class:<22} {rep.confidence:<13} {rep.attribution:<15} "
            f"{ranks:<14} {_fmt_evidence(rep.evidence)}")
        for a, b in sorted(rep.implicated_links):
            lines.append(f"{'':<22} {'':<13} {'':<15} link {a}<->{b}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# figures

def render_figures(out_dir, figure_data: Mapping) -> list[str]:
    """Render diagnostic figures as PNGs; returns the written paths.

    Expects the keys the engine puts into DiagnosisResult.figure_data:
    latency histograms, the throughput series and per-rank void medians.
    Missing keys skip the corresponding figure.
    """
    import os

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from .metrics import LATENCY_EDGES

    meta = {"Software": "stepscope"}
    written: list[str] = []
    os.makedirs(out_dir, exist_ok=True)

    def save(fig, name):
        path = os.path.join(out_dir, name)
        fig.savefig(path, dpi=110, metadata=meta)
        plt.close(fig)
        written.append(path)

    cur = figure_data.get("latency_hist_current")
    if cur is not None and np.sum(cur) > 0:
        fig, ax = plt.subplots(figsize=(6, 4))
        centers = np.sqrt(LATENCY_EDGES[:-1] * LATENCY_EDGES[1:])
        ax.plot(centers, np.cumsum(cur) / np.sum(cur), label="current")
        base = figure_data.get("latency_hist_baseline")
        if base is not None and np.sum(base) > 0:
            ax.plot(centers, np.cumsum(base) / np.sum(base),
                    linestyle="--", label="baseline")
        ax.set_xscale("log")
        ax.set_xlabel("issue latency (us)")
        ax.set_ylabel("CDF")
        ax.set_title("comm-kernel issue latency")
        ax.legend()
        fig.tight_layout()
        save(fig, "issue_latency_cdf.png")

    series = figure_data.get("throughput_series")
    if series:
        fig, ax = plt.subplots(figsize=(6, 4))
        steps = sorted(series)
        ax.plot(steps, [series[s] for s in steps], marker="o")
        ref = figure_data.get("throughput_baseline_mean")
        if ref:
            ax.axhline(ref, linestyle="--", color="gray", label="baseline mean")
            ax.legend()
        ax.set_xlabel("step")
        ax.set_ylabel("samples/sec")
        ax.set_title("throughput")
        fig.tight_layout()
        save(fig, "throughput.png")

    voids = figure_data.get("void_medians")
    if voids:
        fig, ax = plt.subplots(figsize=(6, 4))
        ranks = sorted(voids)
        x = np.arange(len(ranks))
        ax.bar(x - 0.2, [voids[r][0] for r in ranks], width=0.4, label="v_inter")
        ax.bar(x + 0.2, [voids[r][1] for r in ranks], width=0.4, label="v_minority")
        ax.set_xticks(x, [str(r) for r in ranks])
        ax.set_xlabel("rank")
        ax.set_ylabel("median void fraction")
        ax.set_title("void percentages")
        ax.legend()
        fig.tight_layout()
        save(fig, "voids.png")

    return written
