"""Reference profiles recorded from known-good runs.

A baseline captures what "healthy" looks like for one cluster backbone,
world size and model configuration: issue-latency histograms, sustained
throughput, per-kernel compute rates, per-collective bus bandwidth, and
the two idle-void percentages. Later runs are compared against it; when
no baseline exists the comparisons that need one are disabled rather
than guessed.

Profiles live one per file in a flat directory. Files are sorted-key
JSON with plain decimal numerics, so save -> load -> save reproduces the
bytes exactly and profiles diff cleanly under version control.
"""

from __future__ import annotations

import json
import os
import urllib.parse
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metrics import (
    LATENCY_EDGES,
    bandwidth_instances,
    flops_instances,
    issue_latency_samples,
    latency_histogram,
    throughput_series,
    void_medians,
    void_percentages,
)
from .trace import StepTimeline, dumps_plain

BASELINE_SUFFIX = ".baseline"


class BaselineError(ValueError):
    """Unusable baseline content, or insufficient input to build one."""


@dataclass(frozen=True)
class BaselineProfile:
    """Healthy-run reference keyed by (backbone, world_size, model_tag).

    ``issue_latency_hist`` maps a communication kernel name to its bin
    counts over ``LATENCY_EDGES``; the pooled distribution across all
    names is stored under ``"*"``. ``flops_ref`` maps a matmul signature
    to its median non-overlapped FLOP/s, ``bandwidth_ref`` a collective
    name to its median bus bytes/sec.
    """

    key: tuple[str, int, str]
    issue_latency_hist: Mapping[str, tuple[int, ...]]
    throughput_mean: float
    throughput_std: float
    flops_ref: Mapping[tuple, float]
    bandwidth_ref: Mapping[str, float]
    v_inter_ref: float
    v_minority_ref: float

    def __post_init__(self):
        backbone, world, model = self.key
        if not isinstance(backbone, str) or not isinstance(model, str):
            raise BaselineError(f"bad profile key {self.key!r}")
        if not isinstance(world, int) or isinstance(world, bool) or world < 1:
            raise BaselineError(f"bad world size in profile key {self.key!r}")
        nbins = len(LATENCY_EDGES) - 1
        for name, counts in self.issue_latency_hist.items():
            if len(counts) != nbins:
                raise BaselineError(
                    f"histogram for {name!r} has {len(counts)} bins, expected {nbins}")
            if any(c < 0 for c in counts):
                raise BaselineError(f"histogram for {name!r} has a negative count")
        if not self.throughput_mean > 0:
            raise BaselineError("throughput_mean must be positive")
        if self.throughput_std < 0:
            raise BaselineError("throughput_std must be nonnegative")
        for sig, val in self.flops_ref.items():
            if not val > 0:
                raise BaselineError(f"flops_ref for {sig!r} must be positive")
        for name, val in self.bandwidth_ref.items():
            if not val > 0:
                raise BaselineError(f"bandwidth_ref for {name!r} must be positive")
        for label, val in (("v_inter_ref", self.v_inter_ref),
                           ("v_minority_ref", self.v_minority_ref)):
            if not 0.0 <= val <= 1.0:
                raise BaselineError(f"{label} must lie in [0, 1]")


def baseline_record(timelines: Sequence[StepTimeline],
                    key: tuple[str, int, str]) -> BaselineProfile:
    """Distill a healthy run into a :class:`BaselineProfile`.

    Only interior steps contribute (the first step is warm-up and the
    last may be truncated), so the run must span at least three steps.
    """
    steps = {tl.step for tl in timelines}
    if len(steps) < 3:
        raise BaselineError(
            f"baseline needs at least 3 steps to have an interior, got {len(steps)}")
    hists = {
        name: tuple(int(c) for c in latency_histogram([lat for _, lat in samples]))
        for name, samples in issue_latency_samples(timelines).items()
    }
    series = throughput_series(timelines)
    if not series:
        raise BaselineError("no measured steps with throughput samples")
    vals = np.array([series[s] for s in sorted(series)], dtype=np.float64)

    per_sig: dict[tuple, list[float]] = {}
    for inst in flops_instances(timelines):
        if not inst.overlapped:
            per_sig.setdefault(inst.signature, []).append(inst.flops_per_s)
    per_name: dict[str, list[float]] = {}
    for inst in bandwidth_instances(timelines):
        per_name.setdefault(inst.name, []).append(inst.bus_bw)

    vm = void_medians(void_percentages(timelines))
    v_inter = float(np.median([vi for vi, _ in vm.values()])) if vm else 0.0
    v_minority = float(np.median([v for _, v in vm.values()])) if vm else 0.0
    return BaselineProfile(
        key=key,
        issue_latency_hist=hists,
        throughput_mean=float(vals.mean()),
        throughput_std=float(vals.std()),
        flops_ref={sig: float(np.median(v)) for sig, v in sorted(per_sig.items())},
        bandwidth_ref={n: float(np.median(v)) for n, v in sorted(per_name.items())},
        v_inter_ref=v_inter,
        v_minority_ref=v_minority,
    )


# --------------------------------------------------------------------------
# serialization

def encode_profile(profile: BaselineProfile) -> str:
    # flops_ref keys are tuples, which JSON objects cannot carry; store
    # the mapping as a sorted list of [signature, value] pairs instead.
    obj = {
        "key": list(profile.key),
        "issue_latency_hist": {k: list(v) for k, v in profile.issue_latency_hist.items()},
        "throughput_mean": profile.throughput_mean,
        "throughput_std": profile.throughput_std,
        "flops_ref": [[list(sig), val] for sig, val in sorted(profile.flops_ref.items())],
        "bandwidth_ref": dict(profile.bandwidth_ref),
        "v_inter_ref": profile.v_inter_ref,
        "v_minority_ref": profile.v_minority_ref,
    }
    return dumps_plain(obj) + "\n"


def decode_profile(text: str) -> BaselineProfile:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BaselineError(f"bad baseline file: {exc}") from None
    try:
        key = (obj["key"][0], obj["key"][1], obj["key"][2])
        return BaselineProfile(
            key=key,
            issue_latency_hist={k: tuple(v) for k, v in obj["issue_latency_hist"].items()},
            throughput_mean=float(obj["throughput_mean"]),
            throughput_std=float(obj["throughput_std"]),
            flops_ref={tuple(sig): float(val) for sig, val in obj["flops_ref"]},
            bandwidth_ref={k: float(v) for k, v in obj["bandwidth_ref"].items()},
            v_inter_ref=float(obj["v_inter_ref"]),
            v_minority_ref=float(obj["v_minority_ref"]),
        )
    except BaselineError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise BaselineError(f"bad baseline file: {exc}") from None


# --------------------------------------------------------------------------
# store

def store_filename(key: tuple[str, int, str]) -> str:
    """URL-quote the joined key so any tag is a safe flat filename."""
    backbone, world, model = key
    return urllib.parse.quote(f"{backbone}:{world}:{model}", safe="") + BASELINE_SUFFIX


class BaselineStore:
    """Flat directory of profiles, one file per key."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, key: tuple[str, int, str]) -> Path:
        return self.directory / store_filename(key)

    def save(self, profile: BaselineProfile) -> Path:
        path = self.path_for(profile.key)
        self.directory.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(encode_profile(profile).encode("utf-8"))
        os.replace(tmp, path)
        return path

    def load(self, key: tuple[str, int, str]) -> BaselineProfile | None:
        try:
            text = self.path_for(key).read_text("utf-8")
        except FileNotFoundError:
            return None
        return decode_profile(text)
