"""Job configuration and anomaly injection specs for the workload simulator."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

ANOMALY_KINDS = frozenset(
    (
        "gc_stall",
        "extra_sync",
        "underclock",
        "network_jitter",
        "dataloader_slow",
        "minority_bloat",
        "layout_misalign",
        "comm_hang",
        "proc_crash",
        "noncomm_hang",
        "none",
    )
)

# Kinds that stop progress instead of slowing it; at most one per run.
HALTING_KINDS = frozenset(("comm_hang", "proc_crash", "noncomm_hang"))

# Kinds that need a victim rank.
_TARGETED = frozenset(("underclock", "comm_hang", "proc_crash", "noncomm_hang"))


class ConfigError(ValueError):
    """Inconsistent job configuration or anomaly spec."""


@dataclass(frozen=True)
class JobConfig:
    """Static description of one simulated training job.

    The parallel layout factors the world as dp x pp x tp with tp fastest:
    rank = (d * pp + p) * tp + t. Model dimensions are global; per-rank
    matmul shapes come out of the tp split. Times are integer microseconds
    and rates are per-second floats.
    """

    world_size: int
    dp: int
    tp: int
    pp: int
    layers: int
    seq_len: int
    hidden: int
    dtype_bytes: int = 2
    steps: int = 20
    seed: int = 0
    ffn_hidden: int = 0              # 0 means 4 * hidden
    global_batch: int = 0            # samples per step; 0 means dp
    gpu_flops_nominal: float = 312e12
    link_bw_nominal: float = 200e9   # bytes/sec per link
    alignment_quantum: int = 128     # bytes; misaligned leading dims pay a penalty
    compute_eff: float = 0.5         # fraction of nominal FLOPS a tuned kernel reaches
    overlap_eff: float = 0.55        # extra multiplier while comm overlaps compute
    minority_gap_us: int = 0         # uninstrumented small-op time per layer phase
    issue_cost_us: int = 5
    dataloader_us: int = 1500
    optimizer_us: int = 2000
    jitter_frac: float = 0.005
    heartbeat_us: int = 1_000_000
    hang_grace_us: int = 30_000_000
    sim_budget_us: int = 3_600_000_000
    backbone: str = "megatron-sim"
    model_tag: str = "llama-sim"

    def __post_init__(self):
        if self.dp * self.tp * self.pp != self.world_size:
            raise ConfigError(
                f"dp*tp*pp = {self.dp * self.tp * self.pp} does not match world_size {self.world_size}"
            )
        for name in ("world_size", "dp", "tp", "pp", "layers", "seq_len", "hidden", "dtype_bytes", "steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gpu_flops_nominal <= 0 or self.link_bw_nominal <= 0:
            raise ConfigError("nominal rates must be positive")
        if not 0 < self.compute_eff <= 1 or not 0 < self.overlap_eff <= 1:
            raise ConfigError("efficiencies must be in (0, 1]")
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")

    @property
    def ffn(self) -> int:
        return self.ffn_hidden or 4 * self.hidden

    @property
    def batch(self) -> int:
        return self.global_batch or self.dp

    def coords(self, rank: int) -> tuple[int, int, int]:
        """(dp index, pp stage, tp index) of a rank."""
        t = rank % self.tp
        p = (rank // self.tp) % self.pp
        d = rank // (self.tp * self.pp)
        return d, p, t

    def baseline_key(self) -> tuple[str, int, str]:
        return (self.backbone, self.world_size, self.model_tag)


@dataclass(frozen=True)
class AnomalySpec:
    """One injected fault.

    ``magnitude`` is kind-specific: stall duration in us for gc_stall,
    sync-every-N-layers for extra_sync, a clock factor in (0,1) for
    underclock, a bandwidth factor in (0,1] for network_jitter, a
    dataloader multiplier for dataloader_slow, a gap-time multiplier for
    minority_bloat, and an efficiency penalty in (0,1) for
    layout_misalign. ``period`` (gc_stall only) is the stall period in
    kernel issues. Halting kinds ignore magnitude.
    """

    kind: str
    target_rank: int | None = None
    target_link: tuple[int, int] | None = None
    magnitude: float = 0.0
    onset_step: int = 0
    period: int = 0

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        if self.onset_step < 0:
            raise ConfigError("onset_step must be >= 0")
        if self.kind in _TARGETED and self.target_rank is None:
            raise ConfigError(f"{self.kind} requires target_rank")
        if self.kind == "underclock" and not 0 < self.magnitude < 1:
            raise ConfigError("underclock magnitude must be in (0, 1)")
        if self.kind == "network_jitter" and not 0 < self.magnitude <= 1:
            raise ConfigError("network_jitter magnitude must be in (0, 1]")
        if self.kind == "layout_misalign" and not 0 < self.magnitude < 1:
            raise ConfigError("layout_misalign magnitude must be in (0, 1)")
        if self.kind == "gc_stall":
            if self.magnitude <= 0:
                raise ConfigError("gc_stall magnitude is the pause in us and must be > 0")
            if self.period < 1:
                raise ConfigError("gc_stall requires period >= 1 (kernel issues between stalls)")
        if self.kind == "extra_sync" and self.magnitude < 1:
            raise ConfigError("extra_sync magnitude is a layer interval and must be >= 1")
        if self.kind in ("dataloader_slow", "minority_bloat") and self.magnitude < 1:
            raise ConfigError(f"{self.kind} magnitude is a multiplier and must be >= 1")


def check_anomalies(config: JobConfig, anomalies: tuple[AnomalySpec, ...]) -> None:
    halting = [a for a in anomalies if a.kind in HALTING_KINDS]
    if len(halting) > 1:
        raise ConfigError("at most one halting anomaly (hang or crash) per run")
    for a in anomalies:
        if a.target_rank is not None and not 0 <= a.target_rank < config.world_size:
            raise ConfigError(f"target_rank {a.target_rank} outside world of {config.world_size}")
        if a.onset_step >= config.steps:
            raise ConfigError(f"onset_step {a.onset_step} beyond configured steps {config.steps}")


def config_from_mapping(items: Mapping[str, str]) -> tuple[JobConfig, tuple[AnomalySpec, ...]]:
    """Build a config (and at most one anomaly) from flat key=value text.

    Keys match JobConfig field names; anomaly fields use an ``anomaly.``
    prefix, e.g. ``anomaly.kind=underclock``.
    """
    cfg_kwargs: dict = {}
    anom_kwargs: dict = {}
    fields = {f.name: f.type for f in JobConfig.__dataclass_fields__.values()}
    for raw_key, raw_val in items.items():
        key = raw_key.strip()
        val = raw_val.strip()
        if key.startswith("anomaly."):
            anom_kwargs[key[len("anomaly."):]] = val
            continue
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = JobConfig.__dataclass_fields__[key]
        typ = current.type
        if typ in ("int", int):
            cfg_kwargs[key] = int(val)
        elif typ in ("float", float):
            cfg_kwargs[key] = float(val)
        else:
            cfg_kwargs[key] = val
    try:
        config = JobConfig(**cfg_kwargs)
    except TypeError as exc:
        raise ConfigError(f"incomplete config: {exc}") from None
    anomalies: tuple[AnomalySpec, ...] = ()
    if anom_kwargs:
        kind = anom_kwargs.pop("kind", None)
        if kind is None:
            raise ConfigError("anomaly.kind is required when anomaly.* keys are present")
        spec_kwargs: dict = {"kind": kind}
        for k, v in anom_kwargs.items():
            if k in ("target_rank", "onset_step", "period"):
                spec_kwargs[k] = int(v)
            elif k == "magnitude":
                spec_kwargs[k] = float(v)
            else:
                raise ConfigError(f"unknown anomaly key {k!r}")
        anomalies = (AnomalySpec(**spec_kwargs),)
    check_anomalies(config, anomalies)
    return config, anomalies
