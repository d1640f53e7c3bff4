"""Canned training jobs with known injected faults.

Every scenario pairs a job configuration with the anomalies to inject,
so one call yields a reproducible run whose ground truth is known in
advance. The slowdown scenarios share an 8-rank dp4 x tp2 transformer
shape; the halting ones use a dp-only ring so every rank joins the same
gradient collectives. Scenario names accept a trailing rank for the
halting family, e.g. ``comm_hang_rank_2``.

Model tags encode the tensor shape, so two scenarios with the same
world size never collide in a baseline store unless they really are the
same model.
"""

from __future__ import annotations

import re
from dataclasses import replace

from .config import AnomalySpec, ConfigError, JobConfig


class ScenarioError(ConfigError):
    pass


def _tagged(cfg: JobConfig) -> JobConfig:
    tag = f"sim-h{cfg.hidden}-f{cfg.ffn}-l{cfg.layers}-s{cfg.seq_len}"
    return replace(cfg, model_tag=tag)


def _transformer(world_size: int = 8, steps: int = 20, seed: int = 0,
                 **overrides) -> JobConfig:
    tp = overrides.pop("tp", 2)
    if world_size % tp:
        raise ScenarioError(f"world_size {world_size} not divisible by tp {tp}")
    kw = dict(
        world_size=world_size, dp=world_size // tp, tp=tp, pp=1,
        layers=8, seq_len=4096, hidden=4096, ffn_hidden=16384,
        steps=steps, seed=seed, minority_gap_us=710,
    )
    kw.update(overrides)
    return _tagged(JobConfig(**kw))


# -- slowdown family ------------------------------------------------------

def _healthy(world_size=8, steps=20, seed=0):
    return _transformer(world_size, steps, seed), ()


def _unhealthy_gc(world_size=8, steps=20, seed=0):
    # 80 ms host pause every 50 kernel issues, phase drifting against the
    # per-step kernel count so the stall is not locked to step structure.
    spec = AnomalySpec("gc_stall", magnitude=80_000.0, onset_step=1, period=50)
    return _transformer(world_size, steps, seed), (spec,)


def _unhealthy_sync(world_size=8, steps=20, seed=0):
    # A device-drain synchronize at every 12th layer boundary: one fixed
    # mid-backward drain per step.
    spec = AnomalySpec("extra_sync", magnitude=12.0, onset_step=1)
    return _transformer(world_size, steps, seed), (spec,)


def _underclock_14pct(world_size=8, steps=20, seed=0):
    # One rank's compute at 0.8x from step 5; collective coupling turns
    # that into a roughly 14% end-to-end throughput drop.
    spec = AnomalySpec("underclock", target_rank=3, magnitude=0.8, onset_step=5)
    return _transformer(world_size, steps, seed), (spec,)


def _layout_misalign(world_size=8, steps=20, seed=0):
    # 33936/4 = 8484 per-rank FFN columns; 8484 * 2 bytes is not a
    # multiple of the 128-byte alignment quantum, so the FFN matmuls run
    # at half efficiency.
    cfg = _transformer(world_size, steps, seed, tp=4, hidden=8192, ffn_hidden=33936)
    spec = AnomalySpec("layout_misalign", magnitude=0.5, onset_step=0)
    return cfg, (spec,)


def _layout_misalign_padded(world_size=8, steps=20, seed=0):
    # Same model padded to 34048 (8512 per rank): aligned, no penalty to
    # trigger, so the injected-fault list is empty.
    cfg = _transformer(world_size, steps, seed, tp=4, hidden=8192, ffn_hidden=34048)
    return cfg, ()


def _dataloader_seq64k(world_size=8, steps=20, seed=0):
    # Long-sequence job whose dataloader cost scales with seq_len^2:
    # (65536/4096)^2 = 256x the healthy 1.5 ms fetch.
    cfg = _transformer(world_size, steps, seed, tp=1, layers=2,
                       seq_len=65536, hidden=64, ffn_hidden=256)
    spec = AnomalySpec("dataloader_slow", magnitude=256.0, onset_step=1)
    return cfg, (spec,)


def _minority_bloat(magnitude):
    def build(world_size=8, steps=20, seed=0):
        spec = AnomalySpec("minority_bloat", magnitude=magnitude, onset_step=1)
        return _transformer(world_size, steps, seed), (spec,)
    return build


def _gdr_down(world_size=8, steps=20, seed=0):
    # All links at 0.2x nominal bandwidth.
    spec = AnomalySpec("network_jitter", magnitude=0.2, onset_step=1)
    return _transformer(world_size, steps, seed), (spec,)


# -- halting family -------------------------------------------------------

_HALT_KIND = {"comm_hang": "comm_hang", "crash": "proc_crash",
              "noncomm_hang": "noncomm_hang"}


def _halting(label: str, rank: int, world_size=8, steps=8, seed=0):
    cfg = _transformer(world_size, steps, seed, tp=1, layers=4)
    if rank >= cfg.world_size:
        raise ScenarioError(f"rank {rank} outside world of {cfg.world_size}")
    spec = AnomalySpec(_HALT_KIND[label], target_rank=rank,
                       onset_step=min(4, steps - 1))
    return cfg, (spec,)


_BUILDERS = {
    "healthy": _healthy,
    "unhealthy_gc": _unhealthy_gc,
    "unhealthy_sync": _unhealthy_sync,
    "underclock_14pct": _underclock_14pct,
    "layout_misalign": _layout_misalign,
    "layout_misalign_padded": _layout_misalign_padded,
    "dataloader_seq64k": _dataloader_seq64k,
    "minority_bloat_pe": _minority_bloat(1.621),
    "minority_bloat_act": _minority_bloat(1.758),
    "minority_bloat_norm": _minority_bloat(3.872),
    "gdr_down": _gdr_down,
}

_RANK_NAME = re.compile(r"^(comm_hang|crash|noncomm_hang)_rank_(\d+)$")


def catalog() -> list[str]:
    """Scenario names, with K standing for a concrete rank number."""
    return sorted(_BUILDERS) + [f"{label}_rank_K" for label in sorted(_HALT_KIND)]


def scenario(name: str, *, world_size: int | None = None,
             steps: int | None = None,
             seed: int | None = None) -> tuple[JobConfig, tuple[AnomalySpec, ...]]:
    """Look up a scenario by name, with optional shape overrides."""
    kw = {}
    if world_size is not None:
        kw["world_size"] = world_size
    if steps is not None:
        kw["steps"] = steps
    if seed is not None:
        kw["seed"] = seed
    m = _RANK_NAME.match(name)
    if m:
        cfg, anomalies = _halting(m.group(1), int(m.group(2)), **kw)
        return cfg, anomalies
    builder = _BUILDERS.get(name)
    if builder is None:
        raise ScenarioError(
            f"unknown scenario {name!r}; known: {', '.join(catalog())}")
    cfg, anomalies = builder(**kw)
    return cfg, tuple(anomalies)
