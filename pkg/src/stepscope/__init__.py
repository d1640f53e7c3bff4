"""stepscope: trace-based diagnostics for distributed training runs.

The package splits into a deterministic workload simulator (``config``,
``schedule``, ``simulate``, ``scenarios``, ``ring``) and the diagnostics
that consume its traces (``trace``, ``metrics``, ``baseline``, ``hang``,
``engine``, ``reporting``). The ``stepscope`` console script in ``cli``
ties both into file-based runs.
"""

from .baseline import BaselineProfile, BaselineStore, baseline_record
from .config import AnomalySpec, JobConfig
from .engine import DiagnosisResult, diagnose
from .metrics import Thresholds
from .reporting import AnomalyReport
from .ring import RingConfig, RingSnapshot, ring_diagnose
from .scenarios import catalog, scenario
from .simulate import SimOutput, simulate
from .trace import StepTimeline, TraceRecord, read_trace, validate_trace

__version__ = "0.1.0"

__all__ = [
    "AnomalyReport",
    "AnomalySpec",
    "BaselineProfile",
    "BaselineStore",
    "DiagnosisResult",
    "JobConfig",
    "RingConfig",
    "RingSnapshot",
    "SimOutput",
    "StepTimeline",
    "Thresholds",
    "TraceRecord",
    "__version__",
    "baseline_record",
    "catalog",
    "diagnose",
    "read_trace",
    "ring_diagnose",
    "scenario",
    "simulate",
    "validate_trace",
]
