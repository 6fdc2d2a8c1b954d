"""Trace-driven simulator for time-window based all-resource VM oversubscription."""

__version__ = "0.1.0"

from .resources import Granularity, Resource, ResourceVector
from .trace import ServerSpec, TraceSet, UtilizationSeries, VMRecord, parse_trace, write_trace
from .synth import GeneratorConfig, GroupSpec, TemplateSpec, generate_synthetic_trace
from .predict import GroupModel, TimeWindowProfile, predict_profile, train_group_model
from .hybrid import HybridAllocation, ServerState, build_allocation, server_pools
from .scheduler import PlacementLog, Policy, capacity_gain, schedule
from .simulate import ContentionConfig, SimReport, allocation_error, run_simulation

__all__ = [
    "Granularity", "Resource", "ResourceVector",
    "ServerSpec", "TraceSet", "UtilizationSeries", "VMRecord",
    "parse_trace", "write_trace",
    "GeneratorConfig", "GroupSpec", "TemplateSpec", "generate_synthetic_trace",
    "GroupModel", "TimeWindowProfile", "predict_profile", "train_group_model",
    "HybridAllocation", "ServerState", "build_allocation", "server_pools",
    "PlacementLog", "Policy", "capacity_gain", "schedule",
    "ContentionConfig", "SimReport", "allocation_error", "run_simulation",
    "__version__",
]
