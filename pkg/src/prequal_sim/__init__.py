"""Prequal load balancing policies and a deterministic testbed simulator."""

from .config import (
    AntagonistConfig,
    MachineConfig,
    PrequalSettings,
    RunConfig,
    SimConfig,
    WorkloadConfig,
)
from .errors import ConfigError, InvariantError
from .probe_pool import PoolEntry, PrequalConfig, ProbePool, compute_reuse_budget
from .selection import (
    POLICY_NAMES,
    C3State,
    ClientPolicyState,
    baseline_select,
    c3_score,
    hcl_select,
    linear_score,
    pool_select,
    sync_select,
)
from .signals import ProbeResponse, ServerLoadTracker
from .sim_engine import Simulation, replica_service_rate, simulate_run
from .workload import EXPERIMENTS, build_schedule, draw_query_work

__version__ = "0.1.0"

__all__ = [
    "AntagonistConfig",
    "C3State",
    "ClientPolicyState",
    "ConfigError",
    "EXPERIMENTS",
    "InvariantError",
    "MachineConfig",
    "POLICY_NAMES",
    "PoolEntry",
    "PrequalConfig",
    "PrequalSettings",
    "ProbePool",
    "ProbeResponse",
    "RunConfig",
    "ServerLoadTracker",
    "SimConfig",
    "Simulation",
    "WorkloadConfig",
    "baseline_select",
    "build_schedule",
    "c3_score",
    "compute_reuse_budget",
    "draw_query_work",
    "hcl_select",
    "linear_score",
    "pool_select",
    "replica_service_rate",
    "simulate_run",
    "sync_select",
]
