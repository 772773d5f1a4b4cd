"""Run configuration: dataclasses, JSON loading, and strict key validation."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .signals import US_PER_S


@dataclass
class MachineConfig:
    capacity: float = 1.0  # cores
    allocation: float = 0.1  # cores guaranteed to the server replica
    # Service multiplier applied to the allocation while the machine is
    # saturated; 1.0 means isolation caps the replica at exactly its
    # allocation, lower values model harsher throttling.
    hobble_penalty: float = 1.0

    def validate(self) -> None:
        if self.capacity <= 0:
            raise ConfigError("machine.capacity must be > 0")
        if not 0 < self.allocation <= self.capacity:
            raise ConfigError("machine.allocation must be in (0, capacity]")
        if not 0 < self.hobble_penalty <= 1.0:
            raise ConfigError("machine.hobble_penalty must be in (0, 1]")


@dataclass
class AntagonistConfig:
    """Synthetic antagonist demand: per-machine base plus sticky burst episodes.

    Demand updates every ``step_us``.  A machine's base draw is fixed for the
    run; burst episodes start/stop via a two-state chain whose stationary
    burst probability is ``burst_fraction`` and whose mean episode length is
    ``mean_burst_us``.  The burst level is drawn once per episode, uniform on
    [0, capacity - base - allocation + headroom], so some machines saturate
    for whole episodes while most keep spare capacity.
    """

    step_us: int = 100_000
    base_low: float = 0.2
    base_high: float = 0.7
    burst_fraction: float = 0.2
    mean_burst_us: int = 20 * US_PER_S
    headroom: float = 0.1
    cap_epsilon: float = 0.001

    def validate(self) -> None:
        if self.step_us <= 0:
            raise ConfigError("antagonist.step_us must be > 0")
        if not 0 <= self.burst_fraction < 1:
            raise ConfigError("antagonist.burst_fraction must be in [0, 1)")
        if self.base_low > self.base_high:
            raise ConfigError("antagonist.base_low must be <= base_high")
        if self.mean_burst_us < self.step_us:
            raise ConfigError("antagonist.mean_burst_us must be >= step_us")


@dataclass
class SimConfig:
    n_clients: int = 100
    n_servers: int = 100
    machine: MachineConfig = field(default_factory=MachineConfig)
    antagonist: AntagonistConfig = field(default_factory=AntagonistConfig)
    wire_min_us: int = 200
    wire_max_us: int = 500
    probe_timeout_us: int = 3_000
    probe_cpu_cost: float = 10e-6  # core-seconds consumed per probe answered
    query_deadline_us: int = 5 * US_PER_S
    threads_cap: int = 4  # per-replica parallelism: CPU demand is min(k, cap) cores
    metric_tick_us: int = 100_000
    yarp_poll_us: int = 500_000
    wrr_recompute_us: int = 10 * US_PER_S
    wrr_window_us: int = 30 * US_PER_S
    wrr_min_util: float = 0.01

    def validate(self) -> None:
        if self.n_clients < 1:
            raise ConfigError("sim.n_clients must be >= 1")
        if self.n_servers < 1:
            raise ConfigError("sim.n_servers must be >= 1")
        if self.wire_min_us > self.wire_max_us:
            raise ConfigError("sim.wire_min_us must be <= wire_max_us")
        if self.probe_cpu_cost < 0:
            raise ConfigError("sim.probe_cpu_cost must be >= 0")
        if self.threads_cap < 1:
            raise ConfigError("sim.threads_cap must be >= 1")
        self.machine.validate()
        self.antagonist.validate()


@dataclass
class WorkloadConfig:
    work_mean: float = 0.010  # core-seconds per query before truncation
    work_sd: float | None = None  # defaults to work_mean
    slow_even_replicas: bool = False  # 2x work inflation on even replica ids
    arrival_process: str = "poisson"  # or "uniform" (deterministic spacing)

    @property
    def sd(self) -> float:
        return self.work_mean if self.work_sd is None else self.work_sd

    def validate(self) -> None:
        if self.work_mean <= 0:
            raise ConfigError("workload.work_mean must be > 0")
        if self.arrival_process not in ("poisson", "uniform"):
            raise ConfigError("workload.arrival_process must be poisson or uniform")


@dataclass
class PrequalSettings:
    """PrequalConfig fields that make sense as experiment-level overrides."""

    r_probe: float = 3.0
    r_remove: float = 1.0
    delta: float = 1.0
    m: int = 16
    q_rif: float = 2 ** -0.25
    age_limit_us: int = US_PER_S
    min_occupancy: int = 2
    idle_probe_interval_us: int | None = None
    rif_window: int = 128

    def validate(self) -> None:
        if not self.r_probe > 0:
            raise ConfigError("prequal.r_probe must be > 0")
        if self.r_remove < 0:
            raise ConfigError("prequal.r_remove must be >= 0")
        if not 0.0 <= self.q_rif <= 1.0:
            raise ConfigError("prequal.q_rif must be within [0, 1]")
        if self.m < 1:
            raise ConfigError("prequal.m must be >= 1")


@dataclass
class RunConfig:
    """A fully resolved experiment invocation."""

    experiment: str
    master_seed: int = 1
    n_runs: int = 1
    out_dir: str = "out"
    step_duration_us: int = 120 * US_PER_S
    warmup_us: int = 20 * US_PER_S
    policy_filter: str | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    prequal: PrequalSettings = field(default_factory=PrequalSettings)

    def validate(self) -> None:
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.warmup_us >= self.step_duration_us:
            raise ConfigError("warmup_us must be < step_duration_us")
        self.sim.validate()
        self.workload.validate()
        self.prequal.validate()

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


_NESTED = {
    "sim": SimConfig,
    "workload": WorkloadConfig,
    "prequal": PrequalSettings,
    "machine": MachineConfig,
    "antagonist": AntagonistConfig,
}


def apply_overrides(obj, overrides: dict, path: str = "") -> None:
    """Apply a nested dict of overrides onto dataclass instances in place.

    Unknown keys are rejected with the full dotted path in the message.
    """
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(value, dict) and key in _NESTED:
            apply_overrides(getattr(obj, key), value, where)
        else:
            setattr(obj, key, value)


def load_run_config(path: str | Path, experiments: tuple[str, ...]) -> RunConfig:
    """Parse a JSON config file into a validated RunConfig."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    experiment = raw.pop("experiment", None)
    if experiment is None:
        raise ConfigError("missing config key: experiment")
    if experiment not in experiments:
        raise ConfigError(
            f"unknown experiment: {experiment} (expected one of {', '.join(experiments)})"
        )
    cfg = RunConfig(experiment=experiment)
    apply_overrides(cfg, raw)
    cfg.validate()
    return cfg
