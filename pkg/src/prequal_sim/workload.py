"""Open-loop query generation and the canned experiment schedules.

Query cost is drawn from Normal(mean, sd) truncated at zero by redraw, so the
realized mean is ``TRUNC_MEAN_FACTOR * work_mean`` when sd == mean.  Step QPS
targets are derived analytically from the desired utilization (load multiple
of the fleet's total CPU allocation) and that realized mean cost.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .config import RunConfig, WorkloadConfig
from .errors import ConfigError
from .signals import US_PER_S

EXPERIMENTS = (
    "load_ramp",
    "selection_rules",
    "probe_rate",
    "rif_quantile",
    "linear_sweep",
)

# E[X | X > 0] for X ~ Normal(mu, mu) is mu * (1 + phi(1) / Phi(1)).
_PHI_1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
_CDF_1 = 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
TRUNC_MEAN_FACTOR = 1.0 + _PHI_1 / _CDF_1


def truncated_normal_mean(mean: float, sd: float) -> float:
    """Mean of Normal(mean, sd) conditioned on being positive."""
    alpha = -mean / sd
    density = math.exp(-0.5 * alpha * alpha) / math.sqrt(2 * math.pi)
    tail = 0.5 * (1.0 - math.erf(alpha / math.sqrt(2.0)))
    return mean + sd * density / tail


def draw_query_work(cfg: WorkloadConfig, rng: random.Random, target_replica: int) -> float:
    """Core-seconds of CPU work for one query bound for ``target_replica``."""
    work = rng.gauss(cfg.work_mean, cfg.sd)
    while work <= 0.0:
        work = rng.gauss(cfg.work_mean, cfg.sd)
    if cfg.slow_even_replicas and target_replica % 2 == 0:
        work *= 2.0
    return work


def expected_query_cost(cfg: WorkloadConfig) -> float:
    """Mean core-seconds per query assuming an even split across replicas."""
    base = truncated_normal_mean(cfg.work_mean, cfg.sd)
    if cfg.slow_even_replicas:
        return base * 1.5  # half the replicas double the drawn work
    return base


def qps_for_load(
    load: float, n_servers: int, allocation: float, workload: WorkloadConfig
) -> float:
    """Aggregate QPS whose expected CPU demand is ``load`` x total allocation."""
    return load * n_servers * allocation / expected_query_cost(workload)


def arrival_gap_us(cfg: WorkloadConfig, rate_per_client: float, rng: random.Random) -> int:
    """Microseconds until a client's next query under the arrival process."""
    if cfg.arrival_process == "poisson":
        gap = rng.expovariate(rate_per_client)
    else:
        gap = 1.0 / rate_per_client
    return max(1, round(gap * US_PER_S))


@dataclass
class Step:
    """One measurement epoch: fixed policy, rate, and tunable settings."""

    step_index: int
    duration_us: int
    policy: str
    qps: float
    param_name: str
    param_value: float
    prequal_overrides: dict = field(default_factory=dict)
    linear_lambda: float | None = None


LOAD_RAMP_MULTIPLIERS = tuple(0.75 * (10.0 / 9.0) ** i for i in range(9))
PROBE_RATE_STEPS = (4.0, 2 * math.sqrt(2), 2.0, math.sqrt(2), 1.0, 1 / math.sqrt(2), 0.5)
RIF_QUANTILE_STEPS = (
    (0.0,)
    + tuple(0.9**10 * (10.0 / 9.0) ** i for i in range(11))  # 0.3487 .. 0.9
    + (0.99, 0.999, 1.0)
)
LINEAR_LAMBDA_STEPS = (
    0.769, 0.785, 0.801, 0.817, 0.834, 0.868, 0.886,
    0.904, 0.922, 0.941, 0.960, 0.980, 1.0,
)
SELECTION_RULE_LOADS = (0.7, 0.9)
SELECTION_RULE_POLICIES = (
    "round_robin",
    "random",
    "wrr",
    "least_loaded",
    "ll_po2c",
    "yarp_po2c",
    "linear",
    "c3",
    "prequal",
)
PROBE_RATE_LOAD = 1.5
RIF_QUANTILE_LOAD = 0.75
LINEAR_SWEEP_LOAD = 0.94


def build_schedule(cfg: RunConfig) -> list[Step]:
    """Expand an experiment name into its concrete step sequence."""
    name = cfg.experiment
    duration = cfg.step_duration_us
    n = cfg.sim.n_servers
    alloc = cfg.sim.machine.allocation

    def rate(load: float) -> float:
        return qps_for_load(load, n, alloc, cfg.workload)

    steps: list[Step] = []
    if name == "load_ramp":
        # Each load level runs the incumbent first, then prequal, so the CSV
        # carries two policy halves per step index.
        for i, load in enumerate(LOAD_RAMP_MULTIPLIERS):
            for policy in ("wrr", "prequal"):
                steps.append(Step(i, duration, policy, rate(load), "load", load))
    elif name == "selection_rules":
        i = 0
        for load in SELECTION_RULE_LOADS:
            for policy in SELECTION_RULE_POLICIES:
                steps.append(Step(i, duration, policy, rate(load), "load", load))
                i += 1
    elif name == "probe_rate":
        for i, r_probe in enumerate(PROBE_RATE_STEPS):
            steps.append(
                Step(
                    i,
                    duration,
                    "prequal",
                    rate(PROBE_RATE_LOAD),
                    "r_probe",
                    r_probe,
                    prequal_overrides={"r_probe": r_probe},
                )
            )
    elif name == "rif_quantile":
        for i, q in enumerate(RIF_QUANTILE_STEPS):
            steps.append(
                Step(
                    i,
                    duration,
                    "prequal",
                    rate(RIF_QUANTILE_LOAD),
                    "q_rif",
                    q,
                    prequal_overrides={"q_rif": q},
                )
            )
    elif name == "linear_sweep":
        for i, lam in enumerate(LINEAR_LAMBDA_STEPS):
            steps.append(
                Step(
                    i,
                    duration,
                    "linear",
                    rate(LINEAR_SWEEP_LOAD),
                    "lambda",
                    lam,
                    linear_lambda=lam,
                )
            )
    else:
        raise ConfigError(f"unknown experiment: {name}")
    if cfg.policy_filter:
        filtered = [s for s in steps if s.policy == cfg.policy_filter]
        if not filtered:
            raise ConfigError(
                f"policy_filter {cfg.policy_filter!r} matches no step in {name}"
            )
        steps = filtered
    return steps


# Per-experiment defaults layered under user overrides.  The machine and
# antagonist environments differ between experiments, mirroring a testbed
# whose background load is whatever the datacenter happens to serve up that
# day; constants were chosen so each experiment exhibits the contrast it is
# meant to demonstrate, and all remain overridable.
EXPERIMENT_PRESETS: dict[str, dict] = {
    "load_ramp": {
        "sim": {
            "n_clients": 50,
            "n_servers": 50,
            "antagonist": {"mean_burst_us": 70 * US_PER_S},
        },
        "workload": {"work_mean": 0.004},
    },
    "selection_rules": {
        "sim": {
            "n_clients": 100,
            "n_servers": 100,
            "machine": {"hobble_penalty": 0.55},
            "antagonist": {"mean_burst_us": 25 * US_PER_S},
        },
        "prequal": {"q_rif": 0.75},
    },
    "probe_rate": {
        "sim": {"n_clients": 50, "n_servers": 50},
        "prequal": {"r_remove": 0.25},
    },
    "rif_quantile": {
        "sim": {"n_clients": 50, "n_servers": 50},
        "workload": {"slow_even_replicas": True},
    },
    "linear_sweep": {
        "sim": {"n_clients": 50, "n_servers": 50},
        "workload": {"slow_even_replicas": True},
    },
}
