"""Replica-selection rules: the hot-cold lexicographic rule and baselines.

Pool-backed rules (prequal, linear, c3) pick among the replicas currently
represented in the client's probe pool; the remaining rules use client-local
state or periodically polled server RIF.  Every rule is a deterministic
function of its inputs and the RNG stream position.
"""
from __future__ import annotations

import random
from bisect import bisect_right
from dataclasses import dataclass, field

from .errors import InvariantError
from .probe_pool import PoolEntry, PrequalConfig, ProbePool
from .signals import ProbeResponse

POLICY_NAMES = (
    "random",
    "round_robin",
    "wrr",
    "least_loaded",
    "ll_po2c",
    "yarp_po2c",
    "linear",
    "c3",
    "prequal",
)

# Pool-backed policies share the asynchronous probing machinery.
POOL_POLICIES = ("linear", "c3", "prequal")


def hcl_select(
    pool: ProbePool, theta: float, cfg: PrequalConfig, rng: random.Random
) -> int:
    """Hot-cold lexicographic selection over the probe pool.

    Entries with RIF >= ``theta`` are hot.  If every entry is hot, the one
    with the lowest RIF wins (ties: lower latency, then lower replica id);
    otherwise the cold entry with the lowest latency wins (ties: lower RIF,
    then lower replica id).  When pool occupancy is below the configured
    minimum, selection falls back to a uniformly random replica.
    """
    if len(pool.entries) < cfg.min_occupancy:
        return rng.randrange(cfg.n)
    entries = pool.entries.values()
    cold = [e for e in entries if e.effective_rif < theta]
    if cold:
        best = min(cold, key=_cold_key)
    else:
        best = min(entries, key=_hot_key)
    return best.response.replica


def _hot_key(e: PoolEntry):
    return (e.effective_rif, e.response.latency_estimate, e.response.replica)


def _cold_key(e: PoolEntry):
    return (e.response.latency_estimate, e.effective_rif, e.response.replica)


def sync_select(
    d: int,
    needed: int,
    responses: list[ProbeResponse],
    theta: float,
    rng: random.Random,
) -> int:
    """Probe-then-pick selection over freshly gathered responses (no pool).

    The caller issues ``d`` probes per query and waits for ``needed``
    responses (``d - 1`` by default); this applies the hot-cold comparison to
    exactly the responses received.  Too few responses by the probe timeout
    is the caller's fallback path (uniform random), not handled here.
    """
    if d < 2:
        raise InvariantError("sync mode requires d >= 2 probes")
    if len(responses) < needed:
        raise InvariantError("sync_select called with fewer responses than needed")
    cold = [r for r in responses if r.rif < theta]
    if cold:
        best = min(cold, key=lambda r: (r.latency_estimate, r.rif, r.replica))
    else:
        best = min(responses, key=lambda r: (r.rif, r.latency_estimate, r.replica))
    return best.replica


def linear_score(latency: float, rif: int, lam: float, alpha: float) -> float:
    """Convex combination of latency and scaled RIF (both in µs units).

    ``lam = 0`` is latency-only control, ``lam = 1`` RIF-only; ``alpha``
    converts one request in flight into latency units.
    """
    return (1.0 - lam) * latency + lam * alpha * rif


@dataclass
class C3State:
    """Per-client EWMA state for the cubic replica-scoring rule."""

    n_clients: int
    smoothing: float = 0.1
    response_time: dict[int, float] = field(default_factory=dict)  # client-local R
    service_time: dict[int, float] = field(default_factory=dict)  # server-local mu^-1
    queue_size: dict[int, float] = field(default_factory=dict)  # server-local RIF EWMA

    def observe_probe(self, replica: int, rif: int, latency_estimate: int) -> None:
        self._update(self.service_time, replica, float(latency_estimate))
        self._update(self.queue_size, replica, float(rif))

    def observe_response(self, replica: int, response_time: float) -> None:
        self._update(self.response_time, replica, response_time)

    def _update(self, ewma: dict[int, float], replica: int, value: float) -> None:
        prev = ewma.get(replica)
        if prev is None:
            ewma[replica] = value  # initialize to the first observation
        else:
            ewma[replica] = prev + self.smoothing * (value - prev)


def c3_score(state: "ClientPolicyState", replica: int) -> float:
    """Cubic queue-penalty score; lower is better.

    The replica's queue estimate combines the client's own outstanding
    queries (scaled by the client count) with the smoothed server-reported
    RIF, and enters the score cubed so queue growth dominates quickly.
    """
    c3 = state.c3
    os_rif = state.client_rif.get(replica, 0)
    q_hat = 1.0 + os_rif * c3.n_clients + c3.queue_size.get(replica, 0.0)
    mu_inv = c3.service_time.get(replica, 0.0)
    r = c3.response_time.get(replica, mu_inv)
    return (r - mu_inv) + q_hat**3 * mu_inv


@dataclass
class WrrState:
    """Weights shared by all clients of one weighted-round-robin job."""

    weights: list[float]
    cumulative: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.rebuild()

    def rebuild(self) -> None:
        self.cumulative = []
        total = 0.0
        for w in self.weights:
            total += w
            self.cumulative.append(total)

    def sample(self, rng: random.Random) -> int:
        total = self.cumulative[-1]
        idx = bisect_right(self.cumulative, rng.random() * total)
        return min(idx, len(self.cumulative) - 1)


@dataclass
class YarpState:
    """Last-polled server RIF per replica for the polled power-of-two rule."""

    last_rif: list[int]


@dataclass
class ClientPolicyState:
    """Everything one client needs to run its configured selection rule."""

    policy: str
    n_replicas: int
    last_chosen: int = 0
    client_rif: dict[int, int] = field(default_factory=dict)
    wrr: WrrState | None = None
    yarp: YarpState | None = None
    c3: C3State | None = None
    linear_lambda: float = 0.5
    linear_alpha: float = 75_000.0  # µs per request in flight


def baseline_select(
    state: ClientPolicyState, available: list[int], rng: random.Random
) -> int:
    """Dispatch for the non-pool selection rules.

    ``available`` must be non-empty and sorted ascending.  Power-of-two rules
    break ties in favor of the first sampled candidate, which preserves
    uniformity across replica ids; least-loaded breaks ties in favor of the
    replica nearest the most recently chosen one in cyclic order.
    """
    policy = state.policy
    if policy == "random":
        choice = available[rng.randrange(len(available))]
    elif policy == "round_robin":
        choice = _cyclic_next(state.last_chosen, available)
    elif policy == "wrr":
        choice = state.wrr.sample(rng)
    elif policy == "least_loaded":
        rifs = state.client_rif
        lowest = min(rifs.get(r, 0) for r in available)
        tied = [r for r in available if rifs.get(r, 0) == lowest]
        choice = _cyclic_next(state.last_chosen, tied)
    elif policy == "ll_po2c":
        a, b = rng.sample(available, 2)
        choice = b if state.client_rif.get(b, 0) < state.client_rif.get(a, 0) else a
    elif policy == "yarp_po2c":
        a, b = rng.sample(available, 2)
        polled = state.yarp.last_rif
        choice = b if polled[b] < polled[a] else a
    else:
        raise InvariantError(f"baseline_select does not handle policy {policy!r}")
    state.last_chosen = choice
    return choice


def _cyclic_next(last: int, candidates: list[int]) -> int:
    # First candidate strictly after `last` in cyclic id order, else wrap.
    for replica in candidates:
        if replica > last:
            return replica
    return candidates[0]


def pool_select(
    state: ClientPolicyState,
    pool: ProbePool,
    cfg: PrequalConfig,
    theta: float,
    rng: random.Random,
) -> int:
    """Selection for the pool-backed policies (prequal, linear, c3)."""
    if state.policy == "prequal":
        choice = hcl_select(pool, theta, cfg, rng)
    else:
        if len(pool.entries) < cfg.min_occupancy:
            choice = rng.randrange(cfg.n)
        elif state.policy == "linear":
            choice = min(
                pool.entries.values(),
                key=lambda e: (
                    linear_score(
                        e.response.latency_estimate,
                        e.effective_rif,
                        state.linear_lambda,
                        state.linear_alpha,
                    ),
                    e.response.replica,
                ),
            ).response.replica
        elif state.policy == "c3":
            choice = min(
                pool.entries, key=lambda replica: (c3_score(state, replica), replica)
            )
        else:
            raise InvariantError(f"pool_select does not handle policy {state.policy!r}")
    state.last_chosen = choice
    return choice
