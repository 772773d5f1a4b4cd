"""Client-side probe pool: reuse budgets, aging, and worst/oldest removal.

The pool holds at most one probe response per replica, caps its size, expires
entries past an age limit, and removes entries at a configurable rate per
query, alternating between the oldest entry and the one that looks worst
under the same hot/cold ranking used for replica selection (reversed).
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .errors import ConfigError
from .signals import US_PER_S, ProbeResponse

# Reuse budget when probe income does not exceed removal outgo (the budget
# formula's denominator is non-positive); see PrequalConfig.reuse_cap.
DEFAULT_REUSE_CAP = 64.0


@dataclass
class PrequalConfig:
    """Tunables for probing, pool maintenance, and hot/cold selection."""

    n: int  # number of server replicas
    r_probe: float = 3.0  # probes issued per query
    r_remove: float = 1.0  # rate-driven removals per query
    delta: float = 1.0  # pool drift rate in the reuse-budget formula
    m: int = 16  # max pool size
    q_rif: float = 2 ** -0.25  # RIF quantile separating hot from cold
    age_limit: int = US_PER_S  # µs before a pool entry expires
    min_occupancy: int = 2  # below this, selection falls back to random
    idle_probe_interval: int | None = None  # µs; None disables idle probing
    rif_window: int = 128  # probe responses kept for the RIF distribution
    reuse_cap: float = DEFAULT_REUSE_CAP

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.r_probe > 0:
            raise ConfigError("r_probe must be > 0")
        if self.r_remove < 0:
            raise ConfigError("r_remove must be >= 0")
        if not 0.0 <= self.q_rif <= 1.0:
            raise ConfigError("q_rif must be within [0, 1]")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.delta <= 0:
            raise ConfigError("delta must be > 0")
        if self.age_limit <= 0:
            raise ConfigError("age_limit must be > 0")
        if self.rif_window < 1:
            raise ConfigError("rif_window must be >= 1")


def compute_reuse_budget(cfg: PrequalConfig) -> float:
    """Per-probe reuse budget balancing probe income against removal outgo.

    Returns ``max(1, (1 + delta) / ((1 - m/n) * r_probe - r_remove))``.  A
    non-positive denominator means probes are consumed faster than they
    arrive no matter how long they live; the budget is then capped at
    ``cfg.reuse_cap`` so scarce probes are stretched rather than discarded.
    """
    denom = (1.0 - cfg.m / cfg.n) * cfg.r_probe - cfg.r_remove
    if denom <= 0:
        return cfg.reuse_cap
    return max(1.0, (1.0 + cfg.delta) / denom)


@dataclass
class PoolEntry:
    response: ProbeResponse
    effective_rif: int  # response RIF plus client-side increments
    uses_remaining: int


class ProbePool:
    """Bounded pool of probe responses, at most one per replica."""

    def __init__(self, cfg: PrequalConfig):
        self.entries: dict[int, PoolEntry] = {}
        self.removal_toggle = "oldest"  # alternates with "worst"
        self.probe_accumulator = 0.0
        self.removal_accumulator = 0.0
        self.rif_history: deque[int] = deque(maxlen=cfg.rif_window)

    def __len__(self) -> int:
        return len(self.entries)

    # -- probing -----------------------------------------------------------

    def probes_for_query(self, cfg: PrequalConfig) -> int:
        """Number of probes to issue for one query (deterministic rounding).

        Fractional rates accumulate so the long-run average equals
        ``cfg.r_probe`` exactly; any prefix differs by less than one probe.
        """
        self.probe_accumulator += cfg.r_probe
        count = int(self.probe_accumulator)
        self.probe_accumulator -= count
        return count

    def pick_probe_targets(
        self, k: int, replicas: list[int], rng: random.Random
    ) -> list[int]:
        """Sample ``k`` distinct probe targets uniformly at random."""
        if k >= len(replicas):
            return rng.sample(replicas, len(replicas))
        return rng.sample(replicas, k)

    def add_probe(
        self,
        response: ProbeResponse,
        cfg: PrequalConfig,
        budget: float,
        rng: random.Random,
    ) -> None:
        """Insert a probe response, replacing any entry for the same replica.

        The reuse budget is randomly rounded to floor or ceiling, preserving
        its expectation.  If the pool would exceed its size cap, the entry
        with the oldest receipt time is evicted first.
        """
        uses = int(math.floor(budget))
        if rng.random() < budget - uses:
            uses += 1
        self.rif_history.append(response.rif)
        if response.replica not in self.entries and len(self.entries) >= cfg.m:
            oldest = min(
                self.entries.values(),
                key=lambda e: (e.response.received_at, e.response.replica),
            )
            del self.entries[oldest.response.replica]
        self.entries[response.replica] = PoolEntry(response, response.rif, uses)

    # -- maintenance -------------------------------------------------------

    def expire_and_maintain(self, now: int, cfg: PrequalConfig) -> None:
        """Drop every entry strictly older than the age limit."""
        stale = [
            replica
            for replica, entry in self.entries.items()
            if now - entry.response.received_at > cfg.age_limit
        ]
        for replica in stale:
            del self.entries[replica]

    def rif_threshold(self, cfg: PrequalConfig) -> float:
        """Hot/cold RIF threshold: a nearest-rank quantile of recent probe RIFs.

        ``q_rif = 1`` yields +inf (every replica classified cold); an empty
        history yields 0.  Otherwise the threshold is the order statistic at
        index ``max(1, ceil(q_rif * count))`` of the sorted window.
        """
        if cfg.q_rif >= 1.0:
            return math.inf
        if not self.rif_history:
            return 0
        ordered = sorted(self.rif_history)
        index = max(1, math.ceil(cfg.q_rif * len(ordered)))
        return ordered[index - 1]

    def on_query_sent(
        self,
        chosen: int,
        cfg: PrequalConfig,
        rng: random.Random,
        theta: float | None = None,
    ) -> None:
        """Post-dispatch bookkeeping for a query just sent to ``chosen``.

        The chosen replica's entry (if pooled) has its RIF incremented to
        reflect the query we just added, and one reuse is consumed; entries
        with no uses left are dropped.  Rate-driven removals then run,
        alternating between evicting the oldest entry and the worst entry
        under the reversed hot/cold ranking at the current RIF threshold.
        """
        entry = self.entries.get(chosen)
        if entry is not None:
            entry.effective_rif += 1
            entry.uses_remaining -= 1
            if entry.uses_remaining <= 0:
                del self.entries[chosen]
        self.removal_accumulator += cfg.r_remove
        removals = int(self.removal_accumulator)
        self.removal_accumulator -= removals
        for _ in range(removals):
            if not self.entries:
                # The toggle still advances so the cadence survives depletion.
                self._flip_toggle()
                continue
            if self.removal_toggle == "oldest":
                victim = min(
                    self.entries.values(),
                    key=lambda e: (e.response.received_at, e.response.replica),
                )
            else:
                if theta is None:
                    theta = self.rif_threshold(cfg)
                victim = self._worst_entry(theta)
            del self.entries[victim.response.replica]
            self._flip_toggle()

    def _flip_toggle(self) -> None:
        self.removal_toggle = "worst" if self.removal_toggle == "oldest" else "oldest"

    def _worst_entry(self, theta: float) -> PoolEntry:
        # Reversed selection ranking: a hot entry with the highest RIF if any
        # entry is hot, else the cold entry with the highest latency.
        hot = [e for e in self.entries.values() if e.effective_rif >= theta]
        if hot:
            return min(
                hot,
                key=lambda e: (
                    -e.effective_rif,
                    -e.response.latency_estimate,
                    e.response.replica,
                ),
            )
        return min(
            self.entries.values(),
            key=lambda e: (
                -e.response.latency_estimate,
                -e.effective_rif,
                e.response.replica,
            ),
        )
