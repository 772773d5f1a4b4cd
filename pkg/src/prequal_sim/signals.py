"""Server-side load signals: the RIF counter and RIF-tagged latency samples.

Each server replica tracks its requests-in-flight (RIF) count and, for every
finished query, stores the observed latency in a ring buffer keyed by the RIF
value the query saw on arrival.  Probes are answered with the current RIF and
a median latency estimate taken from recent samples at (or near) that RIF.

All timestamps and durations are integer microseconds.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .errors import InvariantError

US_PER_S = 1_000_000


@dataclass(frozen=True)
class ProbeResponse:
    """One server's load report as received by a client."""

    replica: int
    rif: int
    latency_estimate: int  # µs, > 0
    received_at: int  # µs, client clock


class ServerLoadTracker:
    """Per-replica RIF counter plus RIF-bucketed recent-latency samples.

    ``on_query_arrive`` and ``on_query_finish`` each touch O(1) buffer slots;
    the bucket ring buffers are bounded (``bucket_capacity`` samples each), so
    memory stays proportional to the number of distinct RIF values seen.

    Operations on one tracker must be externally serialized (single writer).
    """

    def __init__(
        self,
        bucket_capacity: int = 32,
        default_latency: int = 1_000,
        sample_window: int = US_PER_S,
        min_samples: int = 5,
        max_radius: int = 3,
    ):
        self.rif = 0
        self.bucket_capacity = bucket_capacity
        self.default_latency = default_latency
        self.sample_window = sample_window
        self.min_samples = min_samples
        self.max_radius = max_radius
        # RIF tag -> ring buffer of (finish_time, latency)
        self.buckets: dict[int, deque[tuple[int, int]]] = {}

    def on_query_arrive(self, now: int) -> int:
        """Count an arriving query; returns the post-increment RIF tag.

        The tag includes the arriving query itself, matching what a probe
        issued at this instant would observe.
        """
        self.rif += 1
        return self.rif

    def on_query_finish(self, arrival_rif: int, latency: int, now: int) -> None:
        """Record a finished query's latency under its arrival-time RIF tag."""
        if self.rif <= 0:
            raise InvariantError("on_query_finish: RIF would drop below zero")
        self.rif -= 1
        bucket = self.buckets.get(arrival_rif)
        if bucket is None:
            bucket = deque(maxlen=self.bucket_capacity)
            self.buckets[arrival_rif] = bucket
        bucket.append((now, latency))  # full deque drops the oldest sample

    def on_query_abort(self, now: int) -> None:
        """Remove an in-flight query without recording a latency sample.

        Used when a query is terminated (deadline exceeded) rather than
        finished; the abandoned execution must not feed the latency signal.
        """
        if self.rif <= 0:
            raise InvariantError("on_query_abort: RIF would drop below zero")
        self.rif -= 1

    def answer_probe(self, now: int) -> tuple[int, int]:
        """Return ``(rif, latency_estimate)`` for a probe arriving at ``now``.

        The estimate is the median of samples no older than ``sample_window``
        taken from the bucket at the current RIF, widening the search radius
        by ±1 per step (up to ``max_radius``) until at least ``min_samples``
        are found.  If the radius is exhausted first, all in-window samples
        count; with no samples at all, ``default_latency`` is returned.
        Even-count medians take the lower of the two middle values.
        """
        cutoff = now - self.sample_window
        samples = self._gather(self.rif, cutoff)
        if not samples:
            return self.rif, self.default_latency
        samples.sort()
        return self.rif, samples[(len(samples) - 1) // 2]

    def _gather(self, center: int, cutoff: int) -> list[int]:
        found = self._in_window(center, cutoff)
        for radius in range(1, self.max_radius + 1):
            if len(found) >= self.min_samples:
                return found
            found += self._in_window(center - radius, cutoff)
            found += self._in_window(center + radius, cutoff)
        if len(found) >= self.min_samples:
            return found
        # Radius exhausted: fall back to every in-window sample we hold.
        all_found: list[int] = []
        for bucket in self.buckets.values():
            for finish_time, latency in bucket:
                if finish_time >= cutoff:
                    all_found.append(latency)
        return all_found

    def _in_window(self, tag: int, cutoff: int) -> list[int]:
        bucket = self.buckets.get(tag)
        if not bucket:
            return []
        return [lat for finish, lat in bucket if finish >= cutoff]
