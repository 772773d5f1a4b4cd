"""Server-side load signal tests: RIF counting and median latency estimates."""
from __future__ import annotations

import random

import pytest

from prequal_sim.errors import InvariantError
from prequal_sim.signals import US_PER_S, ServerLoadTracker

MS = 1_000


def brute_force_estimate(tracker: ServerLoadTracker, now: int) -> int:
    """Independent re-derivation of the probe latency estimate.

    Collects in-window samples by expanding the bucket radius around the
    current RIF until at least ``min_samples`` are found, then takes the
    lower-middle median by explicit sort-and-select.
    """
    cutoff = now - tracker.sample_window
    center = tracker.rif

    def in_window(tag):
        return [l for (t, l) in tracker.buckets.get(tag, []) if t >= cutoff]

    chosen: list[int] = []
    for radius in range(0, tracker.max_radius + 1):
        if radius == 0:
            chosen += in_window(center)
        else:
            chosen += in_window(center - radius) + in_window(center + radius)
        if len(chosen) >= tracker.min_samples:
            break
    if len(chosen) < tracker.min_samples:
        chosen = [
            l
            for bucket in tracker.buckets.values()
            for (t, l) in bucket
            if t >= cutoff
        ]
    if not chosen:
        return tracker.default_latency
    chosen.sort()
    return chosen[(len(chosen) - 1) // 2]


def test_first_arrival_tags_one():
    tracker = ServerLoadTracker()
    assert tracker.on_query_arrive(now=0) == 1


def test_arrival_increments_existing_count():
    tracker = ServerLoadTracker()
    for _ in range(4):
        tracker.on_query_arrive(now=0)
    assert tracker.on_query_arrive(now=1) == 5


def test_arrive_finish_arrive_replay():
    # 3 arrivals, 1 finish, then 1 arrival lands back at RIF 3.
    tracker = ServerLoadTracker()
    tags = [tracker.on_query_arrive(now=t) for t in range(3)]
    tracker.on_query_finish(tags[0], latency=10 * MS, now=100)
    assert tracker.on_query_arrive(now=200) == 3


def test_finish_records_sample_under_arrival_tag():
    tracker = ServerLoadTracker()
    tag = tracker.on_query_arrive(now=0)
    tracker.on_query_finish(tag, latency=20 * MS, now=50)
    assert tracker.rif == 0
    assert list(tracker.buckets[1]) == [(50, 20 * MS)]


def test_full_bucket_evicts_oldest():
    tracker = ServerLoadTracker(bucket_capacity=5)
    for i in range(6):
        # Raise RIF to 3, finish one query tagged 3, then drain back to zero.
        for _ in range(3):
            tracker.on_query_arrive(now=0)
        tracker.on_query_finish(3, latency=(i + 1) * MS, now=i)
        tracker.on_query_abort(now=i)
        tracker.on_query_abort(now=i)
    bucket = tracker.buckets[3]
    assert len(bucket) == 5
    assert bucket[0] == (1, 2 * MS)  # the first sample was evicted


def test_two_arrivals_then_first_finishes():
    tracker = ServerLoadTracker()
    first = tracker.on_query_arrive(now=0)
    tracker.on_query_arrive(now=1)
    tracker.on_query_finish(first, latency=40 * MS, now=60)
    assert tracker.rif == 1
    assert list(tracker.buckets[first]) == [(60, 40 * MS)]


def test_finish_below_zero_fails_fast():
    tracker = ServerLoadTracker()
    with pytest.raises(InvariantError):
        tracker.on_query_finish(1, latency=MS, now=0)


def test_probe_on_empty_tracker_returns_default():
    tracker = ServerLoadTracker(default_latency=1 * MS)
    assert tracker.answer_probe(now=0) == (0, 1 * MS)


def test_probe_median_at_current_rif():
    # Three in-window samples at tag 2, probed while RIF is 2: median wins.
    tracker = ServerLoadTracker()
    now = 1000
    for latency in (10 * MS, 30 * MS, 20 * MS):
        tracker.on_query_arrive(now=0)
        tracker.on_query_arrive(now=0)
        tracker.on_query_finish(2, latency=latency, now=now)
        tracker.on_query_abort(now=now)
    tracker.on_query_arrive(now=now)
    tracker.on_query_arrive(now=now)
    assert tracker.rif == 2
    assert tracker.answer_probe(now=now) == (2, 20 * MS)


def test_probe_expands_radius_for_samples():
    # Samples only at RIF 4; probing at RIF 5 must reach them and report
    # their median.
    tracker = ServerLoadTracker()
    now = 500
    for latency in (50 * MS, 60 * MS, 70 * MS, 80 * MS, 90 * MS):
        for _ in range(4):
            tracker.on_query_arrive(now=0)
        tracker.on_query_finish(4, latency=latency, now=now)
        for _ in range(3):
            tracker.on_query_abort(now=now)
    for _ in range(5):
        tracker.on_query_arrive(now=now)
    assert tracker.rif == 5
    assert tracker.answer_probe(now=now) == (5, 70 * MS)


def test_samples_outside_window_never_contribute():
    tracker = ServerLoadTracker(sample_window=US_PER_S)
    tag = tracker.on_query_arrive(now=0)
    tracker.on_query_finish(tag, latency=99 * MS, now=0)
    # 1.5 s later the lone sample is stale; the default must come back.
    rif, estimate = tracker.answer_probe(now=int(1.5 * US_PER_S))
    assert estimate == tracker.default_latency


def test_rif_conservation_over_random_interleavings():
    rng = random.Random(42)
    for _ in range(200):
        tracker = ServerLoadTracker()
        open_tags: list[int] = []
        n = rng.randrange(1, 40)
        arrivals = finishes = 0
        while finishes < n:
            if arrivals < n and (not open_tags or rng.random() < 0.5):
                open_tags.append(tracker.on_query_arrive(now=arrivals))
                arrivals += 1
            else:
                tag = open_tags.pop(rng.randrange(len(open_tags)))
                tracker.on_query_finish(tag, latency=MS, now=finishes)
                finishes += 1
            assert tracker.rif >= 0
            assert tracker.rif == len(open_tags)
        assert tracker.rif == 0


def test_median_matches_brute_force_oracle():
    rng = random.Random(7)
    for _ in range(300):
        tracker = ServerLoadTracker(bucket_capacity=8)
        now = US_PER_S * 2
        total = rng.randrange(0, 50)
        for _ in range(total):
            tag = rng.randrange(1, 8)
            for _ in range(tag):
                tracker.on_query_arrive(now=0)
            finish_time = rng.randrange(0, now + 1)
            tracker.on_query_finish(tag, latency=rng.randrange(1, 200) * MS,
                                    now=finish_time)
            for _ in range(tag - 1):
                tracker.on_query_abort(now=0)
        for _ in range(rng.randrange(0, 6)):
            tracker.on_query_arrive(now=now)
        _, estimate = tracker.answer_probe(now=now)
        assert estimate == brute_force_estimate(tracker, now)


class _CountingDeque:
    """Deque wrapper counting slot writes, for the O(1) update-cost check."""

    def __init__(self, inner):
        self.inner = inner
        self.writes = 0

    def append(self, item):
        self.writes += 1
        self.inner.append(item)

    def __iter__(self):
        return iter(self.inner)

    def __len__(self):
        return len(self.inner)


def test_update_cost_constant_per_query():
    # The number of slot writes per arrive/finish pair must not grow with
    # the amount of history already stored.
    costs = []
    for history in (10, 1000):
        tracker = ServerLoadTracker()
        for i in range(history):
            tag = tracker.on_query_arrive(now=i)
            tracker.on_query_finish(tag, latency=MS, now=i)
        for tag_value, bucket in tracker.buckets.items():
            tracker.buckets[tag_value] = _CountingDeque(bucket)
        tag = tracker.on_query_arrive(now=history)
        tracker.on_query_finish(tag, latency=MS, now=history)
        costs.append(sum(b.writes for b in tracker.buckets.values()
                         if isinstance(b, _CountingDeque)))
    assert costs[0] == costs[1] == 1
