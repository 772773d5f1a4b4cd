"""Streaming metrics: latency/RIF histograms, CPU windows, CSV export.

Latency histograms are log-spaced (100 buckets per decade, 100 µs to 10 s,
under 2.5% resolution error per reading).  RIF histograms use unit-width
integer buckets; their quantiles smear each integer k uniformly across
[k - 1/2, k + 1/2) so that fractional quantiles interpolate sensibly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

LATENCY_LO = 100.0  # µs
LATENCY_DECADES = 5  # up to 10 s
BUCKETS_PER_DECADE = 100
_LOG_SCALE = BUCKETS_PER_DECADE / math.log(10.0)
_N_LATENCY_BUCKETS = LATENCY_DECADES * BUCKETS_PER_DECADE


class Histogram:
    """Fixed-bucket histogram over either a log-spaced or integer domain."""

    def __init__(self, smear_integers: bool = False):
        self.smear_integers = smear_integers
        self.total = 0
        if smear_integers:
            self.counts: dict[int, int] = {}
        else:
            # log-spaced latency buckets plus an underflow slot; values past
            # the top edge clamp into the final bucket.
            self.bucket_counts = [0] * (_N_LATENCY_BUCKETS + 1)

    def record(self, value: float) -> None:
        self.total += 1
        if self.smear_integers:
            key = int(value)
            self.counts[key] = self.counts.get(key, 0) + 1
        else:
            if value < LATENCY_LO:
                idx = 0
            else:
                idx = 1 + int(_LOG_SCALE * math.log(value / LATENCY_LO))
                if idx > _N_LATENCY_BUCKETS:
                    idx = _N_LATENCY_BUCKETS
            self.bucket_counts[idx] += 1

    def quantile(self, q: float) -> float | None:
        """Value at cumulative fraction ``q``; None for an empty histogram.

        Integer histograms interpolate within the smear interval of each
        integer; log histograms interpolate linearly within a bucket.
        """
        if self.total == 0:
            return None
        target = q * self.total
        if self.smear_integers:
            running = 0
            for key in sorted(self.counts):
                count = self.counts[key]
                if running + count >= target:
                    inside = max(0.0, target - running)
                    return (key - 0.5) + inside / count
                running += count
            key = max(self.counts)
            return key + 0.5
        running = 0
        for idx, count in enumerate(self.bucket_counts):
            if count == 0:
                continue
            if running + count >= target:
                lo, hi = self._bucket_edges(idx)
                inside = max(0.0, target - running)
                return lo + (hi - lo) * (inside / count)
            running += count
        return self._bucket_edges(_N_LATENCY_BUCKETS)[1]

    def exact_integer_quantile(self, q: float) -> int | None:
        """Nearest-rank integer quantile with smearing disabled."""
        if self.total == 0 or not self.smear_integers:
            return None
        rank = max(1, math.ceil(q * self.total))
        running = 0
        for key in sorted(self.counts):
            running += self.counts[key]
            if running >= rank:
                return key
        return max(self.counts)

    def _bucket_edges(self, idx: int) -> tuple[float, float]:
        if idx == 0:
            return 0.0, LATENCY_LO
        lo = LATENCY_LO * math.exp((idx - 1) / _LOG_SCALE)
        hi = LATENCY_LO * math.exp(idx / _LOG_SCALE)
        return lo, hi


def cpu_windows(
    per_second: list[float], allocation: float, window_s: int
) -> list[float]:
    """Utilization (fraction of allocation) per full window of 1 s samples.

    ``per_second`` holds one replica's consumed core-seconds per second;
    partial trailing windows are dropped.
    """
    out = []
    for start in range(0, len(per_second) - window_s + 1, window_s):
        consumed = sum(per_second[start : start + window_s])
        out.append(consumed / (allocation * window_s))
    return out


@dataclass
class SegmentMetrics:
    """Metrics for one (step, policy) measurement window."""

    step: int
    policy: str
    param_name: str = ""
    param_value: float = 0.0
    measured_s: float = 0.0
    latency: Histogram = field(default_factory=Histogram)
    rif: Histogram = field(default_factory=lambda: Histogram(smear_integers=True))
    errors: int = 0
    completions: int = 0
    arrivals: int = 0
    util_1s: list[float] = field(default_factory=list)
    util_even_sum: float = 0.0  # core-seconds consumed by even-id replicas
    util_odd_sum: float = 0.0
    even_alloc_s: float = 0.0  # allocation * window, summed over even replicas
    odd_alloc_s: float = 0.0

    def rows(self, run_id: int) -> list[tuple]:
        """Flatten into CSV rows (run_id, step, policy, metric, key, value, unit)."""
        out: list[tuple] = []

        def add(metric: str, key: str, value: float | None, unit: str):
            if value is None:
                value = float("nan")
            out.append((run_id, self.step, self.policy, metric, key, value, unit))

        add("step_param", self.param_name or "value", self.param_value, "config")
        for q, name in ((0.5, "p50"), (0.9, "p90"), (0.99, "p99"), (0.999, "p999")):
            add("latency", name, self.latency.quantile(q), "us")
        for q, name in ((0.5, "p50"), (0.9, "p90"), (0.99, "p99")):
            add("rif", name, self.rif.quantile(q), "count")
        seconds = self.measured_s or 1.0
        add("errors_per_sec", "rate", self.errors / seconds, "1/s")
        served = self.completions + self.errors
        add("error_fraction", "rate", self.errors / served if served else 0.0, "frac")
        add("qps", "rate", self.arrivals / seconds, "1/s")
        if self.util_1s:
            ordered = sorted(self.util_1s)
            for q, name in ((0.05, "p5"), (0.25, "p25"), (0.5, "p50"),
                            (0.75, "p75"), (0.95, "p95")):
                idx = max(1, math.ceil(q * len(ordered)))
                add("cpu_util_1s", name, ordered[idx - 1], "x_alloc")
        if self.even_alloc_s > 0:
            add("cpu_util_mean", "even", self.util_even_sum / self.even_alloc_s, "x_alloc")
        if self.odd_alloc_s > 0:
            add("cpu_util_mean", "odd", self.util_odd_sum / self.odd_alloc_s, "x_alloc")
        total_alloc = self.even_alloc_s + self.odd_alloc_s
        if total_alloc > 0:
            add("cpu_util_mean", "all",
                (self.util_even_sum + self.util_odd_sum) / total_alloc, "x_alloc")
        return out


CSV_HEADER = ("run_id", "step", "policy", "metric", "quantile_or_window", "value", "unit")


def write_csv(path, segments_by_run: list[list[SegmentMetrics]]) -> None:
    """Write all runs' segments to one CSV file with a fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for run_id, segments in enumerate(segments_by_run):
            for segment in segments:
                for row in segment.rows(run_id):
                    run, step, policy, metric, key, value, unit = row
                    writer.writerow(
                        (run, step, policy, metric, key, f"{value:.6g}", unit)
                    )


def read_csv(path) -> list[dict]:
    """Load a metrics CSV back into dict rows (values as floats)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["run_id"] = int(row["run_id"])
            row["step"] = int(row["step"])
            row["value"] = float(row["value"])
            out.append(row)
    return out
