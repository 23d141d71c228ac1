"""Throughput benchmarking: warm-up passes, measured passes, threads, 95% CIs.

The engine under test is any callable `fn(query_payload) -> hits` that is
safe for concurrent calls. Each pass partitions the query set statically
(round-robin by index) across worker threads and is timed wall-clock with a
monotonic timer; qps = |queries| / elapsed.
"""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

DEFAULT_WARMUP_RUNS = 3
DEFAULT_MEASURED_RUNS = 3
DEFAULT_K = 1000


class BenchError(Exception):
    pass


# two-sided 95% Student-t critical values, t_{0.975, df}
_T_TABLE = {
    1: 12.7062, 2: 4.3027, 3: 3.1824, 4: 2.7764, 5: 2.5706,
    6: 2.4469, 7: 2.3646, 8: 2.3060, 9: 2.2622, 10: 2.2281,
    11: 2.2010, 12: 2.1788, 13: 2.1604, 14: 2.1448, 15: 2.1314,
    16: 2.1199, 17: 2.1098, 18: 2.1009, 19: 2.0930, 20: 2.0860,
    21: 2.0796, 22: 2.0739, 23: 2.0687, 24: 2.0639, 25: 2.0595,
    26: 2.0555, 27: 2.0518, 28: 2.0484, 29: 2.0452, 30: 2.0423,
    40: 2.0211, 60: 2.0003, 120: 1.9799,
}


def _t_critical(df: int) -> float:
    if df in _T_TABLE:
        return _T_TABLE[df]
    if df > 120:
        return 1.96
    # interpolate on 1/df between tabulated anchors
    anchors = sorted(_T_TABLE)
    lo = max(a for a in anchors if a < df)
    hi = min(a for a in anchors if a > df)
    w = (1.0 / df - 1.0 / lo) / (1.0 / hi - 1.0 / lo)
    return _T_TABLE[lo] + w * (_T_TABLE[hi] - _T_TABLE[lo])


def ci95(samples: Sequence[float]) -> float:
    """Half-width of the 95% confidence interval: t * s / sqrt(n), sample stddev."""
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples for a confidence interval, got {n}")
    mean = sum(samples) / n
    var = sum((x - mean) ** 2 for x in samples) / (n - 1)
    return _t_critical(n - 1) * math.sqrt(var) / math.sqrt(n)


@dataclass
class BenchConfig:
    threads: int = 1
    warmup_runs: int = DEFAULT_WARMUP_RUNS
    measured_runs: int = DEFAULT_MEASURED_RUNS
    k: int = DEFAULT_K
    condition: str = "pre-encoded"
    record_latencies: bool = False  # raw per-query seconds; percentiles are out of scope

    def __post_init__(self):
        for name in ("threads", "warmup_runs", "measured_runs", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class ThroughputReport:
    condition: str
    threads: int
    n_queries: int
    warmup_runs: int
    measured_runs: int
    per_run_qps: list[float] = field(default_factory=list)
    latencies_s: list[float] | None = None  # measured passes only, when recorded

    @property
    def mean_qps(self) -> float:
        return sum(self.per_run_qps) / len(self.per_run_qps)

    @property
    def ci95_halfwidth(self) -> float:
        return ci95(self.per_run_qps)

    def as_dict(self) -> dict:
        out = {
            "condition": self.condition,
            "threads": self.threads,
            "n_queries": self.n_queries,
            "warmup_runs": self.warmup_runs,
            "measured_runs": self.measured_runs,
            "per_run_qps": [round(q, 4) for q in self.per_run_qps],
            "mean_qps": round(self.mean_qps, 4),
            # undefined for a single measured run
            "ci95_halfwidth": round(self.ci95_halfwidth, 4) if len(self.per_run_qps) > 1 else None,
        }
        if self.latencies_s is not None:
            # raw samples stay on the object; the record keeps a summary
            out["latency_count"] = len(self.latencies_s)
            out["mean_latency_ms"] = round(
                1000.0 * sum(self.latencies_s) / len(self.latencies_s), 4
            )
        return out

    def json_line(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def format_table(reports: Sequence[ThroughputReport]) -> str:
    header = f"{'condition':<24} {'threads':>7} {'mean qps':>12} {'95% CI':>12} {'runs':>5}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.condition:<24} {r.threads:>7} {r.mean_qps:>12.1f} "
            f"{'±' + format(r.ci95_halfwidth, '.1f'):>12} {r.measured_runs:>5}"
        )
    return "\n".join(lines)


def _one_pass(
    search_fn: Callable, queries: list, threads: int, record: bool = False
) -> tuple[float, list[float] | None]:
    errors: list[BenchError] = []
    lock = threading.Lock()
    latencies: list[float] = []

    def worker(offset: int) -> None:
        local: list[float] = []
        try:
            for qid, payload in queries[offset::threads]:
                try:
                    if record:
                        t0 = time.perf_counter()
                        search_fn(payload)
                        local.append(time.perf_counter() - t0)
                    else:
                        search_fn(payload)
                except Exception as e:  # noqa: BLE001 - report which query broke the pass
                    raise BenchError(f"query {qid!r} failed during benchmark pass: {e}") from e
        except BenchError as e:
            with lock:
                errors.append(e)
        else:
            if record:
                with lock:
                    latencies.extend(local)

    pool = [threading.Thread(target=worker, args=(w,)) for w in range(threads)]
    start = time.perf_counter()
    for t in pool:
        t.start()
    for t in pool:
        t.join()
    elapsed = time.perf_counter() - start
    if errors:
        raise errors[0]
    if elapsed <= 0:
        raise BenchError("pass finished in zero time; timer resolution too coarse")
    return elapsed, (latencies if record else None)


def run_benchmark(
    search_fn: Callable,
    queries: Sequence[tuple[str, object]],
    config: BenchConfig,
) -> ThroughputReport:
    """Run warmup_runs discarded passes then measured_runs timed passes."""
    queries = list(queries)
    if not queries:
        raise ValueError("empty query set")
    report = ThroughputReport(
        condition=config.condition,
        threads=config.threads,
        n_queries=len(queries),
        warmup_runs=config.warmup_runs,
        measured_runs=config.measured_runs,
        latencies_s=[] if config.record_latencies else None,
    )
    for pass_idx in range(config.warmup_runs + config.measured_runs):
        measured = pass_idx >= config.warmup_runs
        elapsed, latencies = _one_pass(
            search_fn, queries, config.threads, record=measured and config.record_latencies
        )
        if measured:
            report.per_run_qps.append(len(queries) / elapsed)
            if latencies is not None:
                report.latencies_s.extend(latencies)
    return report


class StubEngine:
    """Fixed-latency engine for protocol tests.

    time.sleep alone overshoots by the kernel's timer slack (lots, in
    containers), so the bulk of the delay sleeps off the GIL and the last
    ~0.4 ms spins on the monotonic clock to hit the deadline precisely.
    """

    _SPIN_MARGIN = 0.0004

    def __init__(self, delay_s: float = 0.001):
        self.delay_s = delay_s

    def __call__(self, payload) -> list:
        deadline = time.perf_counter() + self.delay_s
        coarse = self.delay_s - self._SPIN_MARGIN
        if coarse > 0:
            time.sleep(coarse)
        while time.perf_counter() < deadline:
            pass
        return []


class CountingEngine:
    """Counts every search call; thread-safe."""

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, payload) -> list:
        with self._lock:
            self.calls += 1
        return []
