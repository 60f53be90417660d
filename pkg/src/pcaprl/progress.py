"""Windowed progress estimation from timestamped heartbeat messages.

Progress over a control window is the median of per-arrival rates
N_k / (t_k - t_{k-1}) for arrivals t_k falling in the window, where t_{k-1}
is the previous arrival overall (so the first in-window gap may span the
window boundary).  An even number of rates takes the mean of the central
pair.  A window with no computable rate is reported as 0 Hz with an explicit
empty flag so controllers can hold their previous action.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class HeartbeatRecord:
    """One heartbeat arrival: monotonic timestamp (s) and batch count n >= 1."""

    timestamp: float
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("batch count must be >= 1")


@dataclass(frozen=True)
class ProgressSample:
    window_end: float
    value: float
    empty: bool = False


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    m = len(ordered)
    if m % 2:
        return ordered[m // 2]
    return 0.5 * (ordered[m // 2 - 1] + ordered[m // 2])


def validate_trace(trace: Sequence[HeartbeatRecord]) -> None:
    for prev, cur in zip(trace, trace[1:]):
        if cur.timestamp <= prev.timestamp:
            raise ValueError(
                f"timestamps must be strictly increasing, got {prev.timestamp} then {cur.timestamp}")


def compute_progress(trace: Sequence[HeartbeatRecord], window_start: float,
                     window_end: float) -> ProgressSample:
    """Median arrival rate over the window (window_start, window_end]."""
    if not window_start < window_end:
        raise ValueError("window_start must be before window_end")
    rates = []
    for i, rec in enumerate(trace):
        if rec.timestamp <= window_start:
            continue
        if rec.timestamp > window_end:
            break
        if i == 0:
            # the very first arrival of the trace has no predecessor gap
            continue
        gap = rec.timestamp - trace[i - 1].timestamp
        rates.append(rec.n / gap)
    if not rates:
        return ProgressSample(window_end=window_end, value=0.0, empty=True)
    return ProgressSample(window_end=window_end, value=_median(rates))


def stream_progress(trace: Sequence[HeartbeatRecord], dt: float,
                    t_start: float = 0.0) -> list[ProgressSample]:
    """Apply compute_progress over consecutive windows of width dt.

    Windows are (t_start + i*dt, t_start + (i+1)*dt]; the output covers the
    span from t_start to the last arrival, ceil(span/dt) samples.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    validate_trace(trace)
    if not trace:
        return []
    span = trace[-1].timestamp - t_start
    count = max(1, math.ceil(span / dt - 1e-12))
    return [
        compute_progress(trace, t_start + i * dt, t_start + (i + 1) * dt)
        for i in range(count)
    ]


# -- CSV interchange ---------------------------------------------------------

def save_heartbeats(trace: Iterable[HeartbeatRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_s", "n"])
        for rec in trace:
            writer.writerow([repr(rec.timestamp), rec.n])


def load_heartbeats(path) -> list[HeartbeatRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        trace = [HeartbeatRecord(float(row["timestamp_s"]), int(row["n"])) for row in reader]
    validate_trace(trace)
    return trace


def save_progress(samples: Iterable[ProgressSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_end_s", "progress_hz", "empty"])
        for s in samples:
            writer.writerow([repr(s.window_end), repr(s.value), int(s.empty)])
