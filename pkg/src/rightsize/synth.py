"""Parametric trace generator for tests and demos."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from rightsize.catalog import ResourceDimension
from rightsize.ingest import DEFAULT_INTERVAL, Level, PerfTrace, PerfTraceSet

PATTERNS = ("steady", "spiky", "seasonal", "ramp")
EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class PatternParams:
    """``level`` is the baseline value; ``spike_height`` is added on spike samples,
    ``amplitude`` is the seasonal swing, and ``ramp_to`` the final value of a ramp.
    ``noise`` is the standard deviation of additive Gaussian noise."""

    level: float = 1.0
    noise: float = 0.0
    spike_height: float = 4.0
    spike_rate: float = 0.01
    period: int = 144
    amplitude: float = 0.5
    ramp_to: float = 2.0


def pattern_values(pattern: str, n: int, params: PatternParams = PatternParams(), seed: int = 0) -> np.ndarray:
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {', '.join(PATTERNS)}")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    if pattern == "steady":
        v = np.full(n, params.level, dtype=float)
    elif pattern == "spiky":
        v = np.full(n, params.level, dtype=float)
        v[rng.random(n) < params.spike_rate] += params.spike_height
    elif pattern == "seasonal":
        v = params.level + params.amplitude * np.sin(2 * np.pi * t / params.period)
    else:
        v = np.linspace(params.level, params.ramp_to, n)
    if params.noise > 0:
        v = v + rng.normal(0.0, params.noise, n)
    return np.maximum(v, 0.0)


def make_trace(
    dimension: ResourceDimension,
    values,
    start: datetime = EPOCH,
    interval: timedelta = DEFAULT_INTERVAL,
) -> PerfTrace:
    values = np.asarray(values, dtype=float)
    step = int(interval.total_seconds())
    times = int(start.timestamp()) + step * np.arange(values.size, dtype=np.int64)
    return PerfTrace(dimension, times, values)


def make_set(
    object_id: str,
    series: dict[ResourceDimension, np.ndarray],
    level: Level = Level.DATABASE,
    start: datetime = EPOCH,
    interval: timedelta = DEFAULT_INTERVAL,
) -> PerfTraceSet:
    return PerfTraceSet(object_id, level, {d: make_trace(d, v, start, interval) for d, v in series.items()})
