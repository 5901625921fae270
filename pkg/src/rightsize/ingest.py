"""Trace parsing, resampling, latency inversion, aggregation and quantile summaries."""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from rightsize.catalog import LATENCY_EPSILON_MS, ResourceDimension
from rightsize.errors import EmptyTrace, GridMismatch, MalformedRow, UnknownDimension

DEFAULT_INTERVAL = timedelta(minutes=10)

CSV_HEADER = ("timestamp", "object_id", "level", "dimension", "value")

# Dimensions that add up when children are combined into a parent.
SUMMED = (
    ResourceDimension.CPU,
    ResourceDimension.MEMORY,
    ResourceDimension.IOPS,
    ResourceDimension.LOG_RATE,
    ResourceDimension.STORAGE,
)


class Level(enum.IntEnum):
    FILE = 0
    DATABASE = 1
    INSTANCE = 2

    @classmethod
    def parse(cls, text: str) -> "Level":
        return cls[text.strip().upper()]

    @property
    def label(self) -> str:
        return self.name.lower()


class PerfSample(NamedTuple):
    timestamp: datetime
    value: float


def _to_epoch(ts: datetime) -> int:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(round(ts.timestamp()))


def _from_epoch(seconds: int) -> datetime:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc)


@dataclass(frozen=True, eq=False)
class PerfTrace:
    """One dimension's time series. ``times`` are UTC epoch seconds.

    ``inverted`` marks an IO latency trace whose values are already 1/ms.
    """

    dimension: ResourceDimension
    times: np.ndarray
    values: np.ndarray
    inverted: bool = False

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times.size == 0:
            raise EmptyTrace(f"{self.dimension.value} trace has no samples")
        if np.any(np.diff(times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError(f"{self.dimension.value} values must be finite and non-negative")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_samples(cls, dimension: ResourceDimension, samples: Iterable[PerfSample]) -> "PerfTrace":
        samples = list(samples)
        return cls(
            dimension,
            np.array([_to_epoch(s.timestamp) for s in samples], dtype=np.int64),
            np.array([s.value for s in samples], dtype=float),
        )

    @property
    def samples(self) -> list[PerfSample]:
        return [PerfSample(_from_epoch(t), float(v)) for t, v in zip(self.times, self.values)]

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PerfTrace):
            return NotImplemented
        return (
            self.dimension is other.dimension
            and self.inverted == other.inverted
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )

    def with_values(self, values, inverted: bool | None = None) -> "PerfTrace":
        return PerfTrace(self.dimension, self.times, values, self.inverted if inverted is None else inverted)

    def slice(self, start: int, stop: int) -> "PerfTrace":
        return PerfTrace(self.dimension, self.times[start:stop], self.values[start:stop], self.inverted)


@dataclass(frozen=True)
class PerfTraceSet:
    object_id: str
    level: Level
    traces: Mapping[ResourceDimension, PerfTrace] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "traces", dict(sorted(self.traces.items(), key=lambda kv: kv[0].value)))

    def __getitem__(self, dim: ResourceDimension) -> PerfTrace:
        return self.traces[dim]

    def __contains__(self, dim: object) -> bool:
        return dim in self.traces

    def __iter__(self) -> Iterator[PerfTrace]:
        return iter(self.traces.values())

    @property
    def times(self) -> np.ndarray:
        return self.grid()

    def grid(self) -> np.ndarray:
        """The shared timestamp grid; raises :class:`GridMismatch` if traces disagree."""
        grids = [t.times for t in self.traces.values()]
        if not grids:
            raise EmptyTrace(f"{self.object_id}: no traces")
        first = grids[0]
        for g in grids[1:]:
            if not np.array_equal(g, first):
                raise GridMismatch(f"{self.object_id}: traces do not share a timestamp grid")
        return first

    def interval_seconds(self) -> int:
        grid = self.grid()
        if grid.size < 2:
            return int(DEFAULT_INTERVAL.total_seconds())
        return int(np.min(np.diff(grid)))

    def slice(self, start: int, stop: int) -> "PerfTraceSet":
        return PerfTraceSet(self.object_id, self.level, {d: t.slice(start, stop) for d, t in self.traces.items()})

    def map(self, fn) -> "PerfTraceSet":
        return PerfTraceSet(self.object_id, self.level, {d: fn(t) for d, t in self.traces.items()})


@dataclass(frozen=True)
class WorkloadSummary:
    """Per-dimension scalar requirement at ``quantile_used``.

    ``throughput_mibps`` is only used by the managed-instance pre-filter and is
    not part of the trace CSV; callers supply it when known.
    """

    values: Mapping[ResourceDimension, float]
    quantile_used: float
    throughput_mibps: float | None = None

    def get(self, dim: ResourceDimension) -> float | None:
        return self.values.get(dim)


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return _to_epoch(datetime.fromisoformat(text))


def parse_traces(source: str | Path) -> list[PerfTraceSet]:
    """Read a trace CSV into one :class:`PerfTraceSet` per ``(object_id, level)``.

    Rows may appear in any order. Traces are sorted by time but not resampled.
    """
    rows: dict[tuple[str, Level], dict[ResourceDimension, dict[int, float]]] = defaultdict(
        lambda: defaultdict(dict)
    )
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedRow(f"expected header {','.join(CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise MalformedRow(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
            ts_text, object_id, level_text, dim_text, value_text = row
            try:
                ts = _parse_timestamp(ts_text)
            except ValueError:
                raise MalformedRow(f"bad timestamp {ts_text!r}", line=lineno) from None
            try:
                level = Level.parse(level_text)
            except KeyError:
                raise MalformedRow(f"bad level {level_text!r}", line=lineno) from None
            try:
                dim = ResourceDimension.parse(dim_text)
            except ValueError:
                raise UnknownDimension(f"unknown dimension {dim_text!r}", line=lineno) from None
            try:
                value = float(value_text)
            except ValueError:
                raise MalformedRow(f"bad value {value_text!r}", line=lineno) from None
            if not math.isfinite(value) or value < 0:
                raise MalformedRow(f"value must be finite and non-negative, got {value_text!r}", line=lineno)
            series = rows[(object_id.strip(), level)][dim]
            if ts in series:
                raise MalformedRow(f"duplicate timestamp for {object_id}/{dim.value}", line=lineno)
            series[ts] = value

    if not rows:
        raise EmptyTrace(f"{source}: no data rows")
    out = []
    for (object_id, level), dims in sorted(rows.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        traces = {}
        for dim, series in dims.items():
            times = np.array(sorted(series), dtype=np.int64)
            traces[dim] = PerfTrace(dim, times, np.array([series[t] for t in times], dtype=float))
        out.append(PerfTraceSet(object_id, level, traces))
    return out


def write_traces(sets: Iterable[PerfTraceSet], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s in sets:
            for dim, trace in s.traces.items():
                for t, v in zip(trace.times, trace.values):
                    stamp = _from_epoch(t).strftime("%Y-%m-%dT%H:%M:%SZ")
                    writer.writerow([stamp, s.object_id, s.level.label, dim.value, repr(float(v))])


def _seconds(interval: timedelta | float | int) -> int:
    seconds = interval.total_seconds() if isinstance(interval, timedelta) else float(interval)
    if seconds <= 0:
        raise ValueError("interval must be positive")
    return int(round(seconds))


def resample(
    trace: PerfTrace,
    interval: timedelta | float = DEFAULT_INTERVAL,
    origin: int | None = None,
    end: int | None = None,
) -> PerfTrace:
    """Bucket-mean onto a uniform grid starting at ``origin`` (default: first sample).

    Empty buckets repeat the previous bucket's value. Buckets before the first
    sample (only possible with an explicit ``origin``) take the first bucket's value.
    ``end`` extends the grid so that it covers that epoch second.
    """
    step = _seconds(interval)
    origin = int(trace.times[0]) if origin is None else int(origin)
    if trace.times[0] < origin:
        raise ValueError("origin is after the first sample")
    idx = (trace.times - origin) // step
    last = int(idx[-1])
    if end is not None:
        last = max(last, (int(end) - origin) // step)
    n = last + 1
    sums = np.bincount(idx, weights=trace.values, minlength=n)
    counts = np.bincount(idx, minlength=n)
    filled = counts > 0
    means = np.divide(sums, counts, out=np.zeros(n), where=filled)
    # forward fill: index of last filled bucket at or before each position
    pos = np.where(filled, np.arange(n), -1)
    np.maximum.accumulate(pos, out=pos)
    first_filled = int(np.argmax(filled))
    pos[pos < 0] = first_filled
    values = means[pos]
    times = origin + step * np.arange(n, dtype=np.int64)
    return PerfTrace(trace.dimension, times, values, trace.inverted)


def resample_set(s: PerfTraceSet, interval: timedelta | float = DEFAULT_INTERVAL) -> PerfTraceSet:
    """Resample every trace of ``s`` onto one grid spanning all of them."""
    origin = min(int(t.times[0]) for t in s)
    end = max(int(t.times[-1]) for t in s)
    return s.map(lambda t: resample(t, interval, origin=origin, end=end))


def invert_latency(trace: PerfTrace) -> PerfTrace:
    """Map latency (ms) to IO speed (1/ms). Applying it twice round-trips."""
    if trace.dimension is not ResourceDimension.IO_LATENCY:
        raise ValueError(f"invert_latency needs an io_latency trace, got {trace.dimension.value}")
    values = 1.0 / np.maximum(trace.values, LATENCY_EPSILON_MS)
    return trace.with_values(values, inverted=not trace.inverted)


def invert_set_latency(s: PerfTraceSet) -> PerfTraceSet:
    """Invert the latency trace of ``s`` if present and not yet inverted."""
    lat = s.traces.get(ResourceDimension.IO_LATENCY)
    if lat is None or lat.inverted:
        return s
    traces = dict(s.traces)
    traces[ResourceDimension.IO_LATENCY] = invert_latency(lat)
    return PerfTraceSet(s.object_id, s.level, traces)


def aggregate(
    sets: list[PerfTraceSet],
    target_level: Level,
    object_id: str | None = None,
    host_capacity: Mapping[ResourceDimension, float] | None = None,
) -> PerfTraceSet:
    """Combine child objects into their parent.

    Additive dimensions are summed per timestamp (CPU and memory optionally
    capped at ``host_capacity``); raw IO latency takes the per-timestamp max.
    """
    if not sets:
        raise ValueError("nothing to aggregate")
    for s in sets:
        if s.level != target_level - 1:
            raise ValueError(f"{s.object_id} is at level {s.level.label}, expected one below {target_level.label}")
    grid = sets[0].grid()
    for s in sets[1:]:
        if not np.array_equal(s.grid(), grid):
            raise GridMismatch(f"{s.object_id} does not share the timestamp grid of {sets[0].object_id}")
    host_capacity = host_capacity or {}
    dims = sorted({d for s in sets for d in s.traces}, key=lambda d: d.value)
    traces = {}
    for dim in dims:
        children = [s.traces[dim] for s in sets if dim in s.traces]
        if dim is ResourceDimension.IO_LATENCY:
            if any(c.inverted for c in children):
                raise ValueError("aggregate raw latency before inversion")
            values = np.max([c.values for c in children], axis=0)
        else:
            values = np.sum([c.values for c in children], axis=0)
            cap = host_capacity.get(dim)
            if cap is not None and dim in (ResourceDimension.CPU, ResourceDimension.MEMORY):
                values = np.minimum(values, cap)
        traces[dim] = PerfTrace(dim, grid, values)
    if object_id is None:
        object_id = sets[0].object_id if len(sets) == 1 else "+".join(s.object_id for s in sets)
    return PerfTraceSet(object_id, target_level, traces)


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Nearest-rank empirical quantile: the ceil(q*n)-th smallest value."""
    if not 0 < q <= 1:
        raise ValueError(f"quantile must be in (0, 1], got {q}")
    ordered = np.sort(np.asarray(values, dtype=float))
    # guard against q*n landing a hair above an integer
    rank = max(1, math.ceil(round(q * ordered.size, 9)))
    return float(ordered[rank - 1])


def summarize(s: PerfTraceSet, quantile: float = 0.95, throughput_mibps: float | None = None) -> WorkloadSummary:
    values = {dim: nearest_rank(trace.values, quantile) for dim, trace in s.traces.items()}
    return WorkloadSummary(values, quantile, throughput_mibps)


def prepare_workload(
    sets: list[PerfTraceSet],
    top_level: Level,
    interval: timedelta | float = DEFAULT_INTERVAL,
    object_id: str | None = None,
) -> PerfTraceSet:
    """Resample, roll up to ``top_level`` and invert latency.

    Only the lowest level present in ``sets`` is used as the source, and it is
    aggregated one level at a time until it reaches ``top_level``.
    """
    if not sets:
        raise EmptyTrace("no trace sets")
    if any(s.level == top_level for s in sets):
        current = [s for s in sets if s.level == top_level]
        if len(current) > 1:
            raise ValueError(f"{len(current)} objects found at {top_level.label} level; expected one")
        src = current
    else:
        lowest = min(s.level for s in sets)
        if lowest > top_level:
            raise ValueError(f"traces are above the {top_level.label} level")
        src = [s for s in sets if s.level == lowest]
    origin = min(int(t.times[0]) for s in src for t in s)
    end = max(int(t.times[-1]) for s in src for t in s)
    current = [s.map(lambda t: resample(t, interval, origin=origin, end=end)) for s in src]
    while current[0].level < top_level:
        current = [aggregate(current, Level(current[0].level + 1), object_id=object_id)]
    (result,) = current
    if object_id is not None and result.object_id != object_id:
        result = PerfTraceSet(object_id, result.level, result.traces)
    return invert_set_latency(result)
