"""SKU selection strategies, bootstrap confidence, and backtesting."""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from rightsize.catalog import Deployment, FileLayout, ResourceLimits, SkuCatalog, SkuSpec, candidate_limits
from rightsize.errors import NoFeasibleError, NoFeasibleSku, UnknownGroup, UnknownSku, WindowTooLong
from rightsize.ingest import PerfTraceSet, summarize
from rightsize.ppm import (
    DEFAULT_PRICE_FACTOR,
    CurvePoint,
    PricePerfCurve,
    build_curve,
    detect_overprovision,
    throttling_probability,
)
from rightsize.profiler import GroupModel, NegotiabilityVector, group_membership

DEFAULT_EPSILON = 0.001
DEFAULT_GAMMA = 0.95
DEFAULT_QUANTILE = 0.95
DEFAULT_REPLICATES = 30
DEFAULT_WINDOW = timedelta(days=7)


class SelectionStrategy(enum.Enum):
    DOPPLER = "doppler"
    BASELINE = "baseline"
    LARGEST_INCREASE = "largest-increase"
    LARGEST_SLOPE = "largest-slope"
    PERF_THRESHOLD = "perf-threshold"


class Flag(enum.Enum):
    ESCALATED_TO_BC = "escalated_to_bc"
    OVERPROVISIONED_INPUT = "overprovisioned_input"
    FALLBACK_MOST_PERFORMANT = "fallback_most_performant"


@dataclass(frozen=True)
class Recommendation:
    sku_id: str
    strategy: SelectionStrategy
    achieved_throttling: float
    group_id: int | None = None
    target_tolerance: float | None = None
    confidence: float | None = None
    flags: frozenset[Flag] = frozenset()
    curve: PricePerfCurve | None = None

    def with_updates(self, **kw) -> "Recommendation":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(kw)
        return Recommendation(**data)

    def to_json(self) -> dict:
        return {
            "sku_id": self.sku_id,
            "strategy": self.strategy.value,
            "group_id": self.group_id,
            "target_tolerance": self.target_tolerance,
            "achieved_throttling": self.achieved_throttling,
            "confidence": self.confidence,
            "flags": sorted(f.value for f in self.flags),
            "curve": [p.to_json() for p in self.curve.points] if self.curve else [],
            "pruned": [p.to_json() for p in self.curve.pruned] if self.curve else [],
        }


def _from_point(point: CurvePoint, strategy: SelectionStrategy, curve: PricePerfCurve, **kw) -> Recommendation:
    return Recommendation(point.sku_id, strategy, point.throttling_prob, curve=curve, **kw)


def select_doppler(
    curve: PricePerfCurve,
    model: GroupModel,
    vector: NegotiabilityVector,
    fallback_group: int | None = None,
) -> Recommendation:
    """Pick the SKU whose throttling is closest to, and not above, the group's tolerance.

    Ties go to the cheaper SKU. When nothing is within tolerance the least
    throttled SKU is returned with ``FALLBACK_MOST_PERFORMANT``.
    """
    if not curve.points:
        raise ValueError("empty curve")
    gid = group_membership(vector, model.deployment)
    stats = model.groups.get(gid)
    if stats is None:
        if fallback_group is None or fallback_group not in model.groups:
            raise UnknownGroup(f"group {gid} has no trained tolerance")
        stats = model.groups[fallback_group]
    target = stats.mean_throttling
    feasible = [p for p in curve.points if p.throttling_prob <= target]
    flags = set()
    if feasible:
        best = min(feasible, key=lambda p: (abs(p.throttling_prob - target), p.monthly_price, p.sku_id))
    else:
        best = min(curve.points, key=lambda p: (p.throttling_prob, p.monthly_price, p.sku_id))
        flags.add(Flag.FALLBACK_MOST_PERFORMANT)
    return _from_point(
        best, SelectionStrategy.DOPPLER, curve, group_id=gid, target_tolerance=target, flags=frozenset(flags)
    )


def select_baseline(
    s: PerfTraceSet,
    candidates: Sequence[tuple[SkuSpec, ResourceLimits]],
    quantile: float = DEFAULT_QUANTILE,
) -> Recommendation:
    """Cheapest SKU whose limits cover the ``quantile`` of every dimension."""
    summary = summarize(s, quantile)
    candidates = list(candidates)
    if not candidates:
        raise NoFeasibleSku("no candidate SKUs")

    def fits(limits: ResourceLimits) -> bool:
        return all(limits.get(d) is None or limits.get(d) >= v for d, v in summary.values.items())

    feasible = [(sku, lim) for sku, lim in candidates if fits(lim)]
    if not feasible:
        binding = sorted(
            d.value
            for d, v in summary.values.items()
            if all(lim.get(d) is not None and lim.get(d) < v for _, lim in candidates)
        )
        what = ", ".join(binding) if binding else "a combination of dimensions"
        raise NoFeasibleSku(f"no SKU covers the {quantile:g} quantile of usage (binding: {what})", binding)
    sku, limits = min(feasible, key=lambda c: (c[0].monthly_price, c[0].id))
    return Recommendation(sku.id, SelectionStrategy.BASELINE, throttling_probability(s, limits))


def _require_points(curve: PricePerfCurve, n: int) -> None:
    if len(curve.points) < n:
        raise ValueError(f"curve needs at least {n} points, has {len(curve.points)}")


def select_largest_increase(curve: PricePerfCurve, epsilon: float = DEFAULT_EPSILON) -> Recommendation:
    """First SKU after which the score gain drops to ``epsilon`` or below; else the last SKU."""
    _require_points(curve, 2)
    pts = curve.points
    for prev, cur in zip(pts, pts[1:]):
        if cur.score - prev.score <= epsilon:
            return _from_point(cur, SelectionStrategy.LARGEST_INCREASE, curve)
    return _from_point(pts[-1], SelectionStrategy.LARGEST_INCREASE, curve)


def select_largest_slope(curve: PricePerfCurve) -> Recommendation:
    _require_points(curve, 2)
    pts = curve.points
    slopes = [
        (cur.score - prev.score) / (cur.monthly_price - prev.monthly_price) for prev, cur in zip(pts, pts[1:])
    ]
    # max() keeps the first maximum, i.e. the cheaper point on ties
    i = max(range(len(slopes)), key=lambda j: slopes[j])
    return _from_point(pts[i + 1], SelectionStrategy.LARGEST_SLOPE, curve)


def select_perf_threshold(curve: PricePerfCurve, gamma: float = DEFAULT_GAMMA) -> Recommendation:
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    for p in curve.points:
        if p.score >= gamma - 1e-12:
            return _from_point(p, SelectionStrategy.PERF_THRESHOLD, curve)
    raise NoFeasibleSku(f"no SKU reaches a performance score of {gamma:g}")


@dataclass
class SelectionContext:
    """Everything besides the traces needed to run one selection."""

    candidates: Sequence[tuple[SkuSpec, ResourceLimits]]
    strategy: SelectionStrategy = SelectionStrategy.DOPPLER
    model: GroupModel | None = None
    epsilon: float = DEFAULT_EPSILON
    gamma: float = DEFAULT_GAMMA
    quantile: float = DEFAULT_QUANTILE
    fallback_group: int | None = None
    flags: frozenset[Flag] = field(default_factory=frozenset)

    def run(self, s: PerfTraceSet) -> Recommendation:
        st = self.strategy
        if st is SelectionStrategy.BASELINE:
            rec = select_baseline(s, self.candidates, self.quantile)
            rec = rec.with_updates(curve=build_curve(s, self.candidates))
        else:
            curve = build_curve(s, self.candidates)
            if st is SelectionStrategy.DOPPLER:
                if self.model is None:
                    raise ValueError("the doppler strategy needs a group model")
                rec = select_doppler(curve, self.model, self.model.profile(s), self.fallback_group)
            elif st is SelectionStrategy.LARGEST_INCREASE:
                rec = select_largest_increase(curve, self.epsilon)
            elif st is SelectionStrategy.LARGEST_SLOPE:
                rec = select_largest_slope(curve)
            else:
                rec = select_perf_threshold(curve, self.gamma)
        return rec.with_updates(flags=rec.flags | self.flags) if self.flags else rec


def _window_samples(s: PerfTraceSet, window: timedelta | int) -> int:
    if isinstance(window, int):
        return window
    return int(round(window.total_seconds() / s.interval_seconds()))


def confidence_score(
    s: PerfTraceSet,
    context: SelectionContext | Callable[[PerfTraceSet], Recommendation],
    replicates: int = DEFAULT_REPLICATES,
    window: timedelta | int = DEFAULT_WINDOW,
    seed: int = 0,
    reference: str | None = None,
) -> float:
    """Share of random contiguous windows whose recommendation matches the full-trace one.

    ``window`` is a duration or a sample count. Replicate ``r`` draws its start
    from a generator seeded with ``(seed, r)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    run = context.run if isinstance(context, SelectionContext) else context
    n = s.grid().size
    w = _window_samples(s, window)
    if w < 1:
        raise ValueError("window must cover at least one sample")
    if w > n:
        raise WindowTooLong(f"window of {w} samples exceeds the trace length of {n}")
    if reference is None:
        reference = run(s).sku_id
    matches = 0
    for r in range(replicates):
        start = int(np.random.default_rng([seed, r]).integers(0, n - w + 1))
        try:
            sku = run(s.slice(start, start + w)).sku_id
        except NoFeasibleError:
            sku = None
        matches += sku == reference
    return matches / replicates


@dataclass(frozen=True)
class BacktestReport:
    total: int
    excluded_overprovisioned: int
    exact_match: int
    per_tier_accuracy: Mapping[str, float] = field(default_factory=dict)
    strategy: str = ""

    @property
    def evaluated(self) -> int:
        return self.total - self.excluded_overprovisioned

    @property
    def accuracy(self) -> float:
        return self.exact_match / self.evaluated if self.evaluated > 0 else 0.0

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "total": self.total,
            "excluded_overprovisioned": self.excluded_overprovisioned,
            "exact_match": self.exact_match,
            "accuracy": self.accuracy,
            "per_tier_accuracy": dict(sorted(self.per_tier_accuracy.items())),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def backtest(
    dataset: Iterable[tuple[PerfTraceSet, str]],
    catalog: SkuCatalog,
    model: GroupModel | None,
    strategy: SelectionStrategy = SelectionStrategy.DOPPLER,
    *,
    deployment: Deployment | None = None,
    layouts: Mapping[str, FileLayout] | None = None,
    price_factor: float = DEFAULT_PRICE_FACTOR,
    epsilon: float = DEFAULT_EPSILON,
    gamma: float = DEFAULT_GAMMA,
    quantile: float = DEFAULT_QUANTILE,
    outcomes: list[tuple[str, str, str | None, bool]] | None = None,
) -> BacktestReport:
    """Replay a strategy on labelled customers and count exact SKU matches.

    Customers whose label is over-provisioned are excluded. A strategy that
    cannot recommend anything counts as a miss. ``outcomes`` collects
    ``(object_id, label, predicted, excluded)`` rows when given.
    """
    dataset = list(dataset)
    for s, label in dataset:
        if label not in catalog:
            raise UnknownSku(f"{s.object_id}: label {label!r} not in catalog")
    if deployment is None:
        deployment = model.deployment if model is not None else catalog.get(dataset[0][1]).deployment
    layouts = layouts or {}
    excluded = matched = 0
    tier_hits: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for s, label in dataset:
        cands = candidate_limits(catalog, deployment, layouts.get(s.object_id))
        curve = build_curve(s, cands)
        if detect_overprovision(curve, label, price_factor):
            excluded += 1
            if outcomes is not None:
                outcomes.append((s.object_id, label, None, True))
            continue
        ctx = SelectionContext(cands, strategy, model, epsilon, gamma, quantile)
        try:
            predicted = ctx.run(s).sku_id
        except NoFeasibleError:
            predicted = None
        hit = int(predicted == label)
        matched += hit
        hits = tier_hits[catalog.get(label).tier.value]
        hits[0] += hit
        hits[1] += 1
        if outcomes is not None:
            outcomes.append((s.object_id, label, predicted, False))
    return BacktestReport(
        total=len(dataset),
        excluded_overprovisioned=excluded,
        exact_match=matched,
        per_tier_accuracy={t: h / n for t, (h, n) in tier_hits.items()},
        strategy=strategy.value,
    )
