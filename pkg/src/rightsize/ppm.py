"""Price-performance modeling: throttling probability, monotone curves, shapes."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rightsize.catalog import ResourceDimension, ResourceLimits, SkuSpec
from rightsize.errors import NoCandidateSku, UnknownSku
from rightsize.ingest import PerfTraceSet

SCORE_TOL = 1e-9
DEFAULT_PRICE_FACTOR = 2.0


@dataclass(frozen=True)
class CurvePoint:
    sku_id: str
    monthly_price: float
    throttling_prob: float

    @property
    def score(self) -> float:
        return 1.0 - self.throttling_prob

    def to_json(self) -> dict:
        return {
            "sku_id": self.sku_id,
            "monthly_price": self.monthly_price,
            "throttling_prob": self.throttling_prob,
            "score": self.score,
        }


@dataclass(frozen=True)
class PricePerfCurve:
    """Kept points in ascending price order; ``pruned`` holds dominated SKUs."""

    points: tuple[CurvePoint, ...]
    pruned: tuple[CurvePoint, ...] = field(default=())

    @property
    def pruned_sku_ids(self) -> list[str]:
        return [p.sku_id for p in self.pruned]

    @property
    def scores(self) -> list[float]:
        return [p.score for p in self.points]

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def find(self, sku_id: str) -> CurvePoint:
        for p in self.points + self.pruned:
            if p.sku_id == sku_id:
                return p
        raise UnknownSku(f"SKU {sku_id!r} is not on the curve")


class CurveShape(enum.Enum):
    FLAT = "flat"
    SIMPLE = "simple"
    COMPLEX = "complex"


def exceedance_mask(s: PerfTraceSet, limits: ResourceLimits) -> np.ndarray:
    """Boolean per timestamp: usage strictly above the limit in any constrained dimension."""
    grid = s.grid()
    mask = np.zeros(grid.size, dtype=bool)
    for dim, trace in s.traces.items():
        limit = limits.get(dim)
        if limit is None:
            continue
        if dim is ResourceDimension.IO_LATENCY and not trace.inverted:
            raise ValueError("io_latency trace must be inverted before computing throttling")
        mask |= trace.values > limit
    return mask


def throttling_probability(s: PerfTraceSet, limits: ResourceLimits) -> float:
    """Fraction of timestamps at which at least one dimension is over its limit."""
    mask = exceedance_mask(s, limits)
    return float(np.count_nonzero(mask)) / mask.size


def _order_key(p: CurvePoint):
    return (p.monthly_price, -p.score, p.sku_id)


def enforce_monotonicity(points: Sequence[CurvePoint]) -> tuple[list[CurvePoint], list[str]]:
    """Drop every point that a cheaper-or-equal point matches or beats.

    ``points`` must already be in curve order (price, then score descending,
    then id). A point survives only if it scores strictly higher than every
    point before it, which leaves strictly increasing prices and scores.
    """
    kept: list[CurvePoint] = []
    pruned: list[str] = []
    best = -np.inf
    for p in points:
        if p.score > best:
            kept.append(p)
            best = p.score
        else:
            pruned.append(p.sku_id)
    return kept, pruned


def build_curve(s: PerfTraceSet, candidates: Iterable[tuple[SkuSpec, ResourceLimits]]) -> PricePerfCurve:
    candidates = list(candidates)
    if not candidates:
        raise NoCandidateSku("no candidate SKUs to build a curve from")
    raw = sorted(
        (CurvePoint(sku.id, sku.monthly_price, throttling_probability(s, limits)) for sku, limits in candidates),
        key=_order_key,
    )
    kept, pruned_ids = enforce_monotonicity(raw)
    pruned_set = set(pruned_ids)
    return PricePerfCurve(tuple(kept), tuple(p for p in raw if p.sku_id in pruned_set))


def classify_shape(curve: PricePerfCurve) -> CurveShape:
    if not curve.points:
        raise ValueError("empty curve")
    scores = np.array(curve.scores)
    ones = np.abs(scores - 1.0) <= SCORE_TOL
    zeros = np.abs(scores) <= SCORE_TOL
    if ones.all():
        return CurveShape.FLAT
    if (ones | zeros).all() and ones.any() and zeros.any():
        return CurveShape.SIMPLE
    return CurveShape.COMPLEX


def cheapest_full_score(curve: PricePerfCurve) -> CurvePoint | None:
    full = [p for p in curve.points + curve.pruned if abs(p.score - 1.0) <= SCORE_TOL]
    return min(full, key=_order_key) if full else None


def detect_overprovision(curve: PricePerfCurve, chosen_sku: str, price_factor: float = DEFAULT_PRICE_FACTOR) -> bool:
    """True if ``chosen_sku`` costs at least ``price_factor`` times the cheapest SKU meeting all demand."""
    if price_factor < 1:
        raise ValueError("price_factor must be >= 1")
    chosen = curve.find(chosen_sku)
    anchor = cheapest_full_score(curve)
    if anchor is None:
        return False
    return chosen.monthly_price >= price_factor * anchor.monthly_price


def split_curves(
    s: PerfTraceSet, candidates: Sequence[tuple[SkuSpec, ResourceLimits]], split: int
) -> tuple[PricePerfCurve, PricePerfCurve]:
    """Curves for the samples before and after index ``split``."""
    n = s.grid().size
    if not 0 < split < n:
        raise ValueError(f"split index must be inside (0, {n})")
    return build_curve(s.slice(0, split), candidates), build_curve(s.slice(split, n), candidates)


def needs_sku_change(before: PricePerfCurve, after: PricePerfCurve, current_sku: str, tolerance: float = 0.0) -> bool:
    """True if ``current_sku`` throttles more than ``tolerance`` above its earlier level after the change."""
    return after.find(current_sku).throttling_prob > before.find(current_sku).throttling_prob + tolerance


def write_curve_csv(curve: PricePerfCurve, path: str | Path) -> None:
    rows = sorted([(p, False) for p in curve.points] + [(p, True) for p in curve.pruned], key=lambda r: _order_key(r[0]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "sku_id", "monthly_price", "throttling_prob", "score", "pruned"])
        for rank, (p, pruned) in enumerate(rows, start=1):
            writer.writerow(
                [rank, p.sku_id, repr(p.monthly_price), repr(p.throttling_prob), repr(p.score), str(pruned).lower()]
            )
