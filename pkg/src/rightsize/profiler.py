"""Workload profiling: per-dimension negotiability, customer groups, group tolerances."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from rightsize.catalog import Deployment, FileLayout, ResourceDimension, SkuCatalog, candidate_limits
from rightsize.errors import EmptyGroupModel, IncompleteVector, TraceTooShort, UnknownSku
from rightsize.ingest import PerfTrace, PerfTraceSet
from rightsize.ppm import DEFAULT_PRICE_FACTOR, build_curve, detect_overprovision, throttling_probability

DEFAULT_RHO = 0.05
DEFAULT_PERIOD = 144  # one day of 10-minute samples

DIMENSION_ORDER = {
    Deployment.DB: (
        ResourceDimension.CPU,
        ResourceDimension.MEMORY,
        ResourceDimension.IOPS,
        ResourceDimension.LOG_RATE,
    ),
    Deployment.MI: (ResourceDimension.CPU, ResourceDimension.MEMORY, ResourceDimension.IOPS),
}


class Strategy(enum.Enum):
    THRESHOLD = "threshold"
    MINMAX_AUC = "minmax-auc"
    MAX_AUC = "max-auc"
    OUTLIER_PCT = "outlier"
    STL_VAR = "stl"
    MINMAX_AUC_PLUS_THRESHOLD = "combined"


DEFAULT_CUTOFFS = {
    Strategy.MINMAX_AUC: 0.8,
    Strategy.MAX_AUC: 0.8,
    Strategy.OUTLIER_PCT: 0.01,
    Strategy.STL_VAR: 0.5,
}


def _values(trace: PerfTrace | np.ndarray) -> np.ndarray:
    return np.asarray(trace.values if isinstance(trace, PerfTrace) else trace, dtype=float)


def negotiability_threshold(trace: PerfTrace | np.ndarray, rho: float = DEFAULT_RHO) -> tuple[int, float]:
    """Spike-duration test.

    Counts the share of samples within one (population) standard deviation
    below the peak. A dimension that sits near its peak for less than ``rho``
    of the time is negotiable (bit 1).
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    v = _values(trace)
    peak = v.max()
    window_low = peak - v.std()
    fraction = float(np.count_nonzero(v >= window_low)) / v.size
    return int(fraction < rho), fraction


def _ecdf_area(scaled: np.ndarray) -> float:
    # The ECDF of values in [0, 1] integrates to 1 - mean over [0, 1].
    return float(np.clip(1.0 - scaled.mean(), 0.0, 1.0))


def negotiability_minmax_auc(trace: PerfTrace | np.ndarray) -> float:
    """Area under the ECDF of min-max scaled values; constant traces score 1."""
    v = _values(trace)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return 1.0
    return _ecdf_area((v - lo) / (hi - lo))


def negotiability_max_auc(trace: PerfTrace | np.ndarray) -> float:
    """Area under the ECDF of max-scaled values; an all-zero trace scores 0."""
    v = _values(trace)
    hi = v.max()
    if hi <= 0:
        return 0.0
    return _ecdf_area(v / hi)


def negotiability_outlier_pct(trace: PerfTrace | np.ndarray) -> float:
    v = _values(trace)
    std = v.std()
    if std == 0:
        return 0.0
    return float(np.count_nonzero(np.abs(v - v.mean()) > 3.0 * std)) / v.size


def _centered_moving_average(v: np.ndarray, period: int) -> np.ndarray:
    if period % 2:
        weights = np.full(period, 1.0 / period)
    else:
        weights = np.r_[0.5, np.ones(period - 1), 0.5] / period
    half = len(weights) // 2
    trend = np.full(v.size, np.nan)
    trend[half : v.size - half] = np.convolve(v, weights, mode="valid")
    return trend


def seasonal_decompose(v: np.ndarray, period: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classical additive decomposition into (trend, seasonal, residual).

    Trend and residual are NaN at the edges where the moving average is undefined.
    """
    v = np.asarray(v, dtype=float)
    if period < 1:
        raise ValueError("period must be positive")
    if v.size < 2 * period:
        raise TraceTooShort(f"need at least {2 * period} samples for period {period}, got {v.size}")
    trend = _centered_moving_average(v, period) if period > 1 else v.copy()
    detrended = v - trend
    phase = np.arange(v.size) % period
    means = np.array([np.nanmean(detrended[phase == k]) for k in range(period)])
    means -= means.mean()
    seasonal = means[phase]
    return trend, seasonal, v - trend - seasonal


def negotiability_stl(trace: PerfTrace | np.ndarray, period: int = DEFAULT_PERIOD) -> float:
    """Share of variance explained by trend plus seasonality, floored at 0.

    Uses a moving-average decomposition. Constant traces score 1.
    """
    v = _values(trace)
    _, _, resid = seasonal_decompose(v, period)
    total = v.var()
    if total == 0:
        return 1.0
    resid = resid[~np.isnan(resid)]
    return float(max(0.0, 1.0 - resid.var() / total))


def negotiability_combined(trace: PerfTrace | np.ndarray, rho: float = DEFAULT_RHO) -> tuple[float, int]:
    return negotiability_minmax_auc(trace), negotiability_threshold(trace, rho)[0]


@dataclass(frozen=True)
class NegotiabilityVector:
    """Bits (1 = negotiable) and the raw scores they came from, in dimension order."""

    bits: Mapping[ResourceDimension, int]
    raw_scores: Mapping[ResourceDimension, float] = field(default_factory=dict)

    def __post_init__(self):
        for b in self.bits.values():
            if b not in (0, 1):
                raise ValueError(f"bits must be 0 or 1, got {b!r}")
        object.__setattr__(self, "bits", dict(self.bits))
        object.__setattr__(self, "raw_scores", dict(self.raw_scores))

    def as_tuple(self, deployment: Deployment) -> tuple[int, ...]:
        return tuple(self.bits[d] for d in DIMENSION_ORDER[deployment])

    def deployment(self) -> Deployment:
        for dep, dims in DIMENSION_ORDER.items():
            if tuple(self.bits) == dims:
                return dep
        raise IncompleteVector(f"bits {[d.value for d in self.bits]} do not match a deployment's dimension order")


def binarize(
    raw_scores: Mapping[ResourceDimension, float],
    cutoffs: Mapping[ResourceDimension, float] | float,
    strategy: Strategy,
) -> NegotiabilityVector:
    """Turn continuous scores into negotiability bits.

    Spikiness scores (AUC, outlier share) are negotiable at or above the
    cutoff; the decomposition score is negotiable below it.
    """
    if strategy in (Strategy.THRESHOLD, Strategy.MINMAX_AUC_PLUS_THRESHOLD):
        raise ValueError(f"{strategy.value} produces bits directly")
    bits = {}
    for dim, score in raw_scores.items():
        cut = cutoffs if isinstance(cutoffs, (int, float)) else cutoffs[dim]
        bits[dim] = int(score < cut) if strategy is Strategy.STL_VAR else int(score >= cut)
    return NegotiabilityVector(bits, raw_scores)


def negotiability_vector(
    s: PerfTraceSet,
    deployment: Deployment,
    strategy: Strategy = Strategy.THRESHOLD,
    rho: float = DEFAULT_RHO,
    cutoffs: Mapping[ResourceDimension, float] | None = None,
    period: int = DEFAULT_PERIOD,
) -> NegotiabilityVector:
    """Profile every grouping dimension of ``s``.

    A dimension with no trace is treated as non-negotiable with raw score 0.
    """
    dims = DIMENSION_ORDER[deployment]
    bits: dict[ResourceDimension, int] = {}
    raw: dict[ResourceDimension, float] = {}
    present = [d for d in dims if d in s]
    if strategy is Strategy.THRESHOLD:
        for d in present:
            bits[d], raw[d] = negotiability_threshold(s[d], rho)
    elif strategy is Strategy.MINMAX_AUC_PLUS_THRESHOLD:
        for d in present:
            raw[d], bits[d] = negotiability_combined(s[d], rho)
    else:
        scorer = {
            Strategy.MINMAX_AUC: negotiability_minmax_auc,
            Strategy.MAX_AUC: negotiability_max_auc,
            Strategy.OUTLIER_PCT: negotiability_outlier_pct,
            Strategy.STL_VAR: lambda t: negotiability_stl(t, period),
        }[strategy]
        scores = {d: scorer(s[d]) for d in present}
        cuts = {d: (cutoffs or {}).get(d, DEFAULT_CUTOFFS[strategy]) for d in present}
        vec = binarize(scores, cuts, strategy)
        bits.update(vec.bits)
        raw.update(vec.raw_scores)
    return NegotiabilityVector(
        {d: bits.get(d, 0) for d in dims},
        {d: raw.get(d, 0.0) for d in dims},
    )


def group_membership(vector: NegotiabilityVector, deployment: Deployment | None = None) -> int:
    """Binary encoding of the bits, first dimension most significant."""
    deployment = deployment or vector.deployment()
    dims = DIMENSION_ORDER[deployment]
    missing = [d.value for d in dims if d not in vector.bits]
    if missing:
        raise IncompleteVector(f"missing negotiability bits for {missing}")
    gid = 0
    for d in dims:
        gid = (gid << 1) | vector.bits[d]
    return gid


def group_bits(group_id: int, deployment: Deployment) -> tuple[int, ...]:
    d = len(DIMENSION_ORDER[deployment])
    if not 0 <= group_id < 2**d:
        raise ValueError(f"group id {group_id} out of range for {deployment.value}")
    return tuple((group_id >> (d - 1 - i)) & 1 for i in range(d))


@dataclass(frozen=True)
class GroupStats:
    mean_throttling: float
    std: float
    count: int


@dataclass(frozen=True)
class GroupModel:
    deployment: Deployment
    strategy: Strategy
    groups: Mapping[int, GroupStats]
    rho: float = DEFAULT_RHO
    cutoffs: Mapping[ResourceDimension, float] = field(default_factory=dict)
    period: int = DEFAULT_PERIOD

    def __post_init__(self):
        size = 2 ** len(DIMENSION_ORDER[self.deployment])
        for gid, stats in self.groups.items():
            if not 0 <= gid < size:
                raise ValueError(f"group id {gid} out of range")
            if not 0 <= stats.mean_throttling <= 1:
                raise ValueError(f"group {gid}: mean_throttling must be in [0, 1]")
        object.__setattr__(self, "groups", dict(sorted(self.groups.items())))
        object.__setattr__(self, "cutoffs", dict(self.cutoffs))

    def profile(self, s: PerfTraceSet) -> NegotiabilityVector:
        return negotiability_vector(s, self.deployment, self.strategy, self.rho, self.cutoffs or None, self.period)

    def to_json(self) -> dict:
        return {
            "deployment": self.deployment.value,
            "strategy": self.strategy.value,
            "rho": self.rho,
            "period": self.period,
            "cutoffs": {d.value: c for d, c in sorted(self.cutoffs.items(), key=lambda kv: kv[0].value)},
            "groups": [
                {
                    "id": gid,
                    "bits": list(group_bits(gid, self.deployment)),
                    "mean_throttling": st.mean_throttling,
                    "std": st.std,
                    "count": st.count,
                }
                for gid, st in self.groups.items()
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "GroupModel":
        deployment = Deployment(doc["deployment"])
        groups = {}
        for g in doc["groups"]:
            gid = int(g["id"])
            if "bits" in g and tuple(g["bits"]) != group_bits(gid, deployment):
                raise ValueError(f"group {gid}: bits {g['bits']} do not encode its id")
            groups[gid] = GroupStats(float(g["mean_throttling"]), float(g["std"]), int(g["count"]))
        return cls(
            deployment=deployment,
            strategy=Strategy(doc["strategy"]),
            groups=groups,
            rho=float(doc.get("rho", DEFAULT_RHO)),
            cutoffs={ResourceDimension(k): float(v) for k, v in doc.get("cutoffs", {}).items()},
            period=int(doc.get("period", DEFAULT_PERIOD)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GroupModel":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TrainingRecord:
    object_id: str
    group_id: int
    throttling_prob: float
    overprovisioned: bool


def train_groups(
    dataset: Iterable[tuple[PerfTraceSet, str]],
    catalog: SkuCatalog,
    strategy: Strategy = Strategy.THRESHOLD,
    rho: float = DEFAULT_RHO,
    cutoffs: Mapping[ResourceDimension, float] | None = None,
    *,
    deployment: Deployment | None = None,
    layouts: Mapping[str, FileLayout] | None = None,
    price_factor: float = DEFAULT_PRICE_FACTOR,
    period: int = DEFAULT_PERIOD,
    records: list[TrainingRecord] | None = None,
) -> GroupModel:
    """Learn each group's tolerance as the mean throttling of its members' chosen SKUs.

    Members whose chosen SKU is over-provisioned are left out. If ``records``
    is given, per-customer outcomes are appended to it.
    """
    dataset = list(dataset)
    if not dataset:
        raise EmptyGroupModel("training dataset is empty")
    for s, sku_id in dataset:
        if sku_id not in catalog:
            raise UnknownSku(f"{s.object_id}: chosen SKU {sku_id!r} not in catalog")
    if deployment is None:
        deps = {catalog.get(sku_id).deployment for _, sku_id in dataset}
        if len(deps) != 1:
            raise ValueError("training labels mix deployments; pass deployment explicitly")
        (deployment,) = deps
    layouts = layouts or {}

    members: dict[int, list[float]] = {}
    for s, sku_id in dataset:
        cands = candidate_limits(catalog, deployment, layouts.get(s.object_id))
        limits = dict((sku.id, lim) for sku, lim in cands)
        if sku_id not in limits:
            raise UnknownSku(f"{s.object_id}: chosen SKU {sku_id!r} is not a {deployment.value} SKU")
        curve = build_curve(s, cands)
        prob = throttling_probability(s, limits[sku_id])
        over = detect_overprovision(curve, sku_id, price_factor)
        gid = group_membership(negotiability_vector(s, deployment, strategy, rho, cutoffs, period), deployment)
        if records is not None:
            records.append(TrainingRecord(s.object_id, gid, prob, over))
        if not over:
            members.setdefault(gid, []).append(prob)
    if not members:
        raise EmptyGroupModel("every training customer was excluded as over-provisioned")
    groups = {gid: GroupStats(sum(p) / len(p), float(np.std(p)), len(p)) for gid, p in members.items()}
    if strategy in DEFAULT_CUTOFFS:
        dims = DIMENSION_ORDER[deployment]
        cut = {d: (cutoffs or {}).get(d, DEFAULT_CUTOFFS[strategy]) for d in dims}
    else:
        cut = {}
    return GroupModel(deployment, strategy, groups, rho, cut, period)


def kmeans_groups(
    vectors: Sequence[Sequence[float]] | np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-9,
) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding. Returns a cluster index per vector."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)

    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total == 0:
            # every point already sits on a center; take an unused one
            used = {tuple(c) for c in centers}
            pick = next((i for i in range(n) if tuple(X[i]) not in used), int(rng.integers(n)))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers.append(X[pick])
    C = np.array(centers)

    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dist = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        labels = dist.argmin(axis=1)
        new = np.array([X[labels == j].mean(axis=0) if np.any(labels == j) else C[j] for j in range(k)])
        shift = np.abs(new - C).max()
        C = new
        if shift < tol:
            break
    return ((X[:, None, :] - C[None]) ** 2).sum(-1).argmin(axis=1)
