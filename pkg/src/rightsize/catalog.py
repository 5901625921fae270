"""SKU catalog: resource limits, prices, and MI storage-tier logic."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping

from rightsize.errors import (
    DuplicateSkuId,
    EmptyCatalog,
    FileTooLarge,
    MalformedCatalog,
    NoCandidateSku,
)

if TYPE_CHECKING:
    from rightsize.ingest import WorkloadSummary

# Latency 0 is clamped to this many ms before inversion.
LATENCY_EPSILON_MS = 1e-6

MI_STORAGE_COVERAGE = 1.0
MI_IO_COVERAGE = 0.95


class Direction(enum.Enum):
    UPPER_BOUNDED = "upper"
    INVERSE_UPPER_BOUNDED = "inverse"


class ResourceDimension(enum.Enum):
    CPU = "cpu"
    MEMORY = "memory"
    IOPS = "iops"
    IO_LATENCY = "io_latency"
    LOG_RATE = "log_rate"
    STORAGE = "storage"

    @property
    def direction(self) -> Direction:
        if self is ResourceDimension.IO_LATENCY:
            return Direction.INVERSE_UPPER_BOUNDED
        return Direction.UPPER_BOUNDED

    @classmethod
    def parse(cls, text: str) -> "ResourceDimension":
        return cls(text.strip().lower())


class Deployment(enum.Enum):
    DB = "db"
    MI = "mi"


class Tier(enum.Enum):
    GENERAL_PURPOSE = "gp"
    BUSINESS_CRITICAL = "bc"


# JSON key -> dimension. io_latency_ms is stored as a latency and inverted on load.
_LIMIT_KEYS = {
    "cpu": ResourceDimension.CPU,
    "memory_gib": ResourceDimension.MEMORY,
    "iops": ResourceDimension.IOPS,
    "io_latency_ms": ResourceDimension.IO_LATENCY,
    "log_rate_mibps": ResourceDimension.LOG_RATE,
    "storage_gib": ResourceDimension.STORAGE,
}


@dataclass(frozen=True)
class ResourceLimits:
    """Per-dimension capacity. A missing dimension is unconstrained.

    The IO latency entry is a capability in 1/ms, so that every dimension
    reads as "usage above the limit throttles".
    """

    values: Mapping[ResourceDimension, float] = field(default_factory=dict)

    def __post_init__(self):
        for dim, value in self.values.items():
            if not isinstance(dim, ResourceDimension):
                raise TypeError(f"limit key must be a ResourceDimension, got {dim!r}")
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"limit for {dim.value} must be finite and >= 0, got {value}")
        object.__setattr__(self, "values", dict(self.values))

    def __hash__(self) -> int:
        return hash(frozenset(self.values.items()))

    def get(self, dim: ResourceDimension) -> float | None:
        return self.values.get(dim)

    def __contains__(self, dim: object) -> bool:
        return dim in self.values

    def __iter__(self) -> Iterator[ResourceDimension]:
        return iter(self.values)

    def with_limit(self, dim: ResourceDimension, value: float | None) -> "ResourceLimits":
        values = dict(self.values)
        if value is None:
            values.pop(dim, None)
        else:
            values[dim] = value
        return ResourceLimits(values)

    def dominates(self, other: "ResourceLimits") -> bool:
        """True if every constraint of ``self`` is at least as loose as ``other``'s."""
        for dim in ResourceDimension:
            mine, theirs = self.get(dim), other.get(dim)
            if mine is None:
                continue
            if theirs is None or mine < theirs:
                return False
        return True

    @classmethod
    def from_json(cls, doc: Mapping) -> "ResourceLimits":
        values = {}
        for key, raw in doc.items():
            if key not in _LIMIT_KEYS:
                raise MalformedCatalog(f"unknown limit key {key!r}")
            if raw is None:
                continue
            value = _number(raw, f"limits.{key}")
            dim = _LIMIT_KEYS[key]
            if dim is ResourceDimension.IO_LATENCY:
                if value < 0:
                    raise MalformedCatalog(f"io_latency_ms must be >= 0, got {value}")
                value = 1.0 / max(value, LATENCY_EPSILON_MS)
            values[dim] = value
        try:
            return cls(values)
        except ValueError as exc:
            raise MalformedCatalog(str(exc)) from None

    def to_json(self) -> dict:
        out = {}
        for key, dim in _LIMIT_KEYS.items():
            if dim in self.values:
                value = self.values[dim]
                out[key] = 1.0 / value if dim is ResourceDimension.IO_LATENCY and value > 0 else value
        return out


@dataclass(frozen=True)
class SkuSpec:
    id: str
    deployment: Deployment
    tier: Tier
    vcores: int
    limits: ResourceLimits
    monthly_price: float

    def __post_init__(self):
        if not self.id:
            raise ValueError("SKU id must be non-empty")
        if not (self.monthly_price > 0 and math.isfinite(self.monthly_price)):
            raise ValueError(f"{self.id}: monthly_price must be positive, got {self.monthly_price}")
        if self.vcores < 1:
            raise ValueError(f"{self.id}: vcores must be a positive integer")


@dataclass(frozen=True)
class StorageTier:
    """A premium-disk class. ``min_gib`` is exclusive (except for the first tier), ``max_gib`` inclusive."""

    name: str
    min_gib: float
    max_gib: float
    iops: int
    throughput_mibps: float

    def contains(self, size_gib: float, first: bool = False) -> bool:
        lower_ok = size_gib >= self.min_gib if first else size_gib > self.min_gib
        return lower_ok and size_gib <= self.max_gib


@dataclass(frozen=True)
class FileLayout:
    file_sizes: tuple[float, ...]

    def __init__(self, file_sizes: Iterable[float]):
        sizes = tuple(float(s) for s in file_sizes)
        if not sizes:
            raise ValueError("file layout must contain at least one file")
        for s in sizes:
            if not (s > 0 and math.isfinite(s)):
                raise ValueError(f"file size must be positive, got {s}")
        object.__setattr__(self, "file_sizes", sizes)

    @classmethod
    def load(cls, path: str | Path) -> "FileLayout":
        """Read a layout file: a JSON list of GiB sizes or ``{"file_sizes_gib": [...]}``."""
        doc = json.loads(Path(path).read_text())
        if isinstance(doc, Mapping):
            doc = doc.get("file_sizes_gib", doc.get("file_sizes"))
        if not isinstance(doc, list):
            raise ValueError(f"{path}: expected a list of file sizes")
        return cls(doc)


@dataclass(frozen=True)
class SkuCatalog:
    skus: tuple[SkuSpec, ...]
    storage_tiers: tuple[StorageTier, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "skus", tuple(self.skus))
        object.__setattr__(self, "storage_tiers", tuple(self.storage_tiers))
        if not self.skus:
            raise EmptyCatalog("catalog contains no SKUs")
        seen = set()
        for sku in self.skus:
            if sku.id in seen:
                raise DuplicateSkuId(f"duplicate SKU id {sku.id!r}")
            seen.add(sku.id)
        if any(s.deployment is Deployment.MI for s in self.skus) and not self.storage_tiers:
            raise MalformedCatalog("MI SKUs present but storage tier table is empty")
        _check_tiers(self.storage_tiers)

    def get(self, sku_id: str) -> SkuSpec:
        for sku in self.skus:
            if sku.id == sku_id:
                return sku
        raise KeyError(sku_id)

    def __contains__(self, sku_id: object) -> bool:
        return any(s.id == sku_id for s in self.skus)

    def for_deployment(self, deployment: Deployment) -> list[SkuSpec]:
        return [s for s in self.skus if s.deployment is deployment]


def _check_tiers(tiers: tuple[StorageTier, ...]) -> None:
    for t in tiers:
        if not (t.max_gib > t.min_gib >= 0):
            raise MalformedCatalog(f"tier {t.name}: empty or negative range ({t.min_gib}, {t.max_gib}]")
        if t.iops <= 0 or t.throughput_mibps <= 0:
            raise MalformedCatalog(f"tier {t.name}: iops and throughput must be positive")
    for a, b in zip(tiers, tiers[1:]):
        if b.min_gib < a.max_gib:
            raise MalformedCatalog(f"tier ranges overlap or are unordered: {a.name} and {b.name}")
        if b.iops < a.iops or b.throughput_mibps < a.throughput_mibps:
            raise MalformedCatalog(f"tier {b.name} has lower IOPS/throughput than {a.name}")


def _number(raw, where: str) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise MalformedCatalog(f"{where}: expected a number, got {raw!r}")
    value = float(raw)
    if not math.isfinite(value):
        raise MalformedCatalog(f"{where}: must be finite")
    return value


def _enum(cls, raw, where: str):
    try:
        return cls(str(raw).lower())
    except ValueError:
        choices = "|".join(m.value for m in cls)
        raise MalformedCatalog(f"{where}: expected one of {choices}, got {raw!r}") from None


def _parse_sku(doc, index: int) -> SkuSpec:
    where = f"skus[{index}]"
    if not isinstance(doc, Mapping):
        raise MalformedCatalog(f"{where}: expected an object")
    missing = {"id", "deployment", "tier", "vcores", "monthly_price", "limits"} - doc.keys()
    if missing:
        raise MalformedCatalog(f"{where}: missing keys {sorted(missing)}")
    if not isinstance(doc["limits"], Mapping):
        raise MalformedCatalog(f"{where}.limits: expected an object")
    vcores = doc["vcores"]
    if isinstance(vcores, bool) or not isinstance(vcores, int):
        raise MalformedCatalog(f"{where}.vcores: expected an integer")
    try:
        return SkuSpec(
            id=str(doc["id"]),
            deployment=_enum(Deployment, doc["deployment"], f"{where}.deployment"),
            tier=_enum(Tier, doc["tier"], f"{where}.tier"),
            vcores=vcores,
            limits=ResourceLimits.from_json(doc["limits"]),
            monthly_price=_number(doc["monthly_price"], f"{where}.monthly_price"),
        )
    except ValueError as exc:
        if isinstance(exc, MalformedCatalog):
            raise
        raise MalformedCatalog(f"{where}: {exc}") from None


def _parse_tier(doc, index: int) -> StorageTier:
    where = f"storage_tiers[{index}]"
    if not isinstance(doc, Mapping):
        raise MalformedCatalog(f"{where}: expected an object")
    missing = {"name", "min_gib_exclusive", "max_gib_inclusive", "iops", "throughput_mibps"} - doc.keys()
    if missing:
        raise MalformedCatalog(f"{where}: missing keys {sorted(missing)}")
    return StorageTier(
        name=str(doc["name"]),
        min_gib=_number(doc["min_gib_exclusive"], f"{where}.min_gib_exclusive"),
        max_gib=_number(doc["max_gib_inclusive"], f"{where}.max_gib_inclusive"),
        iops=int(_number(doc["iops"], f"{where}.iops")),
        throughput_mibps=_number(doc["throughput_mibps"], f"{where}.throughput_mibps"),
    )


def catalog_from_json(doc) -> SkuCatalog:
    if not isinstance(doc, Mapping) or "skus" not in doc:
        raise MalformedCatalog('catalog must be an object with a "skus" list')
    skus, tiers = doc["skus"], doc.get("storage_tiers", [])
    if not isinstance(skus, list) or not isinstance(tiers, list):
        raise MalformedCatalog('"skus" and "storage_tiers" must be lists')
    if not skus:
        raise EmptyCatalog("catalog contains no SKUs")
    return SkuCatalog(
        skus=tuple(_parse_sku(s, i) for i, s in enumerate(skus)),
        storage_tiers=tuple(_parse_tier(t, i) for i, t in enumerate(tiers)),
    )


def load_catalog(path: str | Path) -> SkuCatalog:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedCatalog(f"{path}: invalid JSON ({exc})") from None
    return catalog_from_json(doc)


def default_catalog() -> SkuCatalog:
    """The bundled sample catalog. Prices and the P30/P40 tiers are illustrative."""
    text = resources.files("rightsize.data").joinpath("default_catalog.json").read_text()
    return catalog_from_json(json.loads(text))


def catalog_to_json(catalog: SkuCatalog) -> dict:
    return {
        "skus": [
            {
                "id": s.id,
                "deployment": s.deployment.value,
                "tier": s.tier.value,
                "vcores": s.vcores,
                "monthly_price": s.monthly_price,
                "limits": s.limits.to_json(),
            }
            for s in catalog.skus
        ],
        "storage_tiers": [
            {
                "name": t.name,
                "min_gib_exclusive": t.min_gib,
                "max_gib_inclusive": t.max_gib,
                "iops": t.iops,
                "throughput_mibps": t.throughput_mibps,
            }
            for t in catalog.storage_tiers
        ],
    }


def storage_tier_for_file(size: float, tiers: Iterable[StorageTier]) -> StorageTier:
    tiers = tuple(tiers)
    if not tiers:
        raise ValueError("storage tier table is empty")
    if not size > 0:
        raise ValueError(f"file size must be positive, got {size}")
    for i, tier in enumerate(tiers):
        if tier.contains(size, first=i == 0):
            return tier
    if size > tiers[-1].max_gib:
        raise FileTooLarge(f"file of {size} GiB exceeds largest tier {tiers[-1].name} ({tiers[-1].max_gib} GiB)")
    raise ValueError(f"file of {size} GiB falls in a gap of the tier table")


def layout_throughput(layout: FileLayout, tiers: Iterable[StorageTier]) -> float:
    """Summed per-file throughput (MiB/s) for a GP managed-instance layout."""
    tiers = tuple(tiers)
    return sum(storage_tier_for_file(s, tiers).throughput_mibps for s in layout.file_sizes)


def mi_effective_limits(sku: SkuSpec, layout: FileLayout, tiers: Iterable[StorageTier]) -> ResourceLimits:
    """Limits of an MI SKU once the data-file layout is fixed.

    GP instances get an IOPS limit equal to the sum of the per-file disk tiers.
    BC instances run on local storage, so their catalog limits stand.
    Throughput is not a trace dimension; see :func:`layout_throughput`.
    """
    if sku.deployment is not Deployment.MI:
        raise ValueError(f"{sku.id} is not a managed-instance SKU")
    if sku.tier is Tier.BUSINESS_CRITICAL:
        return sku.limits
    tiers = tuple(tiers)
    iops = sum(storage_tier_for_file(s, tiers).iops for s in layout.file_sizes)
    return sku.limits.with_limit(ResourceDimension.IOPS, float(iops))


def filter_mi_skus(
    catalog: SkuCatalog, layout: FileLayout, summary: "WorkloadSummary"
) -> tuple[list[SkuSpec], bool]:
    """Storage/IO pre-filter for managed-instance SKUs.

    Returns ``(candidates, escalated_to_bc)``. A SKU qualifies when its storage
    covers the full storage requirement and its effective IOPS and throughput
    cover 95% of theirs. If no GP SKU qualifies, only BC SKUs are considered.
    """
    storage_req = summary.get(ResourceDimension.STORAGE) or 0.0
    iops_req = summary.get(ResourceDimension.IOPS) or 0.0
    throughput_req = summary.throughput_mibps or 0.0

    def qualifies(sku: SkuSpec) -> bool:
        limits = mi_effective_limits(sku, layout, catalog.storage_tiers)
        storage = limits.get(ResourceDimension.STORAGE)
        if storage is not None and storage < MI_STORAGE_COVERAGE * storage_req:
            return False
        iops = limits.get(ResourceDimension.IOPS)
        if iops is not None and iops < MI_IO_COVERAGE * iops_req:
            return False
        if sku.tier is Tier.GENERAL_PURPOSE and throughput_req > 0:
            if layout_throughput(layout, catalog.storage_tiers) < MI_IO_COVERAGE * throughput_req:
                return False
        return True

    mi = catalog.for_deployment(Deployment.MI)
    passing = [s for s in mi if qualifies(s)]
    if any(s.tier is Tier.GENERAL_PURPOSE for s in passing):
        return passing, False
    bc = [s for s in passing if s.tier is Tier.BUSINESS_CRITICAL]
    if not bc:
        raise NoCandidateSku("no managed-instance SKU meets the storage/IOPS/throughput requirements")
    return bc, True


def candidate_limits(
    catalog: SkuCatalog,
    deployment: Deployment,
    layout: FileLayout | None = None,
    skus: Iterable[SkuSpec] | None = None,
) -> list[tuple[SkuSpec, ResourceLimits]]:
    """Pair each SKU of ``deployment`` with its effective limits."""
    skus = list(skus) if skus is not None else catalog.for_deployment(deployment)
    if not skus:
        raise NoCandidateSku(f"catalog has no {deployment.value} SKUs")
    if deployment is Deployment.MI:
        if layout is None:
            raise ValueError("a file layout is required for managed-instance targets")
        return [(s, mi_effective_limits(s, layout, catalog.storage_tiers)) for s in skus]
    return [(s, s.limits) for s in skus]


__all__ = [
    "Deployment",
    "Direction",
    "FileLayout",
    "ResourceDimension",
    "ResourceLimits",
    "SkuCatalog",
    "SkuSpec",
    "StorageTier",
    "Tier",
    "candidate_limits",
    "catalog_from_json",
    "catalog_to_json",
    "default_catalog",
    "filter_mi_skus",
    "layout_throughput",
    "load_catalog",
    "mi_effective_limits",
    "storage_tier_for_file",
]
