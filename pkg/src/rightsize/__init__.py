"""Right-sizing engine: map resource-usage history to a cost-efficient cloud SKU."""

from rightsize.catalog import (
    Deployment,
    FileLayout,
    ResourceDimension,
    ResourceLimits,
    SkuCatalog,
    SkuSpec,
    StorageTier,
    Tier,
    load_catalog,
)
from rightsize.ingest import Level, PerfTrace, PerfTraceSet, WorkloadSummary, parse_traces
from rightsize.ppm import CurvePoint, CurveShape, PricePerfCurve, build_curve
from rightsize.profiler import GroupModel, NegotiabilityVector, Strategy, train_groups
from rightsize.recommend import BacktestReport, Recommendation, backtest, select_doppler

__all__ = [
    "BacktestReport",
    "CurvePoint",
    "CurveShape",
    "Deployment",
    "FileLayout",
    "GroupModel",
    "Level",
    "NegotiabilityVector",
    "PerfTrace",
    "PerfTraceSet",
    "PricePerfCurve",
    "Recommendation",
    "ResourceDimension",
    "ResourceLimits",
    "SkuCatalog",
    "SkuSpec",
    "StorageTier",
    "Strategy",
    "Tier",
    "WorkloadSummary",
    "backtest",
    "build_curve",
    "load_catalog",
    "parse_traces",
    "select_doppler",
    "train_groups",
]

__version__ = "0.1.0"
