import json

import numpy as np
import pytest

from rightsize.catalog import (
    Deployment,
    ResourceDimension as D,
    ResourceLimits,
    SkuCatalog,
    SkuSpec,
    StorageTier,
    Tier,
)
from rightsize.ingest import Level
from rightsize.synth import make_set

PUBLISHED_TIERS = (
    StorageTier("P10", 0, 128, 500, 100),
    StorageTier("P20", 128, 512, 2300, 150),
    StorageTier("P30", 512, 1024, 5000, 200),
    StorageTier("P40", 1024, 2048, 7500, 250),
    StorageTier("P50", 2048, 4096, 7500, 250),
    StorageTier("P60", 4096, 8192, 12500, 480),
)


def db_sku(vcores, price, tier=Tier.GENERAL_PURPOSE, extra=None):
    limits = {D.CPU: float(vcores), D.MEMORY: 5.0 * vcores}
    limits.update(extra or {})
    return SkuSpec(f"DB_{tier.value.upper()}_{vcores}", Deployment.DB, tier, vcores, ResourceLimits(limits), price)


@pytest.fixture
def cpu_catalog():
    """Six GP database SKUs that differ only in vCores; price proportional to cores."""
    return SkuCatalog(tuple(db_sku(v, 100.0 * v) for v in (2, 4, 6, 8, 12, 16)))


def workload(series, object_id="w", level=Level.DATABASE):
    return make_set(object_id, {d: np.asarray(v, dtype=float) for d, v in series.items()}, level)


def write_catalog_doc(path, skus, tiers=()):
    doc = {"skus": skus, "storage_tiers": list(tiers)}
    path.write_text(json.dumps(doc))
    return path


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
