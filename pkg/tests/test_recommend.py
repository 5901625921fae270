import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import db_sku, workload
from rightsize.catalog import Deployment, ResourceDimension as D, Tier
from rightsize.errors import NoFeasibleSku, UnknownGroup, UnknownSku, WindowTooLong
from rightsize.ingest import nearest_rank
from rightsize.ppm import CurvePoint, PricePerfCurve
from rightsize.profiler import DIMENSION_ORDER, GroupModel, GroupStats, NegotiabilityVector, Strategy
from rightsize.recommend import (
    BacktestReport,
    Flag,
    SelectionContext,
    SelectionStrategy,
    backtest,
    confidence_score,
    select_baseline,
    select_doppler,
    select_largest_increase,
    select_largest_slope,
    select_perf_threshold,
)


def curve_of(probs=None, scores=None, prices=None):
    if scores is not None:
        probs = [1.0 - s for s in scores]
    prices = prices or [10.0 * (i + 1) for i in range(len(probs))]
    return PricePerfCurve(tuple(CurvePoint(f"s{i}", float(pr), float(p)) for i, (pr, p) in enumerate(zip(prices, probs))))


def uniform_model(tolerance, deployment=Deployment.DB, rho=0.05):
    size = 2 ** len(DIMENSION_ORDER[deployment])
    return GroupModel(deployment, Strategy.THRESHOLD, {g: GroupStats(tolerance, 0.0, 1) for g in range(size)}, rho)


def zero_vector(deployment=Deployment.DB):
    return NegotiabilityVector({d: 0 for d in DIMENSION_ORDER[deployment]})


def scan_oracle(curve, target):
    """Exhaustive scan for the feasible point nearest to target, cheaper on ties."""
    best = None
    for p in curve.points:
        if p.throttling_prob > target:
            continue
        key = (abs(p.throttling_prob - target), p.monthly_price)
        if best is None or key < best[0]:
            best = (key, p.sku_id)
    return best[1] if best else None


class TestDoppler:
    def test_example(self):
        curve = curve_of([0.40, 0.20, 0.10, 0.00])
        rec = select_doppler(curve, uniform_model(0.15), zero_vector())
        assert rec.sku_id == "s2" == scan_oracle(curve, 0.15)
        assert rec.target_tolerance == 0.15 and rec.group_id == 0
        assert Flag.FALLBACK_MOST_PERFORMANT not in rec.flags

    def test_zero_tolerance_picks_cheapest_full(self):
        curve = curve_of([0.3, 0.0, 0.0], prices=[10, 20, 30])
        assert select_doppler(curve, uniform_model(0.0), zero_vector()).sku_id == "s1"

    def test_fallback(self):
        rec = select_doppler(curve_of([0.5, 0.3]), uniform_model(0.1), zero_vector())
        assert rec.sku_id == "s1" and Flag.FALLBACK_MOST_PERFORMANT in rec.flags

    def test_unknown_group(self):
        model = GroupModel(Deployment.DB, Strategy.THRESHOLD, {3: GroupStats(0.1, 0, 1)})
        with pytest.raises(UnknownGroup):
            select_doppler(curve_of([0.1]), model, zero_vector())
        rec = select_doppler(curve_of([0.1]), model, zero_vector(), fallback_group=3)
        assert rec.target_tolerance == 0.1

    @settings(max_examples=100)
    @given(st.lists(st.integers(0, 20), min_size=1, max_size=10), st.integers(0, 20))
    def test_matches_scan_and_respects_constraint(self, raw, tol):
        probs = sorted((x / 20 for x in raw), reverse=True)
        curve = curve_of(probs)
        target = tol / 20
        rec = select_doppler(curve, uniform_model(target), zero_vector())
        expected = scan_oracle(curve, target)
        if expected is None:
            assert Flag.FALLBACK_MOST_PERFORMANT in rec.flags
        else:
            assert rec.sku_id == expected
            assert rec.achieved_throttling <= target


class TestBaseline:
    def test_cheapest_dominating(self, cpu_catalog):
        s = workload({D.CPU: [1.0] * 20})
        cands = [(k, k.limits) for k in cpu_catalog.skus]
        assert select_baseline(s, cands).sku_id == "DB_GP_2"

    def test_quantile_one_covers_max(self, cpu_catalog):
        s = workload({D.CPU: [1.0] * 99 + [7.0]})
        cands = [(k, k.limits) for k in cpu_catalog.skus]
        assert select_baseline(s, cands, 0.95).sku_id == "DB_GP_2"
        assert select_baseline(s, cands, 1.0).sku_id == "DB_GP_8"

    def test_infeasible_names_binding_dimension(self, cpu_catalog):
        s = workload({D.CPU: [100.0] * 5, D.MEMORY: [1.0] * 5})
        with pytest.raises(NoFeasibleSku) as err:
            select_baseline(s, [(k, k.limits) for k in cpu_catalog.skus])
        assert err.value.binding == ["cpu"]
        assert "cpu" in str(err.value)

    def test_latency_compared_after_inversion(self):
        from rightsize.ingest import invert_set_latency

        fast = db_sku(2, 100, tier=Tier.BUSINESS_CRITICAL, extra={D.IO_LATENCY: 1.0})
        slow = db_sku(2, 50, extra={D.IO_LATENCY: 1 / 5})
        s = invert_set_latency(workload({D.CPU: [1.0] * 10, D.IO_LATENCY: [2.0] * 10}))
        # the workload sees 2 ms on-prem: a 5 ms SKU is too slow, a 1 ms SKU is fine
        assert select_baseline(s, [(fast, fast.limits), (slow, slow.limits)]).sku_id == fast.id

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_exhaustive_scan(self, data):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        dims = (D.CPU, D.MEMORY, D.IOPS)
        s = workload({d: rng.random(40) * 10 for d in dims})
        skus = [
            db_sku(k + 1, float(rng.integers(1, 50)), extra={d: float(rng.random() * 12) for d in dims})
            for k in range(8)
        ]
        cands = [(k, k.limits) for k in skus]
        need = {d: nearest_rank(s[d].values, 0.9) for d in dims}
        feasible = [k for k in skus if all(k.limits.get(d) >= need[d] for d in dims)]
        if not feasible:
            with pytest.raises(NoFeasibleSku):
                select_baseline(s, cands, 0.9)
            return
        rec = select_baseline(s, cands, 0.9)
        cheapest = min(feasible, key=lambda k: (k.monthly_price, k.id))
        assert rec.sku_id == cheapest.id


class TestHeuristics:
    def test_largest_increase(self):
        assert select_largest_increase(curve_of(scores=[0.2, 0.6, 0.9, 0.9009])).sku_id == "s3"

    def test_largest_increase_no_crossing(self):
        assert select_largest_increase(curve_of(scores=[0.1, 0.5, 0.9])).sku_id == "s2"

    def test_largest_increase_equal_scores(self):
        assert select_largest_increase(curve_of(scores=[0.5, 0.5, 0.9])).sku_id == "s1"

    def test_largest_slope(self):
        curve = curve_of(scores=[0.0, 0.9, 1.0], prices=[10, 20, 100])
        assert select_largest_slope(curve).sku_id == "s1"

    def test_largest_slope_uniform(self):
        assert select_largest_slope(curve_of(scores=[0.25, 0.5, 0.75, 1.0])).sku_id == "s1"

    def test_largest_slope_big_jump(self):
        curve = curve_of(scores=[0.1, 0.12, 0.14, 0.9, 0.92])
        assert select_largest_slope(curve).sku_id == "s3"

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            select_largest_slope(curve_of([0.1]))

    def test_perf_threshold(self):
        assert select_perf_threshold(curve_of(scores=[0.5, 0.96, 1.0]), 0.95).sku_id == "s1"
        assert select_perf_threshold(curve_of(scores=[0.5, 0.96, 1.0]), 1.0).sku_id == "s2"
        with pytest.raises(NoFeasibleSku):
            select_perf_threshold(curve_of(scores=[0.5, 0.9]), 0.95)


def half_and_half(n=40):
    return workload({D.CPU: [1.0] * (n // 2) + [5.0] * (n // 2)})


class TestConfidence:
    def test_constant(self, cpu_catalog):
        ctx = SelectionContext([(k, k.limits) for k in cpu_catalog.skus], model=uniform_model(0.05))
        s = workload({D.CPU: [3.0] * 60})
        assert confidence_score(s, ctx, replicates=20, window=10, seed=1) == 1.0

    def test_full_span_window(self, cpu_catalog):
        ctx = SelectionContext([(k, k.limits) for k in cpu_catalog.skus], model=uniform_model(0.5))
        s = half_and_half()
        assert confidence_score(s, ctx, replicates=10, window=40) == 1.0

    def test_half_and_half_against_enumeration(self, cpu_catalog):
        ctx = SelectionContext([(k, k.limits) for k in cpu_catalog.skus], model=uniform_model(0.5))
        s = half_and_half()
        n, w = 40, 20
        reference = ctx.run(s).sku_id
        assert reference == "DB_GP_2"
        outcome = {start: ctx.run(s.slice(start, start + w)).sku_id for start in range(n - w + 1)}
        # windows with more than half their samples high leave the tolerance and jump to GP_6
        assert set(outcome.values()) == {"DB_GP_2", "DB_GP_6"}
        reps = 30
        starts = [int(np.random.default_rng([7, r]).integers(0, n - w + 1)) for r in range(reps)]
        expected = sum(outcome[st] == reference for st in starts) / reps
        got = confidence_score(s, ctx, replicates=reps, window=w, seed=7)
        assert got == expected
        assert 0 < got < 1

    def test_deterministic(self, cpu_catalog):
        ctx = SelectionContext([(k, k.limits) for k in cpu_catalog.skus], model=uniform_model(0.5))
        a = confidence_score(half_and_half(), ctx, replicates=15, window=20, seed=3)
        b = confidence_score(half_and_half(), ctx, replicates=15, window=20, seed=3)
        assert a == b

    def test_duration_window(self, cpu_catalog):
        from datetime import timedelta

        ctx = SelectionContext([(k, k.limits) for k in cpu_catalog.skus], model=uniform_model(0.5))
        with pytest.raises(WindowTooLong):
            confidence_score(half_and_half(), ctx, window=timedelta(days=7))
        assert confidence_score(half_and_half(), ctx, replicates=5, window=timedelta(minutes=400)) == 1.0


def labelled(cpu_catalog, traces, model):
    cands = [(k, k.limits) for k in cpu_catalog.skus]
    ctx = SelectionContext(cands, model=model)
    return [(s, ctx.run(s).sku_id) for s in traces]


class TestBacktest:
    def test_self_consistency(self, cpu_catalog):
        model = uniform_model(0.1)
        rng = np.random.default_rng(0)
        traces = [workload({D.CPU: rng.gamma(2, 1, 50) * (i + 1)}, f"c{i}") for i in range(6)]
        report = backtest(labelled(cpu_catalog, traces, model), cpu_catalog, model)
        assert report.accuracy == 1.0 and report.excluded_overprovisioned == 0

    def test_exclusion_arithmetic(self, cpu_catalog):
        model = uniform_model(0.0)
        traces = [workload({D.CPU: [1.0] * 10}, f"c{i}") for i in range(10)]
        data = labelled(cpu_catalog, traces, model)
        data[0] = (data[0][0], "DB_GP_16")
        outcomes = []
        report = backtest(data, cpu_catalog, model, outcomes=outcomes)
        assert (report.total, report.excluded_overprovisioned, report.evaluated) == (10, 1, 9)
        assert report.accuracy == 1.0
        assert outcomes[0] == ("c0", "DB_GP_16", None, True)

    def test_unknown_label(self, cpu_catalog):
        with pytest.raises(UnknownSku):
            backtest([(workload({D.CPU: [1.0]}), "NOPE")], cpu_catalog, uniform_model(0.0))

    def test_infeasible_baseline_counts_as_miss(self, cpu_catalog):
        s = workload({D.CPU: [100.0] * 10})
        report = backtest([(s, "DB_GP_16")], cpu_catalog, None, SelectionStrategy.BASELINE)
        assert report.exact_match == 0 and report.evaluated == 1

    def test_report_json(self):
        r = BacktestReport(10, 1, 6, {"gp": 2 / 3}, "doppler")
        doc = r.to_json()
        assert doc["accuracy"] == pytest.approx(6 / 9)
        assert set(doc) == {"strategy", "total", "excluded_overprovisioned", "exact_match", "accuracy", "per_tier_accuracy"}


def test_context_runs_every_strategy(cpu_catalog):
    s = workload({D.CPU: list(np.linspace(0.5, 10, 50))})
    cands = [(k, k.limits) for k in cpu_catalog.skus]
    for strategy in SelectionStrategy:
        ctx = SelectionContext(cands, strategy, uniform_model(0.1), gamma=0.8)
        rec = ctx.run(s)
        assert rec.strategy is strategy
        assert rec.curve is not None
        assert 0 <= rec.achieved_throttling <= 1
