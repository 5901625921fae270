"""Command-line interface.

Exit codes: 0 success, 1 input or configuration error, 2 no feasible recommendation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

from rightsize.catalog import (
    Deployment,
    FileLayout,
    ResourceDimension,
    SkuCatalog,
    candidate_limits,
    filter_mi_skus,
    load_catalog,
)
from rightsize.errors import InputError, NoFeasibleError, WindowTooLong
from rightsize.ingest import DEFAULT_INTERVAL, Level, PerfTraceSet, parse_traces, prepare_workload, summarize, write_traces
from rightsize.ppm import DEFAULT_PRICE_FACTOR, build_curve, classify_shape, detect_overprovision, write_curve_csv
from rightsize.profiler import (
    DEFAULT_PERIOD,
    DEFAULT_RHO,
    GroupModel,
    Strategy,
    TrainingRecord,
    group_bits,
    train_groups,
)
from rightsize.recommend import (
    DEFAULT_EPSILON,
    DEFAULT_GAMMA,
    DEFAULT_QUANTILE,
    DEFAULT_REPLICATES,
    DEFAULT_WINDOW,
    Flag,
    SelectionContext,
    SelectionStrategy,
    backtest,
    confidence_score,
)
from rightsize.synth import PATTERNS, PatternParams, make_set, pattern_values

log = logging.getLogger("rightsize")

TOP_LEVEL = {Deployment.DB: Level.DATABASE, Deployment.MI: Level.INSTANCE}

_DURATION = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([smhdw]?)\s*$")
_UNITS = {"s": "seconds", "m": "minutes", "h": "hours", "d": "days", "w": "weeks", "": "days"}


def parse_duration(text: str) -> timedelta:
    """``"7d"``, ``"12h"``, ``"30m"``; a bare number is days."""
    m = _DURATION.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r} (use e.g. 7d, 12h, 30m)")
    value = timedelta(**{_UNITS[m.group(2)]: float(m.group(1))})
    if value <= timedelta(0):
        raise argparse.ArgumentTypeError("duration must be positive")
    return value


def _fraction(lo_open: bool = True, hi_open: bool = False):
    def check(text: str) -> float:
        v = float(text)
        ok_lo = v > 0 if lo_open else v >= 0
        ok_hi = v < 1 if hi_open else v <= 1
        if not (ok_lo and ok_hi):
            raise argparse.ArgumentTypeError(f"{v} is out of range")
        return v

    return check


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _price_factor(text: str) -> float:
    v = float(text)
    if v < 1:
        raise argparse.ArgumentTypeError("price factor must be >= 1")
    return v


def _dump_json(doc, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_layouts(path: str | None) -> dict[str, FileLayout]:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected an object mapping object_id to a list of file sizes")
    return {k: FileLayout(v) for k, v in doc.items()}


def _read_labels(path: str) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"object_id", "chosen_sku_id"} - set(reader.fieldnames):
            raise InputError(f"{path}: header must be object_id,chosen_sku_id")
        for lineno, row in enumerate(reader, start=2):
            oid, sku = row["object_id"].strip(), row["chosen_sku_id"].strip()
            if not oid or not sku:
                raise InputError(f"{path}:{lineno}: empty field")
            if oid in labels:
                raise InputError(f"{path}:{lineno}: duplicate object_id {oid!r}")
            labels[oid] = sku
    return labels


def _customer_id(path: Path, sets: list[PerfTraceSet]) -> str:
    top = max(s.level for s in sets)
    ids = sorted({s.object_id for s in sets if s.level == top})
    return ids[0] if len(ids) == 1 else path.stem


def _load_dataset(
    directory: str, labels_path: str, catalog: SkuCatalog, deployment: Deployment | None
) -> tuple[list[tuple[PerfTraceSet, str]], Deployment]:
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"{directory}: not a directory")
    labels = _read_labels(labels_path)
    for oid, sku in labels.items():
        if sku not in catalog:
            raise InputError(f"{labels_path}: {oid} references unknown SKU {sku!r}")
    if deployment is None:
        deps = {catalog.get(s).deployment for s in labels.values()}
        if len(deps) != 1:
            raise InputError("labels mix db and mi SKUs; pass --target")
        (deployment,) = deps
    files = sorted(p for p in root.glob("*.csv") if p.resolve() != Path(labels_path).resolve())
    dataset = []
    for path in files:
        sets = parse_traces(path)
        cid = _customer_id(path, sets)
        if cid not in labels:
            log.warning("%s: customer %s has no label, skipped", path, cid)
            continue
        dataset.append((prepare_workload(sets, TOP_LEVEL[deployment], object_id=cid), labels[cid]))
    if not dataset:
        raise InputError(f"{directory}: no labelled customer traces found")
    return dataset, deployment


def _workload(path: str, deployment: Deployment, interval: timedelta) -> PerfTraceSet:
    return prepare_workload(parse_traces(path), TOP_LEVEL[deployment], interval)


def _candidates(args, catalog: SkuCatalog, deployment: Deployment, workload: PerfTraceSet, quantile: float):
    flags = set()
    if deployment is Deployment.MI:
        if not args.file_layout:
            raise InputError("--file-layout is required for --target mi")
        layout = FileLayout.load(args.file_layout)
        summary = summarize(workload, quantile)
        skus, escalated = filter_mi_skus(catalog, layout, summary)
        if escalated:
            flags.add(Flag.ESCALATED_TO_BC)
        return candidate_limits(catalog, deployment, layout, skus), flags
    return candidate_limits(catalog, deployment), flags


def cmd_assess(args) -> int:
    deployment = Deployment(args.target)
    catalog = load_catalog(args.catalog)
    if deployment is Deployment.MI and not args.file_layout:
        raise InputError("--file-layout is required for --target mi")
    strategy = SelectionStrategy(args.strategy)
    model = GroupModel.load(args.profiles) if args.profiles else None
    if strategy is SelectionStrategy.DOPPLER:
        if model is None:
            raise InputError("--profiles is required for the doppler strategy")
        if model.deployment is not deployment:
            raise InputError(f"profiles were trained for {model.deployment.value}, target is {deployment.value}")
    workload = _workload(args.traces, deployment, args.interval)
    cands, flags = _candidates(args, catalog, deployment, workload, args.quantile)
    ctx = SelectionContext(
        cands, strategy, model, args.epsilon, args.gamma, args.quantile, args.fallback_group, frozenset(flags)
    )

    span = workload.grid().size
    window_samples = None
    if args.window is not None or args.confidence_bootstraps:
        window = args.window or DEFAULT_WINDOW
        window_samples = int(round(window.total_seconds() / workload.interval_seconds()))
        if window_samples > span:
            raise WindowTooLong(f"--window {window} covers {window_samples} samples; the trace has {span}")

    rec = ctx.run(workload)
    if args.current_sku:
        if detect_overprovision(rec.curve, args.current_sku, args.price_factor):
            rec = rec.with_updates(flags=rec.flags | {Flag.OVERPROVISIONED_INPUT})
    if args.confidence_bootstraps:
        conf = confidence_score(
            workload, ctx, args.confidence_bootstraps, window_samples, args.seed, reference=rec.sku_id
        )
        rec = rec.with_updates(confidence=conf)

    report = rec.to_json()
    report["object_id"] = workload.object_id
    report["shape"] = classify_shape(rec.curve).value
    report["aggregation"] = "sum: cpu, memory, iops, log_rate, storage; max: io_latency (raw ms, before inversion)"
    _dump_json(report, args.out)
    if args.curve_csv:
        write_curve_csv(rec.curve, args.curve_csv)
    conf_text = f", confidence {rec.confidence:.2f}" if rec.confidence is not None else ""
    print(f"{workload.object_id}: {rec.sku_id} ({strategy.value}, throttling {rec.achieved_throttling:.4f}{conf_text})")
    return 0


def _print_groups(model: GroupModel) -> None:
    print(f"{'group':>5}  {'bits':<10} {'count':>5}  {'mean':>8}  {'std':>8}")
    for gid, st in model.groups.items():
        bits = "".join(str(b) for b in group_bits(gid, model.deployment))
        print(f"{gid:>5}  {bits:<10} {st.count:>5}  {st.mean_throttling:>8.4f}  {st.std:>8.4f}")


def cmd_train_profiles(args) -> int:
    catalog = load_catalog(args.catalog)
    target = Deployment(args.target) if args.target else None
    dataset, deployment = _load_dataset(args.dataset, args.labels, catalog, target)
    records: list[TrainingRecord] = []
    model = train_groups(
        dataset,
        catalog,
        Strategy(args.method),
        args.rho,
        deployment=deployment,
        layouts=_load_layouts(args.file_layouts),
        price_factor=args.price_factor,
        period=args.period,
        records=records,
    )
    model.save(args.out)
    excluded = sum(r.overprovisioned for r in records)
    print(f"trained {len(model.groups)} group(s) from {len(records)} customer(s), {excluded} excluded as over-provisioned")
    _print_groups(model)
    return 0


def cmd_backtest(args) -> int:
    catalog = load_catalog(args.catalog)
    strategy = SelectionStrategy(args.strategy)
    model = GroupModel.load(args.profiles) if args.profiles else None
    if strategy is SelectionStrategy.DOPPLER and model is None:
        raise InputError("--profiles is required for the doppler strategy")
    target = Deployment(args.target) if args.target else (model.deployment if model else None)
    dataset, deployment = _load_dataset(args.dataset, args.labels, catalog, target)
    report = backtest(
        dataset,
        catalog,
        model,
        strategy,
        deployment=deployment,
        layouts=_load_layouts(args.file_layouts),
        price_factor=args.price_factor,
        epsilon=args.epsilon,
        gamma=args.gamma,
        quantile=args.quantile,
    )
    Path(args.out).write_text(report.dumps())
    print(f"{'strategy':<18} {'target':<6} {'total':>5} {'excluded':>8} {'matched':>7} {'accuracy':>8}")
    print(
        f"{strategy.value:<18} {deployment.value:<6} {report.total:>5} {report.excluded_overprovisioned:>8} "
        f"{report.exact_match:>7} {report.accuracy:>8.1%}"
    )
    for tier, acc in sorted(report.per_tier_accuracy.items()):
        print(f"  tier {tier}: {acc:.1%}")
    return 0


def cmd_curve(args) -> int:
    deployment = Deployment(args.target)
    catalog = load_catalog(args.catalog)
    workload = _workload(args.traces, deployment, args.interval)
    cands, flags = _candidates(args, catalog, deployment, workload, args.quantile)
    curve = build_curve(workload, cands)
    write_curve_csv(curve, args.out)
    note = " (escalated to business critical)" if flags else ""
    print(f"{workload.object_id}: {len(curve.points)} SKUs on curve, {len(curve.pruned)} pruned, "
          f"shape {classify_shape(curve).value}{note}")
    return 0


def cmd_synth_trace(args) -> int:
    params = PatternParams(
        level=args.level_value,
        noise=args.noise,
        spike_height=args.spike_height,
        spike_rate=args.spike_rate,
        period=args.period,
        amplitude=args.amplitude,
        ramp_to=args.ramp_to,
    )
    dims = [ResourceDimension.parse(d) for d in (args.dimension or ["cpu"])]
    series = {d: pattern_values(args.pattern, args.samples, params, args.seed + i) for i, d in enumerate(dims)}
    start = datetime.fromisoformat(args.start.replace("Z", "+00:00"))
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)
    write_traces([make_set(args.object_id, series, Level.parse(args.level), start, args.interval)], args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rightsize", description="Cloud SKU right-sizing from resource-usage traces.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def knobs(sp, *, selection: bool = True):
        sp.add_argument("--quantile", type=_fraction(), default=DEFAULT_QUANTILE)
        sp.add_argument("--price-factor", type=_price_factor, default=DEFAULT_PRICE_FACTOR)
        if selection:
            sp.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
            sp.add_argument("--gamma", type=_fraction(), default=DEFAULT_GAMMA)

    strategies = [s.value for s in SelectionStrategy]

    a = sub.add_parser("assess", help="recommend a SKU for one workload")
    a.add_argument("--traces", required=True)
    a.add_argument("--catalog", required=True)
    a.add_argument("--profiles")
    a.add_argument("--target", choices=["db", "mi"], required=True)
    a.add_argument("--file-layout")
    a.add_argument("--strategy", choices=strategies, default="doppler")
    a.add_argument("--confidence-bootstraps", type=_positive_int, nargs="?", const=DEFAULT_REPLICATES)
    a.add_argument("--window", type=parse_duration)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--interval", type=parse_duration, default=DEFAULT_INTERVAL)
    a.add_argument("--current-sku", help="flag the report if this SKU is over-provisioned")
    a.add_argument("--fallback-group", type=int)
    a.add_argument("--out", required=True)
    a.add_argument("--curve-csv")
    knobs(a)
    a.set_defaults(func=cmd_assess)

    t = sub.add_parser("train-profiles", help="learn per-group throttling tolerances")
    t.add_argument("--dataset", required=True)
    t.add_argument("--labels", required=True)
    t.add_argument("--catalog", required=True)
    t.add_argument("--method", choices=[s.value for s in Strategy], default="threshold")
    t.add_argument("--rho", type=_fraction(hi_open=True), default=DEFAULT_RHO)
    t.add_argument("--period", type=_positive_int, default=DEFAULT_PERIOD)
    t.add_argument("--target", choices=["db", "mi"])
    t.add_argument("--file-layouts", help="JSON object mapping object_id to data-file sizes (MI)")
    t.add_argument("--price-factor", type=_price_factor, default=DEFAULT_PRICE_FACTOR)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_profiles)

    b = sub.add_parser("backtest", help="measure exact-match accuracy against labelled customers")
    b.add_argument("--dataset", required=True)
    b.add_argument("--labels", required=True)
    b.add_argument("--catalog", required=True)
    b.add_argument("--profiles")
    b.add_argument("--strategy", choices=strategies, default="doppler")
    b.add_argument("--target", choices=["db", "mi"])
    b.add_argument("--file-layouts")
    b.add_argument("--out", required=True)
    knobs(b)
    b.set_defaults(func=cmd_backtest)

    c = sub.add_parser("curve", help="export a price-performance curve as CSV")
    c.add_argument("--traces", required=True)
    c.add_argument("--catalog", required=True)
    c.add_argument("--target", choices=["db", "mi"], required=True)
    c.add_argument("--file-layout")
    c.add_argument("--interval", type=parse_duration, default=DEFAULT_INTERVAL)
    c.add_argument("--quantile", type=_fraction(), default=DEFAULT_QUANTILE)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curve)

    s = sub.add_parser("synth-trace", help="write a synthetic trace CSV")
    s.add_argument("--pattern", required=True, help=f"one of {', '.join(PATTERNS)}")
    s.add_argument("--samples", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dimension", action="append", help="repeatable; default cpu")
    s.add_argument("--object-id", default="synthetic")
    s.add_argument("--level", choices=[lv.label for lv in Level], default="database")
    s.add_argument("--level-value", type=float, default=1.0, help="baseline value")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--spike-height", type=float, default=4.0)
    s.add_argument("--spike-rate", type=_fraction(lo_open=False), default=0.01)
    s.add_argument("--period", type=_positive_int, default=DEFAULT_PERIOD)
    s.add_argument("--amplitude", type=float, default=0.5)
    s.add_argument("--ramp-to", type=float, default=2.0)
    s.add_argument("--start", default="2024-01-01T00:00:00Z")
    s.add_argument("--interval", type=parse_duration, default=DEFAULT_INTERVAL)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_trace)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except NoFeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InputError, ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
