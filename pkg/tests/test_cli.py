import argparse
import csv
import json

import numpy as np
import pytest

from conftest import workload
from rightsize.catalog import Deployment, ResourceDimension as D, catalog_to_json, default_catalog
from rightsize.cli import main, parse_duration
from rightsize.ingest import parse_traces, write_traces
from rightsize.profiler import GroupModel, GroupStats, Strategy
from rightsize.synth import PatternParams, pattern_values


@pytest.fixture
def env(tmp_path, cpu_catalog):
    cat = tmp_path / "catalog.json"
    cat.write_text(json.dumps(catalog_to_json(cpu_catalog)))
    model = GroupModel(Deployment.DB, Strategy.THRESHOLD, {g: GroupStats(0.1, 0.0, 1) for g in range(16)})
    prof = tmp_path / "profiles.json"
    model.save(prof)
    rng = np.random.default_rng(0)
    trace = tmp_path / "trace.csv"
    write_traces([workload({D.CPU: 1 + rng.gamma(2, 1, 300), D.MEMORY: np.full(300, 4.0)}, "db1")], trace)
    return tmp_path, cat, prof, trace


def test_parse_duration():
    assert parse_duration("7d").total_seconds() == 7 * 86400
    assert parse_duration("30m").total_seconds() == 1800
    with pytest.raises(argparse.ArgumentTypeError):
        parse_duration("soon")


class TestAssess:
    def test_happy_path(self, env, capsys):
        d, cat, prof, trace = env
        out = d / "rec.json"
        code = main(["assess", "--traces", str(trace), "--catalog", str(cat), "--profiles", str(prof),
                     "--target", "db", "--out", str(out), "--confidence-bootstraps", "10", "--window", "1d",
                     "--curve-csv", str(d / "curve.csv")])
        assert code == 0
        rec = json.loads(out.read_text())
        assert rec["sku_id"].startswith("DB_GP_")
        assert rec["achieved_throttling"] <= rec["target_tolerance"]
        assert 0 <= rec["confidence"] <= 1
        assert rec["object_id"] == "db1"
        rows = list(csv.DictReader((d / "curve.csv").open()))
        assert [r["sku_id"] for r in rows][0] == "DB_GP_2"
        assert "db1" in capsys.readouterr().out

    def test_baseline_needs_no_profiles(self, env):
        d, cat, _, trace = env
        out = d / "rec.json"
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--target", "db",
                     "--strategy", "baseline", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["strategy"] == "baseline"

    def test_doppler_without_profiles(self, env):
        d, cat, _, trace = env
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--target", "db",
                     "--out", str(d / "o.json")]) == 1

    def test_mi_without_layout(self, env):
        d, _, _, trace = env
        cat = d / "mi.json"
        cat.write_text(json.dumps(catalog_to_json(default_catalog())))
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--target", "mi",
                     "--strategy", "baseline", "--out", str(d / "o.json")]) == 1

    def test_mi_with_layout(self, env):
        d, _, _, trace = env
        cat = d / "mi.json"
        cat.write_text(json.dumps(catalog_to_json(default_catalog())))
        layout = d / "layout.json"
        layout.write_text(json.dumps([100, 600]))
        out = d / "o.json"
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--target", "mi",
                     "--file-layout", str(layout), "--strategy", "baseline", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["sku_id"].startswith("MI_")

    def test_window_too_long(self, env):
        d, cat, prof, trace = env
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--profiles", str(prof),
                     "--target", "db", "--window", "30d", "--confidence-bootstraps", "--out", str(d / "o.json")]) == 1

    def test_no_feasible_exit_2(self, env, capsys):
        d, cat, _, _ = env
        big = d / "big.csv"
        write_traces([workload({D.CPU: np.full(20, 100.0)}, "huge")], big)
        code = main(["assess", "--traces", str(big), "--catalog", str(cat), "--target", "db",
                     "--strategy", "baseline", "--out", str(d / "o.json")])
        assert code == 2
        assert "cpu" in capsys.readouterr().err

    def test_bad_trace_exit_1(self, env, capsys):
        d, cat, prof, _ = env
        bad = d / "bad.csv"
        bad.write_text("timestamp,object_id,level,dimension,value\n2024-01-01T00:00:00Z,x,database,gpu,1\n")
        assert main(["assess", "--traces", str(bad), "--catalog", str(cat), "--profiles", str(prof),
                     "--target", "db", "--out", str(d / "o.json")]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_bad_argument_exit_1(self, env):
        d, cat, prof, trace = env
        assert main(["assess", "--traces", str(trace), "--catalog", str(cat), "--target", "db",
                     "--quantile", "1.5", "--out", str(d / "o.json")]) == 1


def make_dataset(root, n=6, seed=0):
    data = root / "data"
    data.mkdir()
    rng = np.random.default_rng(seed)
    labels = [("object_id", "chosen_sku_id")]
    skus = ["DB_GP_2", "DB_GP_4", "DB_GP_6", "DB_GP_8"]
    for i in range(n):
        vals = rng.uniform(0.5, 1.5, 200) * (i % 4 + 1)
        write_traces([workload({D.CPU: vals, D.MEMORY: np.full(200, 3.0)}, f"c{i}")], data / f"c{i}.csv")
        labels.append((f"c{i}", skus[i % 4]))
    lab = root / "labels.csv"
    with lab.open("w", newline="") as fh:
        csv.writer(fh).writerows(labels)
    return data, lab


class TestTrainAndBacktest:
    def test_train_is_deterministic(self, env):
        d, cat, _, _ = env
        data, lab = make_dataset(d)
        a, b = d / "a.json", d / "b.json"
        for out in (a, b):
            assert main(["train-profiles", "--dataset", str(data), "--labels", str(lab), "--catalog", str(cat),
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        model = GroupModel.load(a)
        assert sum(s.count for s in model.groups.values()) == 6

    def test_unknown_sku_label(self, env):
        d, cat, _, _ = env
        data, lab = make_dataset(d)
        lab.write_text("object_id,chosen_sku_id\nc0,DB_GP_99\n")
        assert main(["train-profiles", "--dataset", str(data), "--labels", str(lab), "--catalog", str(cat),
                     "--out", str(d / "m.json")]) == 1

    def test_backtest_both_strategies(self, env):
        d, cat, _, _ = env
        data, lab = make_dataset(d)
        prof = d / "m.json"
        main(["train-profiles", "--dataset", str(data), "--labels", str(lab), "--catalog", str(cat), "--out", str(prof)])
        for strategy in ("doppler", "baseline"):
            out = d / f"{strategy}.json"
            assert main(["backtest", "--dataset", str(data), "--labels", str(lab), "--catalog", str(cat),
                         "--profiles", str(prof), "--strategy", strategy, "--out", str(out)]) == 0
            rep = json.loads(out.read_text())
            assert rep["total"] == 6 and 0 <= rep["accuracy"] <= 1

    def test_empty_dataset(self, env):
        d, cat, prof, _ = env
        (d / "empty").mkdir()
        lab = d / "labels.csv"
        lab.write_text("object_id,chosen_sku_id\nc0,DB_GP_2\n")
        assert main(["backtest", "--dataset", str(d / "empty"), "--labels", str(lab), "--catalog", str(cat),
                     "--profiles", str(prof), "--out", str(d / "r.json")]) == 1


class TestSynth:
    def test_steady_constant(self, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["synth-trace", "--pattern", "steady", "--samples", "50", "--level-value", "3",
                     "--out", str(out)]) == 0
        (s,) = parse_traces(out)
        assert np.all(s[D.CPU].values == 3.0)

    def test_spiky_matches_replay(self, tmp_path):
        out = tmp_path / "s.csv"
        main(["synth-trace", "--pattern", "spiky", "--samples", "500", "--spike-rate", "0.1",
              "--seed", "9", "--out", str(out)])
        (s,) = parse_traces(out)
        expected = int((np.random.default_rng(9).random(500) < 0.1).sum())
        assert int((s[D.CPU].values > 1.0).sum()) == expected
        replay = pattern_values("spiky", 500, PatternParams(spike_rate=0.1), 9)
        assert np.array_equal(s[D.CPU].values, replay)

    def test_same_seed_same_bytes(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            main(["synth-trace", "--pattern", "seasonal", "--samples", "200", "--noise", "0.1", "--seed", "4",
                  "--dimension", "cpu", "--dimension", "memory", "--out", str(p)])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_bad_pattern(self, tmp_path):
        assert main(["synth-trace", "--pattern", "chaotic", "--samples", "5", "--out", str(tmp_path / "x.csv")]) == 1


def test_curve_command(env):
    d, cat, _, trace = env
    out = d / "curve.csv"
    assert main(["curve", "--traces", str(trace), "--catalog", str(cat), "--target", "db", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6
    assert rows[0].keys() == {"rank", "sku_id", "monthly_price", "throttling_prob", "score", "pruned"}
