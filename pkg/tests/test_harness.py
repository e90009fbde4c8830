import random

import pytest

from wstal.harness import (MODELS, REFERENCE_ACCOUNTING, HarnessConfig, RunConfig, loso_splits,
                           plan_loso, plan_runs, read_aggregate, report, run_pipeline, summarize)
from wstal.metrics import REPORT_COLUMNS
from wstal.synth import SynthConfig, gen_benchmark


def test_plan_matches_reference_accounting():
    plan = plan_runs()
    assert [d.runs for d in plan.datasets] == [900, 120, 660, 720, 450, 540, 150]
    assert plan.total == 3540
    assert plan_runs([("x", 1, 1, 1)]).total == 1
    assert plan_runs([{"dataset": "y", "seeds": [1, 2], "subjects": 3, "models": list(MODELS)}]).total == 24
    assert "3540" in plan.table()
    with pytest.raises(ValueError):
        plan_runs([("z", 0, 3, 3)])
    assert len(REFERENCE_ACCOUNTING) == 7


def test_loso_splits():
    splits = loso_splits(["c", "a", "b", "a"])
    assert [t for _, t in splits] == ["a", "b", "c"]
    for train, test in splits:
        assert test not in train and sorted(train + [test]) == ["a", "b", "c"]
    assert len(loso_splits([f"s{i:02d}" for i in range(30)])) == 30
    with pytest.raises(ValueError):
        loso_splits(["only"])


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig("d", 1, None, mode="window")
    with pytest.raises(ValueError):
        RunConfig("d", 1, None, mode="full", window_sec=10.0)
    with pytest.raises(ValueError):
        RunConfig("d", 1, None, model="nope")


@pytest.fixture(scope="module")
def noiseless(tmp_path_factory):
    cfg = SynthConfig(num_classes=3, duration=60.0, noise=0.0, seed=5)
    return gen_benchmark(cfg, 3, 1, tmp_path_factory.mktemp("ds") / "clean")


def test_noiseless_pipeline_is_perfect(noiseless, tmp_path):
    rep = run_pipeline(RunConfig(str(noiseless), 2022, "subj0"), noiseless, tmp_path)
    assert rep.mAP == 1.0
    assert all(v == 1.0 for v in rep.map_per_threshold.values())


def test_pipeline_is_byte_identical(noiseless, tmp_path):
    run = RunConfig(str(noiseless), 2024, "subj1", "linsoft")
    for d in ("a", "b"):
        run_pipeline(run, noiseless, tmp_path / d)
    for name in ("report.json", "predictions.jsonl", "model.json"):
        a = (tmp_path / "a" / "runs" / run.name / name).read_bytes()
        b = (tmp_path / "b" / "runs" / run.name / name).read_bytes()
        assert a == b
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()


def test_short_stream_window_mode_equals_full(noiseless, tmp_path):
    full = run_pipeline(RunConfig(str(noiseless), 1, "subj2"), noiseless)
    win = run_pipeline(RunConfig(str(noiseless), 1, "subj2", mode="window", window_sec=500.0), noiseless)
    assert full.to_dict()["ap"] == win.to_dict()["ap"] and full.f1 == win.f1


def test_missing_dataset_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="metadata.jsonl"):
        run_pipeline(RunConfig("x", 1, None), tmp_path / "nowhere")


def test_plan_loso(noiseless):
    runs = plan_loso(noiseless, ["attention", "max"], [1, 2])
    assert len(runs) == 2 * 2 * 3
    assert len({r.name for r in runs}) == 12
    assert [r.held_out for r in plan_loso(noiseless, ["max"], [1], in_domain=True)] == [None]


def _row(mode, seed, **vals):
    base = {"dataset": "d", "model": "m", "mode": mode, "window_sec": "", "seed": str(seed),
            "subject": "s"}
    base.update({c: str(vals.get(c, 0.0)) for c in REPORT_COLUMNS})
    return base


def test_summary_mean_and_cells():
    rows = [_row("full", 1, P=10.0, mAP=40.0), _row("full", 2, P=20.0, mAP=60.0)]
    s = summarize(rows)
    assert s["d/m"]["full"]["P"] == 15.0 and s["d/m"]["full"]["mAP"] == 50.0
    text = report(rows + [_row("window", 1, P=5.0)])
    line = text.splitlines()[-1]
    assert "5.00|15.00" in line and "0.00|50.00" in line
    single = report([_row("full", 1, P=12.5)])
    assert "12.50" in single and "|" not in single.splitlines()[-1]


def test_summary_is_row_order_invariant():
    rng = random.Random(0)
    rows = [_row("full", i, P=rng.random() * 100, R=rng.random() * 100) for i in range(20)]
    shuffled = rows[:]
    rng.shuffle(shuffled)
    assert summarize(rows) == summarize(shuffled)


def test_aggregate_roundtrip(noiseless, tmp_path):
    run_pipeline(RunConfig(str(noiseless), 3, "subj0"), noiseless, tmp_path)
    run_pipeline(RunConfig(str(noiseless), 3, "subj1"), noiseless, tmp_path)
    rows = read_aggregate(tmp_path / "aggregate.csv")
    assert len(rows) == 2 and rows[0]["subject"] == "subj0"


def test_config_from_dict():
    cfg = HarnessConfig.from_dict({"train": {"epochs": 5}, "seeds": [1], "refine": {"alpha": 0.3}})
    assert cfg.train.epochs == 5 and cfg.seeds == (1,) and cfg.refine.alpha == 0.3
    assert HarnessConfig().seeds == (2022, 2024, 2026)
