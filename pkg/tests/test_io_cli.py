import csv
import json
import statistics

import numpy as np
import pytest

from mild import cli, io, losses
from mild.checks import gradient_suite, run_suites
from mild.core import CostType
from mild.exceptions import InvalidInputError
from mild.oracle import random_instance
from mild.synth import SetupSpec, generate

SMALL = [
    "--n_samples", "300", "--n_test", "100", "--epochs", "20", "--output_dim", "30",
    "--n_seeds", "2", "--rho_mode", "formula", "--setup", "setup1", "--n_classes", "10",
]


def test_fmt_uses_nine_significant_digits():
    assert io.fmt(1 / 3) == "0.333333333"
    assert io.fmt(np.float64(123456789.123)) == "123456789"
    assert io.fmt(np.int64(4)) == "4" and io.fmt(True) == "1"


def test_table_is_lf_utf8(tmp_path):
    path = tmp_path / "t.csv"
    io.write_table(path, ["a", "b"], [[1, 2.0 / 3], ["é", 0.5]])
    raw = path.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    assert raw.decode("utf-8") == "a,b\n1,0.666666667\né,0.5\n"


def test_dataset_panel_costs_round_trip(tmp_path):
    prob = generate(SetupSpec("setup1", n_samples=200, seed=3, cost_type="error_plus_cost"))
    io.write_dataset(tmp_path / "d.csv", prob.dataset)
    io.write_panel(tmp_path / "p.csv", prob.panel)
    io.write_costs(tmp_path / "c.csv", prob.costs)
    ds = io.read_dataset(tmp_path / "d.csv")
    assert np.array_equal(ds.labels, prob.dataset.labels)
    assert np.allclose(ds.features, prob.dataset.features, rtol=1e-8, atol=0)
    panel = io.read_panel(tmp_path / "p.csv", prob.panel.beta, 10)
    assert np.array_equal(panel.predictions, prob.panel.predictions)
    costs = io.read_costs(tmp_path / "c.csv", CostType.ERROR_PLUS_COST, prob.costs.normalizer)
    assert np.allclose(costs.values, prob.costs.values, rtol=1e-8, atol=0)


def test_read_table_rejects_ragged_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1\n", encoding="utf-8")
    with pytest.raises(InvalidInputError):
        io.read_table(path)


def test_instance_round_trip(tmp_path):
    inst = random_instance(np.random.default_rng(0), 3, 2, 4, (-2.0, 2.0, 0.5))
    io.write_instance(tmp_path / "i.csv", inst)
    back = io.read_instance(tmp_path / "i.csv")
    assert back.score_grid == inst.score_grid
    assert np.allclose(back.costs, inst.costs, rtol=1e-8)
    assert np.allclose(back.label_dist, inst.label_dist, rtol=1e-8)


def test_config_text_parsing():
    cfg = cli.parse_config_text("# experiment\nsetup = setup2  # four experts\n\nepochs=10\n")
    assert cfg == {"setup": "setup2", "epochs": "10"}
    with pytest.raises(InvalidInputError):
        cli.parse_config_text("nonsense = 1")
    with pytest.raises(InvalidInputError):
        cli.parse_config_text("setup setup2")


def test_exit_code_for_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs = many\n", encoding="utf-8")
    assert cli.main(["sweep", "--config", str(bad)]) == 2
    assert cli.main(["sweep", "--methods", "magic"]) == 2
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert cli.main(["nosuchcommand"]) == 2
    assert "error" in capsys.readouterr().err


def test_gen_train_eval_pipeline(tmp_path, capsys):
    data, model = tmp_path / "data", tmp_path / "model"
    assert cli.main(["gen", "--out", str(data), "--setup", "severe", "--n_samples", "200", "--n_test", "50"]) == 0
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["setup"] == "severe" and manifest["seed"] == 0
    args = ["train", "--data", str(data), "--out", str(model), "--epochs", "10", "--output_dim", "20",
            "--rho_mode", "formula"]
    assert cli.main(args) == 0
    with open(model / "trace.csv", newline="", encoding="utf-8") as fh:
        trace = list(csv.reader(fh))
    assert trace[0] == ["epoch", "objective", "val_dl", "ratio_1", "ratio_2"] and len(trace) == 11
    capsys.readouterr()
    assert cli.main(["eval", "--data", str(data), "--model", str(model), "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"deferral_loss", "ratio_1", "ratio_2", "n_samples"}
    assert report["n_samples"] == 200
    assert json.loads((tmp_path / "r.json").read_text()) == report


def test_saved_router_scores_match(tmp_path):
    from mild.train import TrainConfig, train

    prob = generate(SetupSpec("setup1", n_samples=200))
    cfg = TrainConfig(epochs=5, feature_map="random_fourier", output_dim=15, seed=4)
    res = train(prob.dataset, prob.costs, config=cfg)
    params = {"kind": "random_fourier", "bandwidth": 1.0, "output_dim": 15, "seed": 4}
    io.save_router(tmp_path, res.router, res.rhos.rho, params, 2)
    router, rho = io.load_router(tmp_path)
    assert np.allclose(rho, res.rhos.rho, rtol=1e-8)
    assert np.array_equal(router.predict(prob.dataset.features), res.router.predict(prob.dataset.features))


def test_sweep_report_layout_and_aggregates(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["sweep", *SMALL, "--output_dir", str(out)]) == 0
    with open(out / "report.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    # 2 seeds x 3 methods plus one aggregate row per method
    assert len(rows) == 9
    seeds = [r for r in rows if r["seed"] != "aggregate"]
    for method in ("mild", "tdef", "oracle"):
        mine = [r for r in seeds if r["method"] == method]
        agg = next(r for r in rows if r["seed"] == "aggregate" and r["method"] == method)
        dls = [float(r["dl"]) for r in mine]
        assert float(agg["dl"]) == pytest.approx(statistics.fmean(dls), rel=1e-8)
        assert float(agg["dl_std"]) == pytest.approx(statistics.stdev(dls), rel=1e-7, abs=1e-12)
        for k in (1, 2, 3):
            ratios = [float(r[f"ratio_{k}"]) for r in mine]
            assert float(agg[f"ratio_{k}"]) == pytest.approx(statistics.fmean(ratios), rel=1e-8, abs=1e-12)
        assert agg["status"] == "n=2"


def test_oracle_rows_carry_bayes_dl():
    overrides = {k.lstrip("-"): v for k, v in zip(SMALL[::2], SMALL[1::2])}
    overrides.update(methods="oracle", n_seeds="1")
    cfg = cli.ExperimentConfig.from_sources(None, overrides)
    _, rows, _ = cli.run_sweep(cfg)
    problem = cfg.generate(0)
    _, test = cli.split_train_test(problem, 100)
    costs = test.costs.values
    expected = costs[np.arange(100), test.bayes_choices()].mean()
    assert rows[0][4] == pytest.approx(expected)


def test_sweep_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = [*SMALL, "--methods", "mild,tdef", "--n_seeds", "1"]
    assert cli.main(["sweep", *args, "--output_dir", str(a)]) == 0
    assert cli.main(["sweep", *args, "--output_dir", str(b)]) == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfgfile = tmp_path / "x.cfg"
    cfgfile.write_text("seed = 3\n", encoding="utf-8")
    assert cli.main(["gen", "--config", str(cfgfile), "--seed", "5", "--n_samples", "200", "--n_test", "50",
                     "--out", str(tmp_path / "d")]) == 0
    assert json.loads((tmp_path / "d" / "manifest.json").read_text())["seed"] == 5


def test_divergence_exit_code_and_marker_row(tmp_path):
    out = tmp_path / "div"
    args = ["sweep", *SMALL, "--methods", "tdef,oracle", "--n_seeds", "1",
            "--learning_rate", "1e300", "--lam", "1", "--output_dir", str(out)]
    with np.errstate(over="ignore", invalid="ignore"):
        assert cli.main(args) == 3
    with open(out / "report.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["status"].startswith("diverged@epoch")
    assert any(r["method"] == "oracle" and r["status"] == "ok" for r in rows)


def test_check_fast_tier_passes(capsys):
    assert cli.main(["check", "--tier", "fast"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 7 and all(line.startswith("PASS") for line in lines)


def test_check_catches_sign_error_in_gradient(monkeypatch, capsys):
    original = losses.grad_mild
    monkeypatch.setattr(losses, "grad_mild", lambda *a: -original(*a))
    assert not gradient_suite(n_cases=20).ok
    assert cli.main(["check"]) == 4
    out = capsys.readouterr().out
    assert "FAIL gradient" in out and "failing case" in out


def test_run_suites_rejects_unknown_tier():
    with pytest.raises(ValueError):
        run_suites("medium")
