import json
from pathlib import Path

import numpy as np
import pytest

from metocal.cli import main

SCENARIO = {
    "seed": 7,
    "start": "2022-05-17T00:00Z",
    "end": "2022-07-17T00:00Z",
    "issue_step": 6,
    "horizons": [0, 24, 48, 120],
    "ensemble_size": 8,
    "quantities": {
        "hs": {
            "unit": "m", "marginal_mean": 2.0, "marginal_sd": 0.8,
            "intercept": 0.1,
            "coefficients": {"det_hs": 0.45, "ens_mean_hs": 0.5, "ens_mean_w": 0.02},
            "spread_intercept": 0.2, "spread_slope": 0.8, "det_bias": 0.05,
        },
        "w": {
            "unit": "m/s", "marginal_mean": 8.0, "marginal_sd": 2.5,
            "intercept": 0.4,
            "coefficients": {"det_w": 0.4, "ens_mean_w": 0.55},
            "spread_intercept": 0.6, "spread_slope": 0.7,
        },
    },
}

RUN = {
    "forecasts": "data/forecasts.csv",
    "measurements": "data/measurements.csv",
    "quantities": {"hs": "m", "w": "m/s"},
    "responses": ["hs"],
    "covariate_pool": "default",
    "max_covariates": 3,
    "families": ["lr", "nhgr"],
    "train": {"start": "2022-05-17T00:00Z", "end": "2022-06-27T00:00Z"},
    "test_periods": {"p1": {"start": "2022-06-27T06:00Z", "end": "2022-07-25T00:00Z"}},
    "bootstrap_b": 100,
    "seed": 3,
    "out": "out",
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    (root / "scenario.json").write_text(json.dumps(SCENARIO))
    (root / "run.json").write_text(json.dumps(RUN))
    assert main(["simulate", "--config", str(root / "scenario.json"), "--out", str(root / "data")]) == 0
    assert main(["fit", "--config", str(root / "run.json")]) == 0
    assert main(["select", "--config", str(root / "run.json")]) == 0
    assert main(["diagnose", "--config", str(root / "run.json"), "--period", "train"]) == 0
    return root


def read_json(path):
    return json.loads(Path(path).read_text())


class TestSimulate:
    def test_outputs_exist(self, workspace):
        for name in ("forecasts.csv", "measurements.csv", "truth.json"):
            assert (workspace / "data" / name).exists()

    def test_deterministic_bytes(self, workspace, tmp_path):
        assert main(["simulate", "--config", str(workspace / "scenario.json"), "--out", str(tmp_path)]) == 0
        for name in ("forecasts.csv", "measurements.csv", "truth.json"):
            assert (tmp_path / name).read_bytes() == (workspace / "data" / name).read_bytes()


class TestFit:
    def test_manifest_counts(self, workspace):
        manifest = read_json(workspace / "out" / "manifest.json")
        bundles = [k for k in manifest["artifacts"] if k.startswith("models/") and "grid" not in k]
        assert len(bundles) == 1 * 2 * 4  # responses x families x horizons
        # full pool of 5 with max 3 -> 1 + 5 + 10 + 10 = 26 specs per bundle
        bundle = read_json(workspace / "out" / "models" / "hs_lr_h000.json")
        assert len(bundle["models"]) == 26

    def test_rerun_identical_hashes(self, workspace, tmp_path):
        out2 = tmp_path / "out2"
        assert main(["fit", "--config", str(workspace / "run.json"), "--out", str(out2)]) == 0
        m1 = read_json(workspace / "out" / "manifest.json")["artifacts"]
        m2 = read_json(out2 / "manifest.json")["artifacts"]
        models1 = {k: v for k, v in m1.items() if k.startswith("models/")}
        models2 = {k: v for k, v in m2.items() if k.startswith("models/")}
        assert models1 == models2

    def test_empty_train_window(self, workspace, tmp_path):
        code = main([
            "fit", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "x"),
            "--set", 'train={"start":"1999-01-01T00:00Z","end":"1999-02-01T00:00Z"}',
        ])
        assert code == 3

    def test_missing_file_is_data_error(self, workspace, tmp_path):
        code = main([
            "fit", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "x"),
            "--set", "forecasts=nowhere.csv",
        ])
        assert code == 3


class TestSelect:
    def test_artifacts(self, workspace):
        sel = read_json(workspace / "out" / "selection" / "hs_lr.json")
        assert sel["horizons"] == [0, 24, 48, 120]
        assert set(sel["optimal"]) == {"0", "24", "48", "120"}
        barcode = (workspace / "out" / "selection" / "hs_lr_barcode.csv").read_text()
        assert barcode.splitlines()[0] == "covariate,0,24,48,120"
        assert barcode.splitlines()[1].startswith("intercept,1,1,1,1")

    def test_one_family_only(self, workspace, tmp_path):
        out2 = tmp_path / "only_lr"
        assert main(["fit", "--config", str(workspace / "run.json"), "--out", str(out2), "--family", "lr"]) == 0
        assert main(["select", "--config", str(workspace / "run.json"), "--out", str(out2)]) == 0
        assert (out2 / "selection" / "hs_lr.json").exists()
        assert not (out2 / "selection" / "hs_nhgr.json").exists()

    def test_missing_horizon_named_in_error(self, workspace, tmp_path, capsys):
        out2 = tmp_path / "broken"
        assert main(["fit", "--config", str(workspace / "run.json"), "--out", str(out2), "--family", "lr"]) == 0
        (out2 / "models" / "hs_lr_h048.json").unlink()
        code = main(["select", "--config", str(workspace / "run.json"), "--out", str(out2)])
        assert code == 3
        assert "horizon 48" in capsys.readouterr().err

    def test_select_before_fit_errors(self, workspace, tmp_path):
        code = main(["select", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "void")])
        assert code == 3


class TestDiagnose:
    def test_summary_structure(self, workspace):
        doc = read_json(workspace / "out" / "diagnostics" / "train" / "summary.json")
        sources = {e["source"] for e in doc["entries"]}
        assert sources == {"det", "lr", "nhgr"}
        by_key = {(e["horizon"], e["source"]): e for e in doc["entries"]}
        lr0 = by_key[(0, "lr")]
        assert abs(lr0["bias"]) < 1e-10  # in-sample OLS bias is zero
        assert lr0["bias_lo"] <= lr0["bias_hi"]
        assert lr0["ks_p"] is not None and 0.0 <= lr0["ks_p"] <= 1.0
        det0 = by_key[(0, "det")]
        assert det0["ks_p"] is None
        assert det0["mean_crps"] > 0

    def test_rank_histograms_pooled(self, workspace):
        doc = read_json(workspace / "out" / "diagnostics" / "train" / "rank_histograms.json")
        counts = doc["histograms"]["hs"]["nhgr"]["counts"]
        assert len(counts) == 10
        assert sum(counts) == doc["histograms"]["hs"]["nhgr"]["n"]

    def test_out_of_sample_period(self, workspace):
        assert main(["diagnose", "--config", str(workspace / "run.json"), "--period", "p1"]) == 0
        doc = read_json(workspace / "out" / "diagnostics" / "p1" / "summary.json")
        assert doc["period"] == "p1"
        assert len(doc["entries"]) == 3 * 4  # sources x horizons

    def test_period_without_data(self, workspace):
        code = main([
            "diagnose", "--config", str(workspace / "run.json"), "--period", "p1",
            "--set", 'test_periods={"p1":{"start":"2031-01-01T00:00Z","end":"2031-02-01T00:00Z"}}',
        ])
        assert code == 3

    def test_unknown_period_is_config_error(self, workspace):
        assert main(["diagnose", "--config", str(workspace / "run.json"), "--period", "zzz"]) == 2


class TestPredict:
    def test_interval_width_and_benchmark(self, workspace):
        assert main([
            "predict", "--config", str(workspace / "run.json"), "--issue-time", "2022-06-01T00:00Z",
        ]) == 0
        doc = read_json(workspace / "out" / "predictions" / "20220601T0000Z.json")
        rows = {(e["source"], e["horizon"]): e for e in doc["entries"]}
        lr24 = rows[("lr", 24)]
        width = lr24["hi95"] - lr24["lo95"]
        assert width == pytest.approx(2 * 1.959963984540054 * lr24["sigma"], rel=1e-12)
        det24 = rows[("det", 24)]
        assert det24["sigma"] == 0.0
        assert det24["lo95"] == det24["hi95"] == det24["mu"]

    def test_missing_issue_time(self, workspace):
        code = main([
            "predict", "--config", str(workspace / "run.json"), "--issue-time", "2031-01-01T00:00Z",
        ])
        assert code == 3


class TestReport:
    def test_parameter_tables(self, workspace):
        assert main(["report", "--config", str(workspace / "run.json")]) == 0
        text = (workspace / "out" / "selection" / "params_hs_nhgr.csv").read_text()
        lines = text.strip().splitlines()
        assert lines[0] == "horizon,parameter,estimate,lo95,hi95"
        # every horizon contributes intercept + covariates + d + e rows
        assert sum(1 for ln in lines[1:] if ln.split(",")[1] == "e") == 4


class TestConfigErrors:
    def test_bad_json_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        assert main(["fit", "--config", str(p)]) == 2

    def test_overlapping_periods(self, workspace, tmp_path):
        code = main([
            "fit", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "x"),
            "--set", 'test_periods={"p1":{"start":"2022-06-01T00:00Z","end":"2022-06-05T00:00Z"}}',
        ])
        assert code == 2

    def test_low_bootstrap_rejected(self, workspace, tmp_path):
        code = main([
            "fit", "--config", str(workspace / "run.json"), "--out", str(tmp_path / "x"),
            "--bootstrap", "10",
        ])
        assert code == 2
