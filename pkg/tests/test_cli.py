import pandas as pd
import pytest
import yaml

from src.cli import main

PROFILE = {
    "name": "cli-test",
    "plan": "zurich",
    "rema_grid": {
        "alpha": [0.5], "alpha_min": [0.1], "alpha_max": [0.99],
        "punish": [0.1], "reward": [0.02], "slide_size": [8], "sensitivity": [3.0, 4.0],
    },
    "feed_window": 3,
    "train": {"epochs": 2, "hidden": [4], "batch_size": 128, "patience": 2},
}


@pytest.fixture
def profile(tmp_path):
    path = tmp_path / "cli-test.yaml"
    path.write_text(yaml.safe_dump(PROFILE), encoding="utf-8")
    return str(path)


def test_no_command_is_a_usage_error():
    assert main([]) == 1


def test_unknown_option_is_a_usage_error():
    assert main(["--verbose", "preprocess"]) == 1


def test_unknown_log_level(tmp_path):
    assert main(["--log-level", "chatty", "--out", str(tmp_path), "preprocess", "--synthetic", "300"]) == 1


def test_preprocess_needs_an_input(tmp_path):
    assert main(["--out", str(tmp_path), "preprocess"]) == 1


def test_missing_input_is_a_data_error(tmp_path):
    assert main(["--out", str(tmp_path), "preprocess", str(tmp_path / "absent.csv")]) == 2


def test_unknown_profile_is_a_usage_error(tmp_path):
    assert main(["--config", "no-such-profile", "--out", str(tmp_path), "preprocess", "--synthetic", "300"]) == 1


def test_preprocess_synthetic(tmp_path):
    assert main(["--seed", "3", "--out", str(tmp_path), "preprocess", "--synthetic", "300", "--profile", "zurich"]) == 0

    trace = pd.read_csv(tmp_path / "trace.csv")
    assert list(trace.columns) == ["timestamp", "latitude", "longitude", "speed"]
    assert len(trace) == 300
    assert not trace.isna().any().any()
    assert (tmp_path / "rejects.csv").is_file()
    assert list(pd.read_csv(tmp_path / "norm_stats.csv")["channel"]) == ["latitude", "longitude", "speed"]


def test_infeasible_plan_is_a_data_error(tmp_path):
    # ten 10-point episodes plus eleven 10-point gaps do not fit in 200 points
    plan = tmp_path / "dense.yaml"
    plan.write_text("pinned: {kind: constant, magnitude: 5, duration: 10, rate: 0.5}\n", encoding="utf-8")
    assert main(["--out", str(tmp_path), "preprocess", "--synthetic", "200"]) == 0
    assert main(["--out", str(tmp_path), "inject", str(tmp_path / "trace.csv"), "--plan", str(plan)]) == 2


def test_command_chain(tmp_path, profile):
    def run(*argv):
        return main(["--config", profile, "--seed", "2", "--out", str(tmp_path), *argv])

    assert run("preprocess", "--synthetic", "3000", "--profile", "zurich") == 0
    assert run("inject", str(tmp_path / "trace.csv")) == 0
    labeled = pd.read_csv(tmp_path / "labeled.csv")
    assert len(labeled) == 3000
    assert "latitude_detect" in labeled.columns

    assert run("tune-rema", str(tmp_path / "labeled.csv")) == 0
    assert len(pd.read_csv(tmp_path / "rema_scores.csv")) == 2

    rema = str(tmp_path / "rema.yaml")
    assert run("features", str(tmp_path / "labeled.csv"), "--rema", rema) == 0
    assert len(pd.read_csv(tmp_path / "features_latitude.csv")) == 3000 - 20

    norm_stats = str(tmp_path / "norm_stats.csv")
    assert run("train", str(tmp_path / "labeled.csv"), "--rema", rema, "--norm-stats", norm_stats) == 0
    bundle = str(tmp_path / "bundle")

    assert run("predict", bundle, str(tmp_path / "labeled.csv")) == 0
    predictions = pd.read_csv(tmp_path / "predictions.csv")
    assert len(predictions) == 2 * 3000
    assert set(predictions["time_type"]) <= {"none", "transient", "intermittent", "permanent"}

    assert run("recover", bundle, str(tmp_path / "trace.csv")) == 0
    recovery = pd.read_csv(tmp_path / "recovery.csv")
    assert list(recovery.columns) == ["timestamp", "channel", "value", "action", "bias_type", "time_type"]
    assert len(recovery) == 2 * 3000

    assert run("bench", bundle, str(tmp_path / "trace.csv"), "--points", "50") == 0
    assert pd.read_csv(tmp_path / "latency.csv")["samples"].iloc[0] == 150


def write_manifest(tmp_path):
    manifest = {
        "data": {"synthetic_length": 1200, "profile": "zurich"},
        "rema": {"params": {
            "alpha": 0.5, "alpha_min": 0.1, "alpha_max": 0.99,
            "punish": 0.1, "reward": 0.02, "slide_size": 8, "sensitivity": 3.0,
        }},
        "train": {"window": 3, "hidden": [4], "epochs": 1, "batch_size": 128},
        "scenarios": [{"name": "instant-100", "injection": {"kind": "instant", "magnitude": 100}}],
    }
    path = tmp_path / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest), encoding="utf-8")
    return str(path)


def test_evaluate(tmp_path):
    assert main(["--out", str(tmp_path / "out"), "evaluate", write_manifest(tmp_path)]) == 0
    assert (tmp_path / "out" / "report.csv").is_file()


def test_evaluate_stage_failure(tmp_path, monkeypatch):
    def broken_train(*args, **kwargs):
        raise RuntimeError("diverged")

    monkeypatch.setattr("src.stages.training.train", broken_train)
    assert main(["--out", str(tmp_path / "out"), "evaluate", write_manifest(tmp_path)]) == 3
    report = pd.read_csv(tmp_path / "out" / "report.csv")
    assert list(report["status"]) == ["failed:train"]


def test_evaluate_invalid_manifest(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("scenarios: []\n", encoding="utf-8")
    assert main(["--out", str(tmp_path), "evaluate", str(path)]) == 2
