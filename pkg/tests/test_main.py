"""
命令行测试: 退出码与小场景端到端流水线
"""
import pytest

from src.evaluation import read_metrics
from src.main import run_subcommand
from src.store import Store

CHAIN = ("synth", "detect", "track", "featurize", "train", "evaluate")


def dirs(tmp_path, tag="run"):
    base = tmp_path / tag
    return ["--store-dir", str(base / "store"), "--frames-dir", str(base / "frames"),
            "--models-dir", str(base / "models")]


def run_chain(tmp_path, scenario, tag="run", stages=CHAIN):
    flags = dirs(tmp_path, tag) + ["--model", "rfc", "--n-trees", "5", "--no-smote"]
    for stage in stages:
        extra = ["--scenario", scenario] if stage == "synth" else []
        assert run_subcommand([stage] + flags + extra) == 0, stage
    return tmp_path / tag / "store"


def test_unknown_subcommand_is_usage_error():
    assert run_subcommand(["fly"]) == 2


def test_bad_flag_value_is_usage_error(tmp_path):
    assert run_subcommand(["detect", "--radius", "wide"] + dirs(tmp_path)) == 2


def test_invalid_config_is_usage_error(tmp_path, capsys):
    assert run_subcommand(["detect", "--radius", "-1"] + dirs(tmp_path)) == 2
    assert "radius" in capsys.readouterr().out


def test_missing_config_file_is_usage_error(tmp_path):
    assert run_subcommand(["detect", "--config", str(tmp_path / "none.cfg")] + dirs(tmp_path)) == 2


def test_missing_frames_is_runtime_error(tmp_path, capsys):
    assert run_subcommand(["detect"] + dirs(tmp_path)) == 1
    assert "❌" in capsys.readouterr().out


def test_missing_upstream_artifact(tmp_path, capsys):
    assert run_subcommand(["train"] + dirs(tmp_path)) == 1
    assert "featurize" in capsys.readouterr().out


def test_full_chain(tmp_path, small_scenario_path):
    store_dir = run_chain(tmp_path, small_scenario_path)

    for name in ("strikes.txt", "observations.txt", "transformers.txt", "scenario.cfg"):
        assert (store_dir / "synth" / name).is_file()
    assert len(list((store_dir / "detect").glob("*.cells"))) == 8
    assert (store_dir / "track" / "tracks.txt").is_file()
    assert (store_dir / "featurize" / "dataset.csv").is_file()
    assert (tmp_path / "run" / "models" / "forest.scf").is_file()

    metrics = read_metrics(store_dir / "evaluate" / "metrics_rfc.txt")
    assert metrics["model"] == "rfc"
    assert 0.0 <= float(metrics["accuracy"]) <= 1.0
    assert metrics["f1_micro"] == metrics["accuracy"]

    with Store(str(store_dir)) as store:
        assert [r["stage"] for r in store.get_runs()] == list(CHAIN)

    flags = dirs(tmp_path) + ["--model", "rfc"]
    assert run_subcommand(["predict", "--synthetic", "500"] + flags) == 0
    assert (store_dir / "predict" / "predictions_rfc.csv").read_text().splitlines()[0] == "prediction,p0,p1,p2,p3"
    assert run_subcommand(["report"] + flags) == 0
    assert (store_dir / "report" / "index.html").is_file()


def test_tampered_artifact_stops_downstream(tmp_path, small_scenario_path):
    store_dir = run_chain(tmp_path, small_scenario_path, stages=("synth", "detect", "track"))
    with open(store_dir / "track" / "tracks.txt", "a") as f:
        f.write("\n")
    assert run_subcommand(["featurize"] + dirs(tmp_path)) == 1


@pytest.mark.slow
def test_rerun_is_byte_identical(tmp_path, small_scenario_path):
    first = run_chain(tmp_path, small_scenario_path, "a")
    second = run_chain(tmp_path, small_scenario_path, "b")
    with Store(str(first)) as a, Store(str(second)) as b:
        digests = a.content_digests()
        assert digests == b.content_digests()
        assert "featurize/dataset.csv" in digests
