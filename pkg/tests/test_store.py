"""
store 测试: 产物登记、校验与运行记录
"""
import pytest

from src.store import MANIFEST_NAME, MissingArtifactError, Store, get_store


@pytest.fixture
def store(tmp_path):
    with Store(str(tmp_path / "store")) as s:
        yield s


def test_register_and_require(store):
    path = store.path_for("detect", "600.cells")
    path.write_text("cell\n")
    digest = store.register("detect", "600.cells")
    assert len(digest) == 64
    assert store.require("detect", "600.cells") == path
    assert store.has("detect", "600.cells")
    assert [a["name"] for a in store.artifacts("detect")] == ["600.cells"]


def test_missing_artifact(store):
    with pytest.raises(MissingArtifactError, match="detect"):
        store.require("detect", "nothing.cells")
    assert not store.has("detect", "nothing.cells")
    with pytest.raises(MissingArtifactError):
        store.register("detect", "never_written.cells")


def test_missing_artifact_is_file_not_found(store):
    with pytest.raises(FileNotFoundError):
        store.require("track", "tracks.txt")


def test_tampered_artifact_detected(store):
    path = store.path_for("featurize", "dataset.csv")
    path.write_text("a,b\n1,2\n")
    store.register("featurize", "dataset.csv")
    path.write_text("a,b\n1,3\n")
    with pytest.raises(MissingArtifactError, match="不符"):
        store.require("featurize", "dataset.csv")


def test_deleted_artifact_detected(store):
    path = store.path_for("track", "tracks.txt")
    path.write_text("0 0 0 1.0 1.0 0\n")
    store.register("track", "tracks.txt")
    path.unlink()
    with pytest.raises(MissingArtifactError):
        store.require("track", "tracks.txt")


def test_external_path_registration(store, tmp_path):
    model = tmp_path / "models" / "forest.scf"
    model.parent.mkdir()
    model.write_bytes(b"SCFOREST v1\n")
    store.register("train", "model_rfc", model)
    assert store.require("train", "model_rfc") == model


def test_clear_stage(store):
    for name in ("a.cells", "b.cells"):
        store.path_for("detect", name).write_text(name)
        store.register("detect", name)
    assert store.clear_stage("detect") == 2
    assert store.artifacts("detect") == []


def test_run_records(store):
    store.record_run("detect", 1.5, "3 帧")
    store.record_run("track", 0.5)
    runs = store.get_runs()
    assert [r["stage"] for r in runs] == ["detect", "track"]
    assert store.get_runs("detect")[0]["summary"] == "3 帧"


def test_content_digests_skip_manifest(tmp_path):
    store = get_store(str(tmp_path / "store"))
    try:
        store.path_for("evaluate", "metrics_rfc.txt").write_text("accuracy: 1.0\n")
        digests = store.content_digests()
        assert list(digests) == ["evaluate/metrics_rfc.txt"]
        assert not any(MANIFEST_NAME in key for key in digests)
    finally:
        store.close()
