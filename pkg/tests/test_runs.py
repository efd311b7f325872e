from __future__ import annotations

import pytest

from macdm.core.config import Settings
from macdm.core.exceptions import ConfigError, DatasetError
from macdm.db import init_db, make_engine, make_session_factory
from macdm.models import ArtifactKind, RunStatus
from macdm.phantoms.storage import manifest_hash, save_dataset
from macdm.runs import RUN_MANIFEST_NAME, RunManifest, RunRecorder, artifact_hash, get_run, list_runs


@pytest.fixture
def sessions(tmp_path):
    engine = make_engine(f"sqlite:///{tmp_path / 'registry.db'}")
    init_db(engine)
    return make_session_factory(engine)


@pytest.fixture
def dataset(tmp_path, corpus):
    save_dataset(corpus, tmp_path / "data")
    return tmp_path / "data"


def test_successful_run_is_recorded(tmp_path, sessions, dataset):
    settings = Settings(seed=4)
    out = tmp_path / "out"
    out.mkdir()
    (out / "thing.bin").write_bytes(b"payload")
    with RunRecorder("phantom-gen", settings, ["phantom-gen", "--out", str(out)], sessions) as run:
        run.add_seed("phantoms", 11)
        run.add_input("data", ArtifactKind.DATASET, dataset)
        run.add_output("thing", ArtifactKind.CHECKPOINT, out / "thing.bin")
        run.finish(out)

    manifest = RunManifest.read(out)
    assert manifest.command == "phantom-gen"
    assert manifest.argv[0] == "phantom-gen"
    assert manifest.seeds == {"seed": 4, "phantoms": 11}
    assert manifest.inputs[0].sha256 == manifest_hash(dataset)
    assert manifest.config["seed"] == 4

    (row,) = list_runs(sessions)
    assert row.status == RunStatus.SUCCEEDED
    details = get_run(sessions, row.id)
    assert details["output_dir"] == str(out)
    assert {a["role"] for a in details["artifacts"]} == {"input", "output"}
    assert details["manifest"]["config_hash"] == manifest.config_hash


def test_failed_run_keeps_the_error(tmp_path, sessions):
    with pytest.raises(DatasetError):
        with RunRecorder("translate", Settings(), [], sessions):
            raise DatasetError("no manifest.json", "rec-1")
    (row,) = list_runs(sessions)
    assert row.status == RunStatus.FAILED
    assert "rec-1" in get_run(sessions, row.id)["error"]
    assert not list(tmp_path.glob(f"**/{RUN_MANIFEST_NAME}"))


def test_runs_are_listed_newest_first(tmp_path, sessions):
    for command in ("a", "b", "c"):
        with RunRecorder(command, Settings(), [], sessions) as run:
            run.finish(tmp_path)
    assert [r.command for r in list_runs(sessions, limit=2)] == ["c", "b"]
    assert get_run(sessions, 999) is None


def test_recorder_without_registry_still_writes_manifest(tmp_path):
    with RunRecorder("fid", Settings(), ["fid"]) as run:
        manifest = run.finish(tmp_path)
    assert run.run_id is None
    assert RunManifest.read(tmp_path / RUN_MANIFEST_NAME) == manifest


def test_artifact_hash(tmp_path, dataset):
    assert artifact_hash(dataset) == manifest_hash(dataset)
    path = tmp_path / "x.bin"
    path.write_bytes(b"abc")
    assert artifact_hash(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigError):
        artifact_hash(tmp_path / "empty")


def test_manifest_read_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunManifest.read(tmp_path)
    (tmp_path / RUN_MANIFEST_NAME).write_text("{}", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed"):
        RunManifest.read(tmp_path)
