"""
Run manifests and the run registry.

Every artifact-producing command opens a RunRecorder, registers its inputs and outputs, and on
success writes run_manifest.json next to the outputs and marks the registry row SUCCEEDED.
"""
from __future__ import annotations

import json
import logging
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError
from sqlalchemy import select
from sqlalchemy.orm import Session, sessionmaker

from macdm import __version__
from macdm.core.config import Settings
from macdm.core.exceptions import ConfigError
from macdm.core.files import atomic_write_text
from macdm.core.hashing import config_hash, sha256_file
from macdm.models import ArtifactKind, Run, RunArtifact, RunStatus
from macdm.phantoms.storage import MANIFEST_NAME, manifest_hash

logger = logging.getLogger(__name__)

RUN_MANIFEST_NAME = "run_manifest.json"


class ArtifactRef(BaseModel):
    name: str
    kind: ArtifactKind
    path: str
    sha256: str


class RunManifest(BaseModel):
    """Everything needed to re-execute a command: argv, resolved config, seeds and hashes."""

    command: str
    argv: List[str] = Field(default_factory=list)
    config: Dict[str, Any]
    config_hash: str
    seeds: Dict[str, int] = Field(default_factory=dict)
    inputs: List[ArtifactRef] = Field(default_factory=list)
    outputs: List[ArtifactRef] = Field(default_factory=list)
    version: str = __version__
    environment: Dict[str, str] = Field(default_factory=dict)
    started_at: datetime
    wall_clock_seconds: Optional[float] = None

    def write(self, directory: Path) -> Path:
        path = Path(directory) / RUN_MANIFEST_NAME
        atomic_write_text(path, self.model_dump_json(indent=2))
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / RUN_MANIFEST_NAME
        if not path.exists():
            raise ConfigError(f"no run manifest at {path}")
        try:
            return cls.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as exc:
            raise ConfigError(f"malformed run manifest {path}: {exc}") from exc


def environment_info() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "platform": platform.platform(),
    }


def artifact_hash(path: Path) -> str:
    """Datasets hash by manifest, everything else by file content."""
    path = Path(path)
    if path.is_dir():
        if (path / MANIFEST_NAME).exists():
            return manifest_hash(path)
        if (path / RUN_MANIFEST_NAME).exists():
            return sha256_file(path / RUN_MANIFEST_NAME)
        raise ConfigError(f"cannot hash directory {path}: no manifest")
    return sha256_file(path)


class RunRecorder:
    """
    Tracks one command execution.

    Usage:
        with RunRecorder("fid", settings, argv, sessions) as run:
            run.add_input("a", ArtifactKind.DATASET, path_a)
            ...
            run.finish(output_dir)
    """

    def __init__(
        self,
        command: str,
        settings: Settings,
        argv: Optional[List[str]] = None,
        sessions: Optional[sessionmaker[Session]] = None,
    ) -> None:
        self.command = command
        self.settings = settings
        self.argv = list(argv or [])
        self.sessions = sessions
        self.seeds: Dict[str, int] = {"seed": settings.seed}
        self.inputs: List[ArtifactRef] = []
        self.outputs: List[ArtifactRef] = []
        self.run_id: Optional[int] = None
        self.manifest: Optional[RunManifest] = None
        self._started = datetime.now(timezone.utc)
        self._clock = time.perf_counter()
        self._config = settings.resolved()
        self._config_hash = config_hash(self._config)

    def __enter__(self) -> "RunRecorder":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc is not None:
            self.fail(exc)
        return False

    def start(self) -> None:
        if self.sessions is None:
            return
        with self.sessions() as session:
            row = Run(
                command=self.command,
                seed=self.settings.seed,
                config_hash=self._config_hash,
                version=__version__,
            )
            session.add(row)
            session.commit()
            self.run_id = row.id
        logger.debug("registered run %s (%s)", self.run_id, self.command)

    def add_seed(self, name: str, value: int) -> None:
        self.seeds[name] = int(value)

    def _ref(self, name: str, kind: ArtifactKind, path: Path) -> ArtifactRef:
        return ArtifactRef(name=name, kind=kind, path=str(path), sha256=artifact_hash(path))

    def add_input(self, name: str, kind: ArtifactKind, path: Path) -> ArtifactRef:
        ref = self._ref(name, kind, path)
        self.inputs.append(ref)
        return ref

    def add_output(self, name: str, kind: ArtifactKind, path: Path) -> ArtifactRef:
        ref = self._ref(name, kind, path)
        self.outputs.append(ref)
        return ref

    def build_manifest(self) -> RunManifest:
        return RunManifest(
            command=self.command,
            argv=self.argv,
            config=self._config,
            config_hash=self._config_hash,
            seeds=dict(self.seeds),
            inputs=list(self.inputs),
            outputs=list(self.outputs),
            environment=environment_info(),
            started_at=self._started,
            wall_clock_seconds=round(time.perf_counter() - self._clock, 3),
        )

    def finish(self, output_dir: Path) -> RunManifest:
        self.manifest = self.build_manifest()
        path = self.manifest.write(Path(output_dir))
        logger.info("wrote %s", path)
        self._close(RunStatus.SUCCEEDED, output_dir=str(output_dir))
        return self.manifest

    def fail(self, exc: BaseException) -> None:
        logger.debug("run %s failed: %s", self.run_id, exc)
        self._close(RunStatus.FAILED, error=f"{type(exc).__name__}: {exc}")

    def _close(self, status: RunStatus, output_dir: Optional[str] = None, error: Optional[str] = None) -> None:
        if self.sessions is None or self.run_id is None:
            return
        manifest = self.manifest or self.build_manifest()
        with self.sessions() as session:
            row = session.get(Run, self.run_id)
            row.status = status
            row.output_dir = output_dir
            row.error = error
            row.manifest_json = manifest.model_dump_json()
            row.wall_clock_seconds = manifest.wall_clock_seconds
            row.finished_at = datetime.now(timezone.utc)
            for role, refs in (("input", manifest.inputs), ("output", manifest.outputs)):
                for ref in refs:
                    row.artifacts.append(
                        RunArtifact(role=role, kind=ref.kind, name=ref.name, path=ref.path, sha256=ref.sha256)
                    )
            session.commit()


def list_runs(sessions: sessionmaker[Session], limit: int = 50) -> List[Run]:
    with sessions() as session:
        rows = session.scalars(select(Run).order_by(Run.id.desc()).limit(limit)).all()
        session.expunge_all()
        return list(rows)


def get_run(sessions: sessionmaker[Session], run_id: int) -> Optional[Dict[str, Any]]:
    """Registry row plus artifacts as plain data, or None."""
    with sessions() as session:
        row = session.get(Run, run_id)
        if row is None:
            return None
        return {
            "id": row.id,
            "command": row.command,
            "status": row.status.value,
            "seed": row.seed,
            "config_hash": row.config_hash,
            "version": row.version,
            "output_dir": row.output_dir,
            "error": row.error,
            "started_at": row.started_at.isoformat() if row.started_at else None,
            "finished_at": row.finished_at.isoformat() if row.finished_at else None,
            "wall_clock_seconds": row.wall_clock_seconds,
            "artifacts": [
                {"role": a.role, "kind": a.kind.value, "name": a.name, "path": a.path, "sha256": a.sha256}
                for a in row.artifacts
            ],
            "manifest": json.loads(row.manifest_json) if row.manifest_json else None,
        }
