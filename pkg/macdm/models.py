import enum

from sqlalchemy import (
    Column,
    DateTime,
    Enum,
    Float,
    ForeignKey,
    Integer,
    String,
    Text,
    UniqueConstraint,
    func,
)
from sqlalchemy.orm import relationship

from macdm.db import Base


# ----- ENUMS ----- #

class RunStatus(str, enum.Enum):
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"


class ArtifactKind(str, enum.Enum):
    DATASET = "DATASET"
    CHECKPOINT = "CHECKPOINT"
    REPORT = "REPORT"
    LOSS_CURVE = "LOSS_CURVE"


# ----- RUNS ----- #

class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, nullable=False, index=True)
    output_dir = Column(String, nullable=True)

    status = Column(
        Enum(RunStatus, name="run_status"),
        nullable=False,
        server_default=RunStatus.RUNNING.value,
    )

    seed = Column(Integer, nullable=False)
    config_hash = Column(String(32), nullable=False)
    # resolved config and the rest of the manifest, as JSON text
    manifest_json = Column(Text, nullable=True)
    version = Column(String, nullable=False)
    error = Column(Text, nullable=True)
    wall_clock_seconds = Column(Float, nullable=True)

    started_at = Column(
        DateTime(timezone=True),
        server_default=func.now(),
        nullable=False,
    )
    finished_at = Column(DateTime(timezone=True), nullable=True)

    artifacts = relationship(
        "RunArtifact",
        back_populates="run",
        cascade="all, delete-orphan",
    )


class RunArtifact(Base):
    __tablename__ = "run_artifacts"

    id = Column(Integer, primary_key=True)
    run_id = Column(
        Integer,
        ForeignKey("runs.id", ondelete="CASCADE"),
        nullable=False,
    )
    # "input" / "output"
    role = Column(String(10), nullable=False, server_default="output")
    kind = Column(Enum(ArtifactKind, name="artifact_kind"), nullable=False)
    name = Column(String, nullable=False)
    path = Column(String, nullable=False)
    sha256 = Column(String(64), nullable=False)

    run = relationship("Run", back_populates="artifacts")

    __table_args__ = (
        UniqueConstraint("run_id", "role", "name", name="uq_run_artifact_name"),
    )
