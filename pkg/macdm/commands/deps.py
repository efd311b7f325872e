from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from sqlalchemy.orm import Session, sessionmaker

from macdm.core.config import Settings
from macdm.core.exceptions import ConfigError
from macdm.phantoms.storage import load_dataset
from macdm.phantoms.triplet import Corpus
from macdm.runs import RunRecorder


@dataclass
class CommandContext:
    """
    What every subcommand handler receives.

    - `settings`: the fully resolved configuration for this invocation.
    - `sessions`: run-registry session factory, or None when the registry is disabled.
    - `argv`: the raw arguments, echoed into the run manifest.
    """

    settings: Settings
    sessions: Optional[sessionmaker[Session]] = None
    argv: List[str] = field(default_factory=list)

    def recorder(self, command: str) -> RunRecorder:
        return RunRecorder(command, self.settings, self.argv, self.sessions)

    @property
    def device(self) -> str:
        return self.settings.device

    @property
    def progress(self) -> bool:
        return self.settings.progress


def output_dir(ctx: CommandContext, args: argparse.Namespace, default_name: str) -> Path:
    """--out when given, otherwise <runs_dir>/<default_name>."""
    out = getattr(args, "out", None)
    return Path(out) if out is not None else ctx.settings.runs_dir / default_name


def require_dataset(path: Optional[Path], flag: str) -> Corpus:
    if path is None:
        raise ConfigError(f"{flag} is required")
    return load_dataset(Path(path))


def add_common_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, default=None, help="Output directory.")
    parser.add_argument(
        "--overwrite", action="store_true", help="Replace an existing output directory."
    )
