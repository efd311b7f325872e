from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional


class MacdmError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MacdmError):
    """Raised when a resolved configuration is inconsistent."""


class ScheduleError(MacdmError):
    """Raised when a noise schedule cannot be constructed."""


class TimestepError(MacdmError):
    """Raised when a timestep falls outside the schedule's range."""


class ShapeMismatchError(MacdmError):
    """Raised when tensors that must share a shape do not."""


class NumericalError(MacdmError):
    """
    Raised on non-finite values or degenerate divisions.

    `diagnostics` carries whatever the caller could gather (timesteps, norms, batch ids).
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class TrainingDivergedError(NumericalError):
    """Raised when a training loss turns non-finite."""

    def __init__(
        self,
        message: str,
        diagnostics: Optional[Dict[str, Any]] = None,
        last_good_checkpoint: Optional[Path] = None,
    ) -> None:
        super().__init__(message, diagnostics)
        self.last_good_checkpoint = last_good_checkpoint


class CheckpointError(MacdmError):
    """Raised when a checkpoint is missing or unreadable."""


class CheckpointMismatchError(MacdmError):
    """Raised when two checkpoints disagree on T, channel weights or resolution."""


class DatasetError(MacdmError):
    """Raised on missing files, checksum mismatches or malformed manifests."""

    def __init__(self, message: str, record_id: Optional[str] = None) -> None:
        super().__init__(message if record_id is None else f"[{record_id}] {message}")
        self.record_id = record_id


class InsufficientDataError(MacdmError):
    """Raised when a dataset lacks a class or signal an operation needs."""


class UndefinedMetricError(MacdmError):
    """Raised when a metric's denominator is zero."""
