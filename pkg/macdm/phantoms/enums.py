from __future__ import annotations

from enum import Enum


class Label(str, Enum):
    NORMAL = "normal"
    CML = "cml"

    @property
    def index(self) -> int:
        """Class index used by classifiers; CML is the positive class."""
        return 1 if self is Label.CML else 0

    @classmethod
    def from_index(cls, index: int) -> "Label":
        if index not in (0, 1):
            raise ValueError(f"class index must be 0 or 1, got {index}")
        return cls.CML if index == 1 else cls.NORMAL


class Provenance(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"
    PHANTOM = "phantom"
