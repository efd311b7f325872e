"""Value-range conventions: datasets store [0, 1], networks see [-1, 1]."""

from __future__ import annotations

from typing import Union

import numpy as np
import torch

from macdm.core.exceptions import NumericalError

ImageTensor = torch.Tensor
ArrayLike = Union[np.ndarray, torch.Tensor]

MASK_THRESHOLD = 0.0  # midpoint of the {-1, +1} mask encoding


def to_model_range(x: ArrayLike) -> ArrayLike:
    return x * 2.0 - 1.0


def to_unit_range(x: ArrayLike) -> ArrayLike:
    return (x + 1.0) / 2.0


def binarize_mask(x: torch.Tensor) -> torch.Tensor:
    """Model-range mask channel -> exact {0, 1} float mask."""
    return (x > MASK_THRESHOLD).to(x.dtype)


def ensure_finite(x: torch.Tensor, what: str, **diagnostics) -> torch.Tensor:
    if not torch.isfinite(x).all():
        bad = int((~torch.isfinite(x)).sum())
        raise NumericalError(f"{what} has {bad} non-finite entries", diagnostics)
    return x
