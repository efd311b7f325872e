from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from macdm.core.exceptions import NumericalError, ShapeMismatchError

logger = logging.getLogger(__name__)

# Added to both covariance diagonals before taking square roots.
SHRINKAGE = 1e-6


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(features: np.ndarray) -> GaussianFit:
    """Sample mean and (unbiased) covariance of an (N, D) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.ndim != 2 or features.shape[0] < 2:
        raise ShapeMismatchError(f"need an (N>=2, D) feature matrix, got {features.shape}")
    if not np.isfinite(features).all():
        raise NumericalError("features contain non-finite values", {"shape": features.shape})
    if features.shape[0] <= features.shape[1]:
        logger.warning(
            "%d samples for %d feature dims; covariance relies on shrinkage",
            features.shape[0],
            features.shape[1],
        )
    cov = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
    return GaussianFit(mean=features.mean(axis=0), cov=cov)


def sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root of a symmetric positive-semidefinite matrix."""
    sym = 0.5 * (matrix + matrix.T)
    try:
        values, vectors = linalg.eigh(sym)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance_from_stats(a: GaussianFit, b: GaussianFit, eps: float = SHRINKAGE) -> float:
    """
    ‖μa-μb‖² + Tr(Σa + Σb - 2(ΣaΣb)^½).

    The cross term is evaluated as Tr((Σa^½ Σb Σa^½)^½), which has the same trace and stays
    symmetric positive-semidefinite.
    """
    if a.dim != b.dim:
        raise ShapeMismatchError(f"feature dims differ: {a.dim} vs {b.dim}")
    offset = eps * np.eye(a.dim)
    cov_a, cov_b = a.cov + offset, b.cov + offset
    root_a = sqrtm_psd(cov_a)
    middle = root_a @ cov_b @ root_a
    try:
        eigenvalues = linalg.eigvalsh(0.5 * (middle + middle.T))
    except linalg.LinAlgError as exc:
        raise NumericalError(f"covariance product failed after shrinkage: {exc}") from exc
    tr_covmean = float(np.sqrt(np.clip(eigenvalues, 0.0, None)).sum())
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_covmean)
    if not np.isfinite(value):
        raise NumericalError("Fréchet distance is not finite")
    return max(value, 0.0)


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray, eps: float = SHRINKAGE) -> float:
    return frechet_distance_from_stats(fit_gaussian(features_a), fit_gaussian(features_b), eps)
