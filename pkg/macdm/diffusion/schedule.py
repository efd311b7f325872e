from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch

from macdm.core.exceptions import ScheduleError, TimestepError
from macdm.core.hashing import config_hash

from .enums import ScheduleKind

Timestep = Union[int, torch.Tensor]

# Cosine schedule betas are capped below 1 so that no step destroys the signal outright.
MAX_COSINE_BETA = 0.999


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """
    Per-timestep tables of the forward process, indexed by t in 1..T.

    Arrays are float64 and read-only. `betas`, `alphas` and `posterior_variance` have length T
    (entry t-1 holds step t); `alphas_cumprod` has length T+1 with alphas_cumprod[0] = 1.
    """

    kind: ScheduleKind
    timesteps: int
    betas: np.ndarray
    alphas: np.ndarray
    alphas_cumprod: np.ndarray
    posterior_variance: np.ndarray
    beta_start: Optional[float] = None
    beta_end: Optional[float] = None

    # ---------- scalar accessors ----------

    def beta(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """ᾱ_t for t in 0..T; ᾱ_0 = 1."""
        if not 0 <= t <= self.timesteps:
            raise TimestepError(f"t={t} outside [0, {self.timesteps}]")
        return float(self.alphas_cumprod[t])

    def posterior_var(self, t: int) -> float:
        self.check_timestep(t)
        return float(self.posterior_variance[t - 1])

    # ---------- derived tables ----------

    @property
    def log_betas(self) -> np.ndarray:
        return np.log(self.betas)

    @property
    def posterior_log_variance_clipped(self) -> np.ndarray:
        # β̃_1 = 0, so step 1 borrows β̃_2 to keep the log finite.
        if self.timesteps == 1:
            return np.log(self.betas)
        pv = self.posterior_variance
        return np.log(np.append(pv[1], pv[1:]))

    @property
    def snr(self) -> np.ndarray:
        """Signal-to-noise ratio ᾱ_t / (1 - ᾱ_t) for t in 1..T."""
        ab = self.alphas_cumprod[1:]
        return ab / (1.0 - ab)

    def check_timestep(self, t: Timestep, lowest: int = 1) -> None:
        if isinstance(t, torch.Tensor):
            if t.numel() == 0:
                return
            lo, hi = int(t.min()), int(t.max())
        else:
            lo = hi = int(t)
        if lo < lowest or hi > self.timesteps:
            raise TimestepError(
                f"timestep range [{lo}, {hi}] outside [{lowest}, {self.timesteps}]"
            )

    def fingerprint(self) -> str:
        return config_hash(
            {
                "kind": self.kind.value,
                "T": self.timesteps,
                "beta_start": self.beta_start,
                "beta_end": self.beta_end,
            }
        )

    def gather(self, table: np.ndarray, t: Timestep, like: torch.Tensor, offset: int = 1) -> torch.Tensor:
        """
        Pick table[t - offset] and shape it to broadcast against `like`.

        Integer t gives a 0-d tensor; a (B,) tensor gives shape (B, 1, ..., 1).
        """
        if isinstance(t, torch.Tensor):
            idx = (t.detach().cpu().long() - offset).numpy()
            values = torch.as_tensor(table[idx], dtype=like.dtype, device=like.device)
            return values.reshape(-1, *([1] * (like.dim() - 1)))
        return torch.as_tensor(table[int(t) - offset], dtype=like.dtype, device=like.device)


def _cosine_betas(timesteps: int, s: float = 0.008) -> np.ndarray:
    def f(u: float) -> float:
        return math.cos((u + s) / (1 + s) * math.pi / 2) ** 2

    betas = [
        min(1.0 - f((i + 1) / timesteps) / f(i / timesteps), MAX_COSINE_BETA)
        for i in range(timesteps)
    ]
    return np.asarray(betas, dtype=np.float64)


def build_schedule(
    kind: Union[ScheduleKind, str],
    timesteps: int,
    beta_start: Optional[float] = None,
    beta_end: Optional[float] = None,
) -> NoiseSchedule:
    """
    Build the β, α, ᾱ and posterior-variance tables for T steps.

    Linear schedules space β evenly from beta_start to beta_end inclusive; the cosine variant
    ignores the endpoints.
    """
    kind = ScheduleKind(kind)
    if int(timesteps) != timesteps or timesteps < 1:
        raise ScheduleError(f"T must be a positive integer, got {timesteps!r}")
    timesteps = int(timesteps)

    if kind == ScheduleKind.LINEAR:
        if beta_start is None or beta_end is None:
            raise ScheduleError("linear schedule needs beta_start and beta_end")
        if not (0 < beta_start <= beta_end < 1):
            raise ScheduleError(
                f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )
        betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    else:
        betas = _cosine_betas(timesteps)
        beta_start = beta_end = None

    if not np.all((betas > 0) & (betas < 1)):
        raise ScheduleError("every beta must lie in (0, 1)")

    alphas = 1.0 - betas
    alphas_cumprod = np.append(1.0, np.cumprod(alphas))
    # 1 - ᾱ_{t-1} is exactly 0 at t=1, so β̃_1 = 0. Betas below float64 resolution leave
    # ᾱ_t = 1 and a 0/0 here; those steps get β̃_t = 0 as well.
    one_minus_ab = 1.0 - alphas_cumprod[1:]
    posterior_variance = np.divide(
        betas * (1.0 - alphas_cumprod[:-1]),
        one_minus_ab,
        out=np.zeros_like(betas),
        where=one_minus_ab > 0,
    )

    return NoiseSchedule(
        kind=kind,
        timesteps=timesteps,
        betas=_frozen(betas),
        alphas=_frozen(alphas),
        alphas_cumprod=_frozen(alphas_cumprod),
        posterior_variance=_frozen(posterior_variance),
        beta_start=beta_start,
        beta_end=beta_end,
    )


def schedule_from_config(cfg) -> NoiseSchedule:
    """Build from a `ScheduleConfig` (endpoints resolved for the linear kind)."""
    start, end = cfg.resolved_betas()
    return build_schedule(cfg.kind, cfg.timesteps, start, end)
