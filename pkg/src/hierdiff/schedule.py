"""Noise schedules and the closed-form diffusion operations.

Timesteps are 1-based: t runs over [1, T], and the internal tables store the
value for timestep t at index t-1.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

SCHEDULE_KINDS = ("linear",)


@dataclass(frozen=True)
class NoiseSchedule:
    """beta/alpha/alpha_bar tables plus the config that generated them."""

    kind: str
    total_steps: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.beta.shape != (self.total_steps,):
            raise ShapeError(f"beta table must have length {self.total_steps}")
        if np.any(self.beta <= 0.0) or np.any(self.beta >= 1.0):
            raise ConfigError("beta values must lie strictly inside (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        recomputed = np.cumprod(self.alpha)
        if not np.allclose(recomputed, self.alpha_bar, rtol=0.0, atol=1e-12):
            raise ConfigError("alpha_bar inconsistent with the product of alphas")

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"timestep {t} outside [1, {self.total_steps}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[self._check_t(t) - 1])

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.beta).tobytes()).hexdigest()

    def to_config(self) -> dict:
        return {
            "kind": self.kind,
            "total_steps": self.total_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "digest": self.digest(),
        }

    @staticmethod
    def from_config(config: dict) -> "NoiseSchedule":
        sched = build_schedule(
            config["kind"], int(config["total_steps"]),
            float(config["beta_start"]), float(config["beta_end"]),
        )
        stored = config.get("digest")
        if stored is not None and stored != sched.digest():
            raise ConfigError("noise-schedule digest mismatch: stored tables do not match recomputation")
        return sched


def build_schedule(kind: str = "linear", total_steps: int = 1000,
                   beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Construct the beta/alpha/alpha_bar tables for ``total_steps`` timesteps."""
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; supported: {SCHEDULE_KINDS}")
    total_steps = int(total_steps)
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if total_steps == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(kind=kind, total_steps=total_steps, beta_start=float(beta_start),
                         beta_end=float(beta_end), beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-diffuse z0 to timestep t: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ShapeError(f"q_sample noise shape {eps.shape} does not match data shape {z0.shape}")
    abar = schedule.alpha_bar_at(t)
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def reverse_step(z_t: np.ndarray, predicted_eps: np.ndarray, t: int,
                 schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """One ancestral denoising step from z_t to z_{t-1}.

    Mean (1/sqrt(alpha_t)) * (z_t - beta_t / sqrt(1 - abar_t) * predicted_eps),
    variance beta_t; the noise term is suppressed at t == 1.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    predicted_eps = np.asarray(predicted_eps, dtype=np.float64)
    if z_t.shape != predicted_eps.shape:
        raise ShapeError(f"predicted noise shape {predicted_eps.shape} does not match {z_t.shape}")
    t = schedule._check_t(t)
    beta = schedule.beta_at(t)
    alpha = schedule.alpha_at(t)
    abar = schedule.alpha_bar_at(t)
    mean = (z_t - beta / np.sqrt(1.0 - abar) * predicted_eps) / np.sqrt(alpha)
    if t == 1:
        return mean
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != z_t.shape:
        raise ShapeError(f"injected noise shape {noise.shape} does not match {z_t.shape}")
    return mean + np.sqrt(beta) * noise


@dataclass(frozen=True)
class LossWeightConfig:
    """Coefficients of the timestep-aware loss weight (1 - abar_t) * w1 + w2."""

    w1: float = 4.5
    w2: float = 0.5


def loss_weight(t: int, schedule: NoiseSchedule, config: LossWeightConfig) -> float:
    """Timestep-aware weight; lies in [w2, w1 + w2] and is nondecreasing in t."""
    abar = schedule.alpha_bar_at(t)
    return (1.0 - abar) * config.w1 + config.w2
