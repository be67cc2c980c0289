"""Noise schedules, forward corruption, reverse sampling, and the noise/score bridge.

Time steps are 1-indexed: ``t`` runs over ``1..T``.  ``alpha_bar(0) == 1`` by
convention, which makes the posterior noise width ``sigma_tilde(1) == 0`` and
the final reverse step deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, complex_normal

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "forward_sample",
    "score_from_epsilon",
    "reverse_generative_step",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule ``beta_t`` with cached products.

    ``alphas[t-1] = 1 - betas[t-1]`` and ``alpha_bars[t-1]`` is the cumulative
    product of the alphas up to step ``t``.
    """

    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("schedule needs a 1-D beta array with T >= 2 entries")
        if betas[0] <= 0.0 or betas[-1] >= 1.0 or np.any(np.diff(betas) <= 0.0):
            raise ValueError(
                "betas must satisfy 0 < beta_1 < ... < beta_T < 1 (strictly increasing)"
            )
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def _check_step(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"step t={t} outside 1..{self.num_steps}")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self._check_step(t) - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check_step(t) - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal retention; ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[self._check_step(t) - 1])

    def sigma_tilde(self, t: int) -> float:
        """Reverse-posterior noise width; zero at ``t == 1``."""
        t = self._check_step(t)
        num = 1.0 - self.alpha_bar(t - 1)
        den = 1.0 - self.alpha_bar(t)
        return float(np.sqrt(num / den * self.beta(t)))


def linear_schedule(
    num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly interpolated betas between ``beta_start`` and ``beta_end``.

    Note: at small ``num_steps`` the default endpoints leave a substantial
    ``alpha_bar(T)``; samplers that start from white noise want endpoints
    chosen so ``alpha_bar(T)`` is near zero (e.g. ``beta_end=0.2`` at T=100).
    """
    if num_steps < 2:
        raise ValueError("num_steps must be >= 2")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise ValueError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return NoiseSchedule(np.linspace(beta_start, beta_end, num_steps))


def forward_sample(
    H0: np.ndarray, t: int, schedule: NoiseSchedule, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot corruption to step ``t``; returns ``(H_t, eps_t)``.

    ``H_t = sqrt(abar_t) H_0 + sqrt(1 - abar_t) eps_t`` with
    ``eps_t ~ CN(0, I)`` entrywise.  Leading batch axes are supported.
    """
    H0 = np.asarray(H0, dtype=np.complex128)
    abar = schedule.alpha_bar(schedule._check_step(t))
    eps = complex_normal(rng.generator(), H0.shape)
    return np.sqrt(abar) * H0 + np.sqrt(1.0 - abar) * eps, eps


def score_from_epsilon(
    eps_pred: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Marginal score implied by a noise prediction: ``-eps / sqrt(1 - abar_t)``."""
    abar = schedule.alpha_bar(schedule._check_step(t))
    return np.asarray(eps_pred) * (-1.0 / np.sqrt(1.0 - abar))


def reverse_generative_step(
    H_t: np.ndarray,
    eps_pred: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    rng: RngStream,
) -> np.ndarray:
    """One ancestral sampling step from ``H_t`` to ``H_{t-1}``.

    The mean removes the predicted noise; for ``t > 1`` a perturbation of
    width ``sigma_tilde(t)`` is injected, while the final step is
    deterministic.
    """
    H_t = np.asarray(H_t, dtype=np.complex128)
    t = schedule._check_step(t)
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    mean = (H_t - (1.0 - alpha) / np.sqrt(1.0 - abar) * eps_pred) / np.sqrt(alpha)
    sigma = schedule.sigma_tilde(t)
    if sigma == 0.0:
        return mean
    return mean + sigma * complex_normal(rng.generator(), H_t.shape)
