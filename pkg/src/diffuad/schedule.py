"""Diffusion noise schedules: beta sequence, signal-retention table, posterior variances."""

from dataclasses import dataclass, field

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed schedule over T steps.

    betas[k] is the step-(k+1) variance increment; alpha_bars[k] is the
    cumulative product of (1 - beta) up to step k+1. Posterior variances
    (1 - abar_{t-1}) / (1 - abar_t) * beta_t are defined for t >= 2.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    posterior_variances: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a nonempty 1D sequence")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ScheduleError("betas must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", betas)
        abar = np.cumprod(1.0 - betas)
        if np.any(np.diff(abar) >= 0.0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        object.__setattr__(self, "alpha_bars", abar)
        # index k corresponds to t = k + 2
        post = (1.0 - abar[:-1]) / (1.0 - abar[1:]) * betas[1:]
        object.__setattr__(self, "posterior_variances", post)

    @property
    def T(self) -> int:
        return int(self.betas.size)


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated betas from beta_start to beta_end over T steps."""
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(betas=betas)


def alpha_bar(s: NoiseSchedule, t: int) -> float:
    """Signal-retention coefficient at step t; alpha_bar(0) is 1 by convention."""
    if not 0 <= t <= s.T:
        raise ScheduleError(f"t must be in [0, {s.T}], got {t}")
    if t == 0:
        return 1.0
    return float(s.alpha_bars[t - 1])


def posterior_variance(s: NoiseSchedule, t: int) -> float:
    """Fixed backward-process variance at step t (defined for 2 <= t <= T)."""
    if not 2 <= t <= s.T:
        raise ScheduleError(f"t must be in [2, {s.T}], got {t}")
    return float(s.posterior_variances[t - 2])
