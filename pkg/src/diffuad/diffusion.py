"""Forward diffusion and single-step test-time reconstruction with noise-level ensembling.

The model contract used here is a thin protocol: an object exposing
``encode_batch(x0) -> context or None`` and
``denoise_batch(x_t, t, context) -> x0_rec`` on (B, H, W) float arrays.
"""

from dataclasses import dataclass

import numpy as np

from .noise import SimplexParams, derive_seed, sample_noise
from .schedule import NoiseSchedule, ScheduleError, alpha_bar
from .volume import VolumeError, as_volume


@dataclass
class DiffusedSample:
    x_t: np.ndarray
    t: int
    noise: np.ndarray
    x0_ref: np.ndarray


@dataclass
class ReconstructionResult:
    x0_rec: np.ndarray
    t_list: tuple
    per_level: list | None = None  # per-noise-level volumes, kept on request


def mix_signal_noise(x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise (t = 0 returns x0)."""
    abar = alpha_bar(schedule, t)
    return (np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise).astype(np.float32)


def forward_diffuse(x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> DiffusedSample:
    """Diffuse a clean slice to step t with the provided noise field."""
    x0 = np.asarray(x0, dtype=np.float32)
    noise = np.asarray(noise, dtype=np.float32)
    if x0.shape != noise.shape:
        raise VolumeError(f"noise shape {noise.shape} != slice shape {x0.shape}")
    x_t = mix_signal_noise(x0, t, schedule, noise)
    return DiffusedSample(x_t=x_t, t=t, noise=noise, x0_ref=x0)


def train_step_loss(x0, x0_rec) -> float:
    """Mean absolute error over all pixels of a batch."""
    a = np.asarray(x0, dtype=np.float64)
    b = np.asarray(x0_rec, dtype=np.float64)
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def estimate_x0(model, x_t: np.ndarray, t: int, c) -> np.ndarray:
    """One deterministic denoiser pass estimating the clean slice from x_t."""
    if not 1 <= t:
        raise ScheduleError(f"test-time step must be >= 1, got {t}")
    x = np.asarray(x_t, dtype=np.float32)[None]
    ctx = None if c is None else np.asarray(c, dtype=np.float32)[None]
    return model.denoise_batch(x, t, ctx)[0]


def ensemble_reconstruct(
    model,
    x0: np.ndarray,
    t_list,
    schedule: NoiseSchedule,
    seed: int,
    noise_kind: str = "simplex",
    simplex_params: SimplexParams | None = None,
    keep_levels: bool = False,
) -> ReconstructionResult:
    """Reconstruct a volume slice-wise at each noise level and average.

    Noise fields are seeded per (seed, slice, level) so single-level runs and
    the ensemble see identical corruption at matching levels.
    """
    x0 = as_volume(x0)
    t_list = tuple(int(t) for t in t_list)
    if not t_list:
        raise ScheduleError("t_list must be nonempty")
    for t in t_list:
        if not 1 <= t <= schedule.T:
            raise ScheduleError(f"t_test {t} outside [1, {schedule.T}]")

    d, h, w = x0.shape
    context = model.encode_batch(x0)
    levels = []
    for t in t_list:
        noise = np.stack(
            [sample_noise((h, w), noise_kind, derive_seed(seed, i, t), simplex_params) for i in range(d)]
        )
        x_t = mix_signal_noise(x0, t, schedule, noise)
        levels.append(model.denoise_batch(x_t, t, context).astype(np.float32))
    rec = np.mean(np.stack(levels), axis=0).astype(np.float32)
    return ReconstructionResult(
        x0_rec=rec, t_list=t_list, per_level=levels if keep_levels else None
    )
