"""Intensity augmentations for training volumes: blur, bias field, gamma, ghosting.

Each corruption fires with a configured probability and is otherwise the
identity; all randomness comes from the seed. Outputs stay clamped in [0, 1].
"""

import numpy as np
from scipy import ndimage

from .volume import VolumeError, as_volume

AUGMENT_KINDS = ("blur", "bias", "gamma", "ghosting")

# per-kind application probabilities used during training
DEFAULT_PROBS = {"blur": 0.25, "bias": 0.25, "gamma": 0.5, "ghosting": 0.5}


def _blur(v, rng):
    sigma = rng.uniform(0.5, 1.5)
    return ndimage.gaussian_filter(v, sigma=sigma)


def _bias(v, rng):
    # multiplicative low-order polynomial field, scaled to +/-20%
    d, h, w = v.shape
    zz, yy, xx = np.meshgrid(
        np.linspace(-1, 1, d), np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij"
    )
    coeffs = rng.uniform(-1, 1, size=9)
    field = (
        coeffs[0] * zz + coeffs[1] * yy + coeffs[2] * xx
        + coeffs[3] * zz * yy + coeffs[4] * yy * xx + coeffs[5] * zz * xx
        + coeffs[6] * zz ** 2 + coeffs[7] * yy ** 2 + coeffs[8] * xx ** 2
    )
    peak = np.max(np.abs(field))
    if peak > 0:
        field = field / peak
    return v * (1.0 + 0.2 * field)


def _gamma(v, rng):
    exponent = rng.uniform(0.7, 1.5)
    return np.power(np.clip(v, 0.0, 1.0), exponent)


def _ghosting(v, rng):
    axis = int(rng.integers(0, 3))
    size = v.shape[axis]
    shift = int(rng.integers(1, max(2, size // 2)))
    return v + 0.2 * np.roll(v, shift, axis=axis)


_KERNELS = {"blur": _blur, "bias": _bias, "gamma": _gamma, "ghosting": _ghosting}


def augment(v: np.ndarray, kind: str, probability: float, seed: int) -> np.ndarray:
    """Apply one named corruption with the given probability, else identity."""
    v = as_volume(v)
    if kind not in _KERNELS:
        raise VolumeError(f"unknown augmentation kind {kind!r}")
    if not 0.0 <= probability <= 1.0:
        raise VolumeError(f"probability must be in [0, 1], got {probability}")
    rng = np.random.default_rng(seed)
    if rng.uniform() >= probability:
        return v.copy()
    out = _KERNELS[kind](v, rng)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_all(v: np.ndarray, seed: int, probs=None) -> np.ndarray:
    """Chain all four corruptions with their per-kind probabilities."""
    probs = dict(DEFAULT_PROBS if probs is None else probs)
    out = v
    for i, kind in enumerate(AUGMENT_KINDS):
        sub = np.random.SeedSequence([seed, i]).generate_state(1)[0]
        out = augment(out, kind, probs[kind], int(sub))
    return out
