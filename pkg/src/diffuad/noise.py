"""Noise fields for the forward process: i.i.d. Gaussian and structured simplex noise.

The simplex kind is multi-octave lattice gradient noise, standardized per
field to zero mean and unit variance; its low-frequency base octave gives
the strong spatial correlation that plain Gaussian noise lacks.
"""

from dataclasses import dataclass

import numpy as np

NOISE_KINDS = ("gaussian", "simplex")


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class SimplexParams:
    octaves: int = 6
    persistence: float = 0.8
    frequency: float = 1.0 / 32.0  # cycles per pixel of the base octave


def derive_seed(*parts: int) -> int:
    """Stable sub-seed from an ordered tuple of integers."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


# eight lattice gradient directions
_GRADS = np.array(
    [[1, 1], [-1, 1], [1, -1], [-1, -1], [1, 0], [-1, 0], [0, 1], [0, -1]],
    dtype=np.float64,
)


def _fade(t):
    # smootherstep: zero first and second derivatives at the lattice
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _gradient_octave(xs, ys, perm):
    """One octave of 2D lattice gradient noise at coordinate grids xs, ys."""
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def corner(dx, dy):
        h = perm[(perm[(x0 + dx) & 255] + (y0 + dy)) & 255] & 7
        g = _GRADS[h]
        return g[..., 0] * (fx - dx) + g[..., 1] * (fy - dy)

    u = _fade(fx)
    v = _fade(fy)
    n00, n10 = corner(0, 0), corner(1, 0)
    n01, n11 = corner(0, 1), corner(1, 1)
    top = n00 + u * (n10 - n00)
    bot = n01 + u * (n11 - n01)
    return top + v * (bot - top)


def _raw_octave_field(dims, seed: int, params: SimplexParams) -> np.ndarray:
    h, w = dims
    rng = np.random.default_rng(seed)
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    field = np.zeros((h, w), dtype=np.float64)
    amp = 1.0
    freq = params.frequency
    for _ in range(params.octaves):
        perm = rng.permutation(256).astype(np.int64)
        perm = np.concatenate([perm, perm])
        # random phase offset decorrelates octaves from the lattice
        ox, oy = rng.uniform(0.0, 256.0, size=2)
        field += amp * _gradient_octave(jj * freq + ox, ii * freq + oy, perm)
        amp *= params.persistence
        freq *= 2.0
    return field


_CALIBRATION_PROBES = 64
_calibration_cache: dict = {}


def _ensemble_std(dims, params: SimplexParams) -> float:
    """Ensemble RMS of raw octave fields, from fixed probe seeds (cached)."""
    key = (tuple(dims), params)
    if key not in _calibration_cache:
        acc = 0.0
        for k in range(_CALIBRATION_PROBES):
            probe = _raw_octave_field(dims, derive_seed(0xCA11B, k), params)
            acc += float(np.mean(probe * probe))
        rms = float(np.sqrt(acc / _CALIBRATION_PROBES))
        if rms < 1e-12:
            raise NoiseError("degenerate simplex calibration (zero variance)")
        _calibration_cache[key] = rms
    return _calibration_cache[key]


def simplex_field(dims, seed: int, params: SimplexParams = SimplexParams()) -> np.ndarray:
    """Multi-octave gradient noise, standardized against the field ensemble.

    Scaling uses a fixed calibration over probe seeds rather than per-field
    statistics: lattice gradient noise is zero-mean by construction, and
    keeping each field's own low-frequency swing (instead of subtracting its
    spatial mean) is what makes the noise structured. Per-field
    standardization would pin every field's mean to exactly zero and thereby
    hand the denoiser a noise-free readout of the slice mean at any step.
    """
    if params.octaves < 1:
        raise NoiseError("need at least one octave")
    if not 0.0 < params.persistence:
        raise NoiseError("persistence must be positive")
    field = _raw_octave_field(dims, seed, params)
    return (field / _ensemble_std(dims, params)).astype(np.float32)


def sample_noise(dims, kind: str, seed: int, simplex_params: SimplexParams | None = None) -> np.ndarray:
    """Draw a 2D noise field of the given kind, deterministic in seed."""
    if len(dims) != 2 or any(int(d) < 1 for d in dims):
        raise NoiseError(f"dims must be a positive (H, W) pair, got {dims}")
    dims = (int(dims[0]), int(dims[1]))
    if kind == "gaussian":
        rng = np.random.default_rng(seed)
        return rng.standard_normal(dims).astype(np.float32)
    if kind == "simplex":
        return simplex_field(dims, seed, simplex_params or SimplexParams())
    raise NoiseError(f"unknown noise kind {kind!r}")


def lag1_autocorrelation(field: np.ndarray) -> float:
    """Mean lag-1 autocorrelation over both image axes."""
    f = np.asarray(field, dtype=np.float64)
    f = f - f.mean()
    denom = np.mean(f * f)
    if denom == 0:
        return 0.0
    ac_rows = np.mean(f[:, :-1] * f[:, 1:]) / denom
    ac_cols = np.mean(f[:-1, :] * f[1:, :]) / denom
    return float((ac_rows + ac_cols) / 2.0)
