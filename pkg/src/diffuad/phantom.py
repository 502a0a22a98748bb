"""Synthetic phantom volumes: textured ellipsoidal "brains" with optional blob anomalies.

Stand-in data for desk-scale experiments: each phantom is an axis-aligned
ellipsoid filled with a per-volume base intensity plus smooth value-noise
texture, on a zero background. Anomalies are hyper- or hypo-intense
ellipsoidal blobs injected strictly inside the brain support.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .volume import VolumeError, as_mask, as_volume


@dataclass
class PhantomSpec:
    """Parameters for phantom generation, fully determined by `seed`."""

    image_size: int = 32
    depth: int = 8
    # in-plane semi-axes as fractions of image_size/2, depth semi-axis of depth/2
    axis_frac_min: float = 0.60
    axis_frac_max: float = 0.72
    depth_frac_min: float = 0.85
    depth_frac_max: float = 0.95
    # smooth value-noise texture
    texture_amplitude: float = 0.08
    texture_wavelength: float = 8.0
    base_intensity_min: float = 0.40
    base_intensity_max: float = 0.60
    # dimmer inner ellipsoid ("ventricle"): its size and intensity ratio vary
    # per volume, so the histogram shape is a per-volume property
    ventricle_frac_min: float = 0.25
    ventricle_frac_max: float = 0.45
    ventricle_factor_min: float = 0.55
    ventricle_factor_max: float = 0.80
    # anomalies
    anomaly_count: int = 2
    anomaly_radius_min: float = 2.0
    anomaly_radius_max: float = 3.2
    anomaly_depth_radius_max: float = 2.0
    anomaly_offset: float = 0.40
    seed: int = 0

    def validate(self):
        if self.image_size < 4 or self.depth < 4:
            raise VolumeError("phantom dims too small")
        if not 0 < self.axis_frac_min <= self.axis_frac_max <= 1:
            raise VolumeError("bad in-plane axis fractions")
        if not 0 < self.depth_frac_min <= self.depth_frac_max <= 1:
            raise VolumeError("bad depth axis fractions")
        if self.anomaly_radius_min > self.anomaly_radius_max:
            raise VolumeError("bad anomaly radius range")
        min_axis = self.axis_frac_min * self.image_size / 2.0
        if self.anomaly_radius_max >= min_axis:
            raise VolumeError("anomaly radius must be smaller than the smallest ellipse axis")
        if self.anomaly_count < 0:
            raise VolumeError("anomaly count must be nonnegative")


def smooth_noise(shape, wavelength: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth value noise: a coarse Gaussian grid upsampled by cubic spline.

    Returned field is standardized to zero mean, unit variance.
    """
    coarse_shape = tuple(max(2, int(np.ceil(s / wavelength)) + 1) for s in shape)
    coarse = rng.standard_normal(coarse_shape)
    factors = [s / cs for s, cs in zip(shape, coarse_shape)]
    field = ndimage.zoom(coarse, factors, order=3, grid_mode=True, mode="nearest")
    field = field[tuple(slice(0, s) for s in shape)]
    field = field - field.mean()
    std = field.std()
    if std > 0:
        field = field / std
    return field.astype(np.float32)


def _ellipsoid_mask(shape, center, semi_axes) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = np.zeros(shape, dtype=np.float64)
    for g, c, ax in zip(grids, center, semi_axes):
        acc = acc + ((g - c) / ax) ** 2
    return acc <= 1.0


def generate_phantom(spec: PhantomSpec):
    """Build a healthy phantom. Returns (volume, brain_mask).

    Deterministic in spec.seed; background is exactly zero.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, s = spec.depth, spec.image_size
    shape = (d, s, s)

    a = rng.uniform(spec.axis_frac_min, spec.axis_frac_max) * s / 2.0
    b = rng.uniform(spec.axis_frac_min, spec.axis_frac_max) * s / 2.0
    c = rng.uniform(spec.depth_frac_min, spec.depth_frac_max) * d / 2.0
    if min(a, b, c) <= 1.0:
        raise VolumeError(f"degenerate ellipsoid axes ({c:.2f}, {a:.2f}, {b:.2f})")
    jitter = rng.uniform(-0.03, 0.03, size=3)
    center = (
        (d - 1) / 2.0 + jitter[0] * d,
        (s - 1) / 2.0 + jitter[1] * s,
        (s - 1) / 2.0 + jitter[2] * s,
    )
    mask = _ellipsoid_mask(shape, center, (c, a, b))

    base = rng.uniform(spec.base_intensity_min, spec.base_intensity_max)
    texture = smooth_noise(shape, spec.texture_wavelength, rng)
    tissue = np.full(shape, base, dtype=np.float64)
    if spec.ventricle_frac_max > 0:
        vfrac = rng.uniform(spec.ventricle_frac_min, spec.ventricle_frac_max)
        vfactor = rng.uniform(spec.ventricle_factor_min, spec.ventricle_factor_max)
        voff = rng.uniform(-0.08, 0.08, size=2)
        vcenter = (center[0], center[1] + voff[0] * s, center[2] + voff[1] * s)
        ventricle = _ellipsoid_mask(shape, vcenter, (c * vfrac, a * vfrac, b * vfrac))
        tissue[ventricle] *= vfactor
    vol = (tissue + spec.texture_amplitude * texture) * mask
    vol = np.clip(vol, 0.0, 1.0).astype(np.float32)
    # keep tissue strictly positive so the support stays recoverable from the volume
    vol[mask] = np.maximum(vol[mask], 0.01)
    return vol, mask


def _blob_structure(rz: float, rxy: float) -> np.ndarray:
    nz, nxy = int(np.floor(rz)), int(np.floor(rxy))
    shape = (2 * nz + 1, 2 * nxy + 1, 2 * nxy + 1)
    return _ellipsoid_mask(shape, (nz, nxy, nxy), (rz, rxy, rxy))


def inject_anomaly(v: np.ndarray, spec: PhantomSpec, brain_mask=None):
    """Add anomalous blobs to a healthy phantom. Returns (volume, annotation).

    Blobs are ellipsoids of in-plane radius drawn from the spec's range
    (depth radius capped by anomaly_depth_radius_max), shifted in intensity
    by spec.anomaly_offset, and placed so every blob voxel lies inside the
    brain mask. The annotation marks exactly the voxels whose value was
    modified before clamping.
    """
    spec.validate()
    v = as_volume(v)
    mask = as_mask(brain_mask, like=v) if brain_mask is not None else v > 0
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x0A]))

    out = v.copy()
    annotation = np.zeros(v.shape, dtype=bool)
    if spec.anomaly_count == 0 or spec.anomaly_offset == 0.0:
        return out, annotation

    for _ in range(spec.anomaly_count):
        rxy = rng.uniform(spec.anomaly_radius_min, spec.anomaly_radius_max)
        rz = min(rxy, spec.anomaly_depth_radius_max)
        struct = _blob_structure(rz, rxy)
        feasible = ndimage.binary_erosion(mask, structure=struct, border_value=0)
        feasible &= ~annotation  # keep blobs disjoint
        idx = np.flatnonzero(feasible)
        if idx.size == 0:
            raise VolumeError(
                f"anomaly of radius {rxy:.2f} cannot fit inside the brain mask"
            )
        center = np.unravel_index(rng.choice(idx), v.shape)
        blob = _ellipsoid_mask(v.shape, center, (rz, rxy, rxy))
        out[blob] += spec.anomaly_offset
        annotation |= blob

    np.clip(out, 0.0, 1.0, out=out)
    return out, annotation


def healthy_spec(spec: PhantomSpec, seed: int) -> PhantomSpec:
    """Copy of `spec` with a new seed and no anomalies."""
    return replace(spec, seed=seed, anomaly_count=0)
