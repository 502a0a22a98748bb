"""Volume and mask handling: normalization, slicing, contrast simulation, file I/O.

A volume is a 3D numpy float32 array of shape (D, H, W) with finite values;
normalized volumes live in [0, 1]. Binary masks share the (D, H, W) layout
and are boolean arrays in memory.
"""

import struct
from dataclasses import dataclass

import numpy as np

CDV_MAGIC = b"CDV1"


class VolumeError(ValueError):
    """Raised for malformed volumes, masks, or volume files."""


def as_volume(data) -> np.ndarray:
    """Coerce to a (D, H, W) float32 array and check finiteness."""
    v = np.asarray(data, dtype=np.float32)
    if v.ndim != 3:
        raise VolumeError(f"volume must be 3D, got shape {v.shape}")
    if v.size == 0:
        raise VolumeError("volume has zero voxels")
    if not np.all(np.isfinite(v)):
        raise VolumeError("volume contains non-finite voxels")
    return v


def as_mask(data, like: np.ndarray | None = None) -> np.ndarray:
    """Coerce to a boolean mask, optionally checking dims against a volume."""
    m = np.asarray(data)
    if m.ndim != 3:
        raise VolumeError(f"mask must be 3D, got shape {m.shape}")
    if m.dtype != np.bool_:
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0, 1))):
            raise VolumeError("mask values must be in {0, 1}")
        m = m.astype(bool)
    if like is not None and m.shape != like.shape:
        raise VolumeError(f"mask shape {m.shape} != volume shape {like.shape}")
    return m


@dataclass
class Slice:
    """A single 2D plane of a volume along the leading (D) axis."""

    index: int
    pixels: np.ndarray  # (H, W) float32


def normalize_volume(v: np.ndarray, percentile: float = 0.98) -> np.ndarray:
    """Scale by the given intensity percentile and clamp to [0, 1].

    `percentile` is a fraction in (0, 1]. Deterministic; raises on an
    all-zero volume where no scale can be derived.
    """
    v = as_volume(v)
    if not 0.0 < percentile <= 1.0:
        raise VolumeError(f"percentile must be in (0, 1], got {percentile}")
    if float(np.max(np.abs(v))) == 0.0:
        raise VolumeError("empty volume")
    # order-statistic percentile: the reference is an actual sample value,
    # which makes the operation exactly idempotent despite the clamp
    ref = float(np.percentile(v, 100.0 * percentile, method="lower"))
    if ref <= 0.0:
        raise VolumeError(f"percentile value {ref} is not positive")
    return np.clip(v / ref, 0.0, 1.0).astype(np.float32)


def contrast_transform(v: np.ndarray, cl: float) -> np.ndarray:
    """Raise normalized intensities to the power `cl` (simulated contrast shift)."""
    v = as_volume(v)
    if cl <= 0:
        raise VolumeError(f"contrast level must be positive, got {cl}")
    if float(v.min()) < -1e-6 or float(v.max()) > 1.0 + 1e-6:
        raise VolumeError("contrast_transform expects a volume normalized to [0, 1]")
    return np.power(np.clip(v, 0.0, 1.0), cl, dtype=np.float32)


def extract_slices(v: np.ndarray) -> list[Slice]:
    """Split a volume into its D slices, ordered by index."""
    v = as_volume(v)
    return [Slice(index=i, pixels=v[i].copy()) for i in range(v.shape[0])]


def assemble_volume(slices) -> np.ndarray:
    """Reassemble slices (any order, keyed by Slice.index) into a volume."""
    slices = list(slices)
    if not slices:
        raise VolumeError("no slices to assemble")
    depth = max(s.index for s in slices) + 1
    by_index = {}
    for s in slices:
        if s.index < 0:
            raise VolumeError(f"negative slice index {s.index}")
        if s.index in by_index:
            raise VolumeError(f"duplicate slice index {s.index}")
        by_index[s.index] = np.asarray(s.pixels, dtype=np.float32)
    missing = [i for i in range(depth) if i not in by_index]
    if missing:
        raise VolumeError(f"missing slice indices {missing}")
    shapes = {by_index[i].shape for i in range(depth)}
    if len(shapes) != 1:
        raise VolumeError(f"inconsistent slice shapes {sorted(shapes)}")
    return np.stack([by_index[i] for i in range(depth)], axis=0)


def write_cdv(path, v: np.ndarray) -> None:
    """Write a volume in the CDV1 container.

    Layout: magic "CDV1", three little-endian uint32 dims (D, H, W), then
    D*H*W little-endian float32 voxels in row-major (W fastest) order.
    """
    v = as_volume(v)
    d, h, w = v.shape
    with open(path, "wb") as f:
        f.write(CDV_MAGIC)
        f.write(struct.pack("<III", d, h, w))
        f.write(v.astype("<f4").tobytes(order="C"))


def read_cdv(path) -> np.ndarray:
    """Read a CDV1 volume file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CDV_MAGIC:
            raise VolumeError(f"{path}: bad magic {magic!r}")
        d, h, w = struct.unpack("<III", f.read(12))
        raw = f.read(4 * d * h * w)
    if len(raw) != 4 * d * h * w:
        raise VolumeError(f"{path}: truncated voxel data")
    v = np.frombuffer(raw, dtype="<f4").reshape(d, h, w).copy()
    return as_volume(v)


def write_mask_cdv(path, mask: np.ndarray) -> None:
    """Write a binary mask in the CDV1 container with values in {0.0, 1.0}."""
    write_cdv(path, as_mask(mask).astype(np.float32))


def read_mask_cdv(path) -> np.ndarray:
    """Read a CDV1 file holding a binary mask."""
    return as_mask(read_cdv(path))


def write_pgm(path, pixels: np.ndarray) -> None:
    """Export one slice as binary 8-bit grayscale PGM (P5), mapping [0,1] to [0,255]."""
    p = np.asarray(pixels, dtype=np.float32)
    if p.ndim != 2:
        raise VolumeError(f"PGM export expects a 2D slice, got shape {p.shape}")
    img = np.clip(np.round(p * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes(order="C"))
