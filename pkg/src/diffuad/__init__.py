"""diffuad: context-conditioned diffusion models for unsupervised anomaly
detection on volumetric images, with post-processing and evaluation."""

__version__ = "0.1.0"

from .schedule import NoiseSchedule, alpha_bar, linear_schedule, posterior_variance
from .volume import (
    Slice,
    assemble_volume,
    contrast_transform,
    extract_slices,
    normalize_volume,
    read_cdv,
    write_cdv,
)

__all__ = [
    "NoiseSchedule",
    "Slice",
    "alpha_bar",
    "assemble_volume",
    "contrast_transform",
    "extract_slices",
    "linear_schedule",
    "normalize_volume",
    "posterior_variance",
    "read_cdv",
    "write_cdv",
    "__version__",
]
