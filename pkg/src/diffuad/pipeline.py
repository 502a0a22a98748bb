"""Residual maps and the post-processing chain turning them into binary segmentations.

Chain: residual -> 3D median filter -> eroded-brain-mask application ->
threshold binarization -> small-component removal. Every stage can be
toggled for ablations; the binarization threshold comes from a greedy
search maximizing mean Dice on an unhealthy validation set.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .metrics import dice
from .volume import VolumeError, as_mask, as_volume


@dataclass
class PostProcConfig:
    median_enabled: bool = True
    median_kernel: int = 5
    erosion_enabled: bool = True
    erosion_iterations: int = 3
    cc_enabled: bool = True
    cc_min_size: int = 7
    threshold_count: int = 100  # grid size for the greedy search

    def validate(self):
        if self.median_kernel % 2 == 0 or self.median_kernel < 1:
            raise VolumeError(f"median kernel must be odd and positive, got {self.median_kernel}")
        if self.erosion_iterations < 0:
            raise VolumeError("erosion iterations must be >= 0")
        if self.threshold_count < 1:
            raise VolumeError("threshold grid must be nonempty")


@dataclass
class ThresholdSearchResult:
    threshold: float
    mean_dice: float
    grid: np.ndarray
    grid_scores: np.ndarray


def residual(x0: np.ndarray, x0_rec: np.ndarray) -> np.ndarray:
    """Voxelwise absolute difference between input and reconstruction."""
    a = as_volume(x0)
    b = as_volume(x0_rec)
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch {a.shape} vs {b.shape}")
    return np.abs(a - b)


def median_filter_3d(r: np.ndarray, kernel: int = 5) -> np.ndarray:
    """Cubic median filter with edge replication at the borders."""
    if kernel % 2 == 0 or kernel < 1:
        raise VolumeError(f"median kernel must be odd and positive, got {kernel}")
    return ndimage.median_filter(as_volume(r), size=kernel, mode="nearest")


_CROSS = ndimage.generate_binary_structure(3, 1)  # 6-neighborhood


def erode_mask(mask: np.ndarray, iterations: int) -> np.ndarray:
    """Iterated morphological erosion with the 6-neighborhood cross element."""
    m = as_mask(mask)
    if iterations < 0:
        raise VolumeError("iterations must be >= 0")
    if iterations == 0:
        return m.copy()
    return ndimage.binary_erosion(m, structure=_CROSS, iterations=iterations, border_value=0)


def binarize(r: np.ndarray, threshold: float) -> np.ndarray:
    """Voxel >= threshold -> 1, else 0."""
    if not np.isfinite(threshold) and threshold != np.inf:
        raise VolumeError(f"threshold must be finite or +inf, got {threshold}")
    return np.asarray(r) >= threshold


def connected_component_filter(mask: np.ndarray, min_size: int = 7, connectivity: int = 26) -> np.ndarray:
    """Drop connected components smaller than min_size voxels."""
    m = as_mask(mask)
    if connectivity == 26:
        structure = np.ones((3, 3, 3), dtype=bool)
    elif connectivity == 6:
        structure = _CROSS
    else:
        raise VolumeError(f"connectivity must be 6 or 26, got {connectivity}")
    labels, n = ndimage.label(m, structure=structure)
    if n == 0:
        return m.copy()
    counts = np.bincount(labels.ravel())
    keep = counts >= min_size
    keep[0] = False
    return keep[labels]


def preprocess_residual(r: np.ndarray, brain_mask, cfg: PostProcConfig) -> np.ndarray:
    """Median filtering and eroded-mask application (the stages before binarization)."""
    cfg.validate()
    out = as_volume(r)
    if cfg.median_enabled:
        out = median_filter_3d(out, cfg.median_kernel)
    if cfg.erosion_enabled:
        if brain_mask is None:
            raise VolumeError("erosion stage enabled but no brain mask given")
        eroded = erode_mask(brain_mask, cfg.erosion_iterations)
        out = out * eroded
    return out


def run_pipeline(x0, x0_rec, brain_mask, cfg: PostProcConfig, threshold: float) -> np.ndarray:
    """Full chain from an input/reconstruction pair to a binary anomaly mask."""
    r = preprocess_residual(residual(x0, x0_rec), brain_mask, cfg)
    pred = binarize(r, threshold)
    if cfg.cc_enabled:
        pred = connected_component_filter(pred, cfg.cc_min_size)
    return pred


def threshold_grid(processed_residuals, cfg: PostProcConfig) -> np.ndarray:
    """Evenly spaced grid between the 50th and 100th percentile of pooled residuals."""
    pooled = np.concatenate([np.asarray(r).ravel() for r in processed_residuals])
    lo = float(np.percentile(pooled, 50.0))
    hi = float(np.percentile(pooled, 100.0))
    return np.linspace(lo, hi, cfg.threshold_count)


def _predict(processed, threshold, cfg: PostProcConfig):
    pred = binarize(processed, threshold)
    if cfg.cc_enabled:
        pred = connected_component_filter(pred, cfg.cc_min_size)
    return pred


def greedy_threshold_search(residuals, gts, cfg: PostProcConfig, brain_masks=None, grid=None) -> ThresholdSearchResult:
    """Pick the grid threshold maximizing mean validation Dice (ties -> smaller).

    `residuals` are raw residual maps; the enabled pre-binarization stages are
    applied once, then every grid threshold is evaluated.
    """
    residuals = list(residuals)
    gts = list(gts)
    if not residuals or len(residuals) != len(gts):
        raise VolumeError("need matching nonempty residual/ground-truth lists")
    if brain_masks is None:
        brain_masks = [None] * len(residuals)
    processed = [
        preprocess_residual(r, m, cfg) for r, m in zip(residuals, brain_masks)
    ]
    if grid is None:
        grid = threshold_grid(processed, cfg)
    grid = np.sort(np.asarray(grid, dtype=np.float64))
    if grid.size == 0:
        raise VolumeError("empty threshold grid")

    scores = np.empty(grid.size)
    for k, theta in enumerate(grid):
        vals = [dice(_predict(p, theta, cfg), gt) for p, gt in zip(processed, gts)]
        scores[k] = float(np.mean(vals))
    best = int(np.argmax(scores))  # argmax returns the first (smallest-threshold) maximum
    return ThresholdSearchResult(
        threshold=float(grid[best]), mean_dice=float(scores[best]), grid=grid, grid_scores=scores
    )
