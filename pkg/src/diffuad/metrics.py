"""Evaluation metrics: Dice, AUPRC, SSIM, PSNR, l1-ratio, intensity histograms,
Kullback-Leibler divergence, and a two-sample permutation test."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import VolumeError, as_mask, as_volume

HISTOGRAM_BINS = 500
KLD_EPS = 1e-10


def dice(pred, gt) -> float:
    """2 |A n B| / (|A| + |B|); defined as 1.0 when both masks are empty."""
    a = as_mask(pred)
    b = as_mask(gt)
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb)


def auprc(scores, gt) -> float:
    """Area under the precision-recall curve by the rectangular rule.

    Accepts a single (scores, mask) pair or matching lists; voxels are pooled
    before the curve is built. Every distinct score is a threshold.
    """
    if isinstance(scores, (list, tuple)):
        s = np.concatenate([np.asarray(x, dtype=np.float64).ravel() for x in scores])
        g = np.concatenate([as_mask(m).ravel() for m in gt])
    else:
        s = np.asarray(scores, dtype=np.float64).ravel()
        g = as_mask(gt).ravel()
    if s.shape != g.shape:
        raise VolumeError("scores and ground truth differ in voxel count")
    n_pos = int(g.sum())
    if n_pos == 0:
        raise VolumeError("undefined recall: ground truth has no positives")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    g_sorted = g[order].astype(np.float64)
    tp = np.cumsum(g_sorted)
    fp = np.cumsum(1.0 - g_sorted)
    # keep only the last entry of each tied-score run
    last = np.nonzero(np.diff(s_sorted))[0]
    idx = np.concatenate([last, [s.size - 1]])
    precision = tp[idx] / (tp[idx] + fp[idx])
    recall = tp[idx] / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def _uniform_filter_2d(img, size):
    return ndimage.uniform_filter(img, size=size, mode="constant")


def ssim(a, b, window: int = 7, data_range: float = 1.0) -> float:
    """Mean local SSIM over uniform 2D windows, slice by slice.

    Uses the standard stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2 and
    restricts the average to fully valid window positions.
    """
    a = as_volume(a).astype(np.float64)
    b = as_volume(b).astype(np.float64)
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch {a.shape} vs {b.shape}")
    if window % 2 == 0 or window < 3:
        raise VolumeError("window must be odd and >= 3")
    if a.shape[1] < window or a.shape[2] < window:
        raise VolumeError("slices smaller than the SSIM window")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    half = window // 2
    vals = []
    for z in range(a.shape[0]):
        x, y = a[z], b[z]
        mu_x = _uniform_filter_2d(x, window)
        mu_y = _uniform_filter_2d(y, window)
        xx = _uniform_filter_2d(x * x, window) - mu_x * mu_x
        yy = _uniform_filter_2d(y * y, window) - mu_y * mu_y
        xy = _uniform_filter_2d(x * y, window) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        smap = num / den
        vals.append(smap[half:-half, half:-half])
    return float(np.mean(np.stack(vals)))


def psnr(a, b, data_range: float = 1.0) -> float:
    """10 log10(range^2 / MSE) in dB; +inf for identical inputs."""
    a = as_volume(a).astype(np.float64)
    b = as_volume(b).astype(np.float64)
    if a.shape != b.shape:
        raise VolumeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def l1_ratio(x0, x0_rec, annotation, brain_mask) -> float:
    """Mean |x0 - rec| on annotated voxels over the mean on healthy brain voxels."""
    a = as_volume(x0)
    r = as_volume(x0_rec)
    ann = as_mask(annotation, like=a)
    brain = as_mask(brain_mask, like=a)
    healthy = brain & ~ann
    if not ann.any():
        raise VolumeError("empty annotation")
    if not healthy.any():
        raise VolumeError("no healthy brain voxels")
    err = np.abs(a.astype(np.float64) - r.astype(np.float64))
    return float(err[ann].mean() / err[healthy].mean())


@dataclass
class Histogram:
    edges: np.ndarray  # (bins + 1,)
    densities: np.ndarray  # (bins,), integrates to 1

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    def probabilities(self) -> np.ndarray:
        return self.densities * self.bin_width


def histogram(v, mask, upper: float | None = None, bins: int = HISTOGRAM_BINS) -> Histogram:
    """Density histogram of masked intensities over [0, upper].

    Densities are raw counts divided by the total count and the bin width.
    """
    v = as_volume(v)
    m = as_mask(mask, like=v)
    if not m.any():
        raise VolumeError("empty mask")
    vals = v[m].astype(np.float64)
    if upper is None:
        upper = float(vals.max())
    if upper <= 0:
        raise VolumeError("histogram range must be positive")
    edges = np.linspace(0.0, upper, bins + 1)
    counts, _ = np.histogram(np.clip(vals, 0.0, upper), bins=edges)
    width = edges[1] - edges[0]
    densities = counts / (counts.sum() * width)
    return Histogram(edges=edges, densities=densities)


def kld(p_in: Histogram, p_rec: Histogram) -> float:
    """KL divergence between two equally binned intensity histograms.

    Computed on bin probabilities with a small epsilon inside the logs so
    empty bins stay finite; identical histograms give exactly zero.
    """
    if p_in.densities.shape != p_rec.densities.shape:
        raise VolumeError("histogram binning mismatch")
    if not np.allclose(p_in.edges, p_rec.edges):
        raise VolumeError("histogram ranges differ")
    p = p_in.probabilities()
    q = p_rec.probabilities()
    log_ratio = np.log(p + KLD_EPS) - np.log(q + KLD_EPS)
    return float(np.sum(p * log_ratio))


def permutation_test(scores_a, scores_b, rounds: int = 10000, seed: int = 0) -> float:
    """Two-sample permutation test on the difference of means.

    p is the fraction of label permutations whose absolute mean difference is
    at least as large as the observed one.
    """
    a = np.asarray(scores_a, dtype=np.float64).ravel()
    b = np.asarray(scores_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise VolumeError("permutation test needs nonempty score lists")
    if rounds < 1:
        raise VolumeError("rounds must be >= 1")
    observed = abs(a.mean() - b.mean())
    pooled = np.concatenate([a, b])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(rounds):
        perm = rng.permutation(pooled)
        diff = abs(perm[: a.size].mean() - perm[a.size:].mean())
        if diff >= observed - 1e-15:
            hits += 1
    return hits / rounds
