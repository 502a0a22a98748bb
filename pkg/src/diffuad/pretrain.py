"""Masked-autoencoding pre-training for the context encoder.

Random patches of healthy slices are zero-filled and the encoder + a small
transposed-conv decoder are trained to reconstruct them; the loss counts
masked pixels only. The decoder is discarded afterwards.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .nets import ContextEncoder
from .noise import derive_seed


@dataclass
class MaskPattern:
    patch_size: int
    grid: tuple  # (rows, cols) of patches
    masked: np.ndarray  # bool (rows, cols)
    ratio: float

    def pixel_mask(self) -> np.ndarray:
        """Expand patch flags to a boolean pixel mask."""
        return np.kron(self.masked, np.ones((self.patch_size, self.patch_size), dtype=bool))


@dataclass
class PretrainConfig:
    epochs: int = 8
    steps_per_epoch: int = 25
    lr: float = 1e-3
    batch_size: int = 16
    patch_size: int = 8
    ratio: float = 0.65
    seed: int = 0


def sample_mask(grid, ratio: float, seed: int, patch_size: int = 8) -> MaskPattern:
    """Mask a uniformly random subset of floor(ratio * N) patches."""
    rows, cols = int(grid[0]), int(grid[1])
    if rows < 1 or cols < 1:
        raise ValueError("patch grid must be nonempty")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0, 1), got {ratio}")
    n = rows * cols
    k = int(np.floor(ratio * n))
    rng = np.random.default_rng(seed)
    flat = np.zeros(n, dtype=bool)
    flat[rng.choice(n, size=k, replace=False)] = True
    return MaskPattern(patch_size=patch_size, grid=(rows, cols), masked=flat.reshape(rows, cols), ratio=ratio)


class MaskedDecoder(nn.Module):
    """Two transposed-conv stages from the pooled context vector back to a slice."""

    def __init__(self, cond_dim: int, image_size: int, channels=(32, 16)):
        super().__init__()
        if image_size % 4 != 0:
            raise ValueError("image size must be divisible by 4")
        self.base = image_size // 4
        self.c0 = channels[0]
        self.fc = nn.Linear(cond_dim, self.c0 * self.base * self.base)
        self.up1 = nn.ConvTranspose2d(channels[0], channels[1], 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(channels[1], 1, 4, stride=2, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc(z).view(-1, self.c0, self.base, self.base)
        h = torch.nn.functional.silu(self.up1(h))
        return self.up2(h)


def masked_reconstruction_loss(pred: torch.Tensor, target: torch.Tensor, pixel_mask: torch.Tensor):
    """Mean absolute error restricted to masked pixels (zero when none are masked)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    n = pixel_mask.sum()
    if n == 0:
        return pred.sum() * 0.0
    diff = (pred - target).abs() * pixel_mask
    return diff.sum() / n


def pretrain_encoder(encoder: ContextEncoder, decoder: MaskedDecoder, volumes, cfg: PretrainConfig):
    """Train encoder + decoder on masked healthy slices; returns per-step losses.

    `volumes` is a list of (D, H, W) arrays from the healthy training split.
    The caller keeps the encoder; the decoder is only a training scaffold.
    """
    if not volumes:
        raise ValueError("empty pre-training dataset")
    slices = np.concatenate([np.asarray(v, dtype=np.float32) for v in volumes], axis=0)
    h, w = slices.shape[1:]
    if h % cfg.patch_size or w % cfg.patch_size:
        raise ValueError("slice dims must be divisible by the patch size")
    grid = (h // cfg.patch_size, w // cfg.patch_size)

    torch.manual_seed(derive_seed(cfg.seed, 0x5E1))
    rng = np.random.default_rng(derive_seed(cfg.seed, 0xDA7A))
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()), lr=cfg.lr
    )
    encoder.train()
    decoder.train()
    losses = []
    step = 0
    for _ in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            idx = rng.integers(0, slices.shape[0], size=cfg.batch_size)
            batch = slices[idx]
            masks = np.stack(
                [
                    sample_mask(grid, cfg.ratio, derive_seed(cfg.seed, step, i), cfg.patch_size).pixel_mask()
                    for i in range(cfg.batch_size)
                ]
            )
            target = torch.from_numpy(batch).unsqueeze(1)
            pixel_mask = torch.from_numpy(masks).unsqueeze(1)
            inp = target * (~pixel_mask)
            z = encoder(inp)
            pred = decoder(z)
            loss = masked_reconstruction_loss(pred, target, pixel_mask)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            step += 1
    encoder.eval()
    return losses
