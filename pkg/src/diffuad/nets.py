"""Denoising U-Net with FiLM conditioning and the context encoder.

The conditioning pathway follows a concat-then-project design: the dense
context vector of the clean input slice is concatenated with a projected
sinusoidal time embedding; a per-level MLP maps the joint vector to a
per-channel scale and shift applied inside every residual block of that
level as f * (gamma + 1) + beta. Projection heads are zero-initialized so
modulation starts as the identity.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class UNetConfig:
    level_channels: tuple = (32, 64, 64)
    cond_dim: int = 32
    groupnorm_groups: int = 8
    in_channels: int = 1

    def validate(self):
        if len(self.level_channels) < 2:
            raise ValueError("need at least 2 U-Net levels")
        if any(c < 1 for c in self.level_channels):
            raise ValueError("channel counts must be positive")


@dataclass
class EncoderConfig:
    widths: tuple = (16, 32, 64, 64)
    cond_dim: int = 32
    groupnorm_groups: int = 8
    in_channels: int = 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Interleaved sin/cos embedding over geometric frequencies, entries in [-1, 1]."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    device = t.device
    exponent = torch.arange(half, dtype=torch.float64, device=device)
    freqs = torch.exp(-math.log(10000.0) * exponent / max(half - 1, 1))
    angles = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    return emb.to(t.dtype if t.is_floating_point() else torch.float32)


def film_transform(features: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-channel affine f * (gamma + 1) + beta, broadcast over spatial dims."""
    if features.shape[1] != gamma.shape[-1] or features.shape[1] != beta.shape[-1]:
        raise ValueError(
            f"channel mismatch: features {features.shape[1]}, gamma {gamma.shape[-1]}, beta {beta.shape[-1]}"
        )
    g = gamma[:, :, None, None]
    b = beta[:, :, None, None]
    return features * (g + 1.0) + b


class FilmProjection(nn.Module):
    """Per-level MLP from the joint conditioning vector to (gamma, beta)."""

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.net = nn.Sequential(
            nn.Linear(2 * cond_dim, 2 * cond_dim),
            nn.SiLU(),
            nn.Linear(2 * cond_dim, 2 * channels),
        )
        # identity modulation at init
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, cond: torch.Tensor):
        out = self.net(cond)
        return out[:, : self.channels], out[:, self.channels:]


class TimeConditioning(nn.Module):
    """Sinusoidal embedding followed by an MLP to the conditioning dimension."""

    def __init__(self, cond_dim: int):
        super().__init__()
        self.cond_dim = cond_dim
        self.net = nn.Sequential(
            nn.Linear(cond_dim, cond_dim),
            nn.SiLU(),
            nn.Linear(cond_dim, cond_dim),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(t, self.cond_dim).to(self.net[0].weight.dtype)
        return self.net(emb)


def build_condition(context: torch.Tensor, time_vec: torch.Tensor) -> torch.Tensor:
    """Concatenate [context ; time] into the joint conditioning vector."""
    if context.shape != time_vec.shape:
        raise ValueError(f"context {tuple(context.shape)} and time {tuple(time_vec.shape)} differ")
    return torch.cat([context, time_vec], dim=1)


def _norm(groups: int, channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(groups, channels), channels)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with group norm and SiLU; FiLM after the first conv."""

    def __init__(self, cin: int, cout: int, groups: int):
        super().__init__()
        self.norm1 = _norm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm2 = _norm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, gamma=None, beta=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if gamma is not None:
            h = film_transform(h, gamma, beta)
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionedUNet(nn.Module):
    """Encoder-decoder denoiser predicting the clean slice from a noised one.

    `context=None` ablates the image-context half of the conditioning vector
    (zeros), keeping time conditioning active; `apply_film=False` bypasses
    modulation entirely, yielding the bare convolutional U-Net.
    """

    def __init__(self, config: UNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        ch = list(config.level_channels)
        g = config.groupnorm_groups
        n = len(ch)

        self.time_mlp = TimeConditioning(config.cond_dim)
        self.film = nn.ModuleList([FilmProjection(config.cond_dim, c) for c in ch])

        self.conv_in = nn.Conv2d(config.in_channels, ch[0], 3, padding=1)
        self.down_blocks = nn.ModuleList(
            [ResidualBlock(ch[i], ch[i], g) for i in range(n)]
        )
        self.downs = nn.ModuleList(
            [nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1) for i in range(n - 1)]
        )
        self.up_convs = nn.ModuleList(
            [nn.Conv2d(ch[i + 1], ch[i], 3, padding=1) for i in range(n - 1)]
        )
        self.up_blocks = nn.ModuleList(
            [ResidualBlock(2 * ch[i], ch[i], g) for i in range(n - 1)]
        )
        self.out_norm = _norm(g, ch[0])
        self.out_conv = nn.Conv2d(ch[0], config.in_channels, 3, padding=1)

    def conditioning_parameters(self):
        """Parameters added by the conditioning pathway (time MLP + FiLM heads)."""
        yield from self.time_mlp.parameters()
        yield from self.film.parameters()

    def forward(self, x, t, context=None, apply_film=True):
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(x.shape)}")
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long, device=x.device)
        if apply_film:
            time_vec = self.time_mlp(t)
            if context is None:
                context = torch.zeros_like(time_vec)
            cond = build_condition(context, time_vec)
            films = [proj(cond) for proj in self.film]
        else:
            films = [(None, None)] * len(self.film)

        n = len(self.config.level_channels)
        h = self.conv_in(x)
        skips = []
        for i in range(n):
            h = self.down_blocks[i](h, *films[i])
            if i < n - 1:
                skips.append(h)
                h = self.downs[i](h)
        for i in range(n - 2, -1, -1):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.up_convs[i](h)
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), *films[i])
        return self.out_conv(F.silu(self.out_norm(h)))


class ContextEncoder(nn.Module):
    """Strided conv backbone pooled to a dense context vector of length cond_dim."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        layers = []
        cin = config.in_channels
        for width in config.widths:
            layers += [
                nn.Conv2d(cin, width, 3, stride=2, padding=1),
                _norm(config.groupnorm_groups, width),
                nn.SiLU(),
            ]
            cin = width
        self.backbone = nn.Sequential(*layers)
        self.head = nn.Linear(config.widths[-1], config.cond_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.backbone(x)
        h = h.mean(dim=(2, 3))
        return self.head(h)


class TorchDenoiser:
    """Numpy-facing inference wrapper around a trained U-Net (+ optional encoder)."""

    def __init__(self, unet: ConditionedUNet, encoder: ContextEncoder | None, max_t: int | None = None):
        self.unet = unet
        self.encoder = encoder
        self.max_t = max_t
        self.unet.eval()
        if self.encoder is not None:
            self.encoder.eval()

    @torch.no_grad()
    def encode_batch(self, x0: np.ndarray):
        if self.encoder is None:
            return None
        x = torch.from_numpy(np.ascontiguousarray(x0, dtype=np.float32)).unsqueeze(1)
        return self.encoder(x).numpy()

    @torch.no_grad()
    def denoise_batch(self, x_t: np.ndarray, t: int, context) -> np.ndarray:
        if self.max_t is not None and not 1 <= int(t) <= self.max_t:
            raise ValueError(f"t={t} outside [1, {self.max_t}]")
        x = torch.from_numpy(np.ascontiguousarray(x_t, dtype=np.float32)).unsqueeze(1)
        ctx = None if context is None else torch.from_numpy(np.ascontiguousarray(context, dtype=np.float32))
        out = self.unet(x, int(t), ctx)
        return out.squeeze(1).numpy()
