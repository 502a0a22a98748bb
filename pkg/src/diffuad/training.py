"""Training loops and checkpointing for the denoising models.

Both presets share one loop: slices of healthy volumes are noised to a
uniformly sampled step and the network regresses the clean slice under an
L1 objective. The cddpm preset additionally feeds the encoder the clean
(augmented) slice; the ddpm preset ablates the context half of the
conditioning vector. The checkpoint with the best healthy-validation loss
is kept.
"""

import copy
import csv
import os
from dataclasses import dataclass

import numpy as np
import torch

from .augment import augment_all
from .config import ExperimentConfig
from .diffusion import mix_signal_noise
from .nets import ConditionedUNet, ContextEncoder, TorchDenoiser
from .noise import derive_seed, sample_noise
from .pretrain import MaskedDecoder, pretrain_encoder

PRESETS = ("ddpm", "cddpm")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    checkpoint_path: str
    best_epoch: int
    best_val_loss: float
    train_losses: list
    val_losses: list


def build_models(cfg: ExperimentConfig, preset: str):
    """Instantiate the U-Net and, for the cddpm preset, the context encoder."""
    if preset not in PRESETS:
        raise TrainingError(f"unknown preset {preset!r}")
    unet = ConditionedUNet(cfg.unet_config())
    encoder = ContextEncoder(cfg.encoder_config()) if preset == "cddpm" else None
    return unet, encoder


def save_checkpoint(path, cfg: ExperimentConfig, preset: str, unet, encoder, extra=None):
    payload = {
        "format": 1,
        "config": dict(cfg.values),
        "preset": preset,
        "unet": unet.state_dict(),
        "encoder": None if encoder is None else encoder.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild (config, preset, unet, encoder, extra) from a checkpoint file."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = ExperimentConfig(payload["config"])
    preset = payload["preset"]
    unet, encoder = build_models(cfg, preset)
    unet.load_state_dict(payload["unet"])
    if encoder is not None:
        if payload["encoder"] is None:
            raise TrainingError("checkpoint lacks encoder weights for cddpm preset")
        encoder.load_state_dict(payload["encoder"])
    return cfg, preset, unet, encoder, payload.get("extra", {})


def denoiser_from_checkpoint(path) -> TorchDenoiser:
    cfg, _, unet, encoder, _ = load_checkpoint(path)
    return TorchDenoiser(unet, encoder, max_t=cfg.getint("schedule.T"))


def _slice_pool(volumes):
    return np.concatenate([np.asarray(v, dtype=np.float32) for v in volumes], axis=0)


def _noise_batch(shape, kind, seeds, params):
    return np.stack([sample_noise(shape, kind, int(s), params) for s in seeds])


def run_pretraining(cfg: ExperimentConfig, volumes, out_dir, seed: int | None = None):
    """Masked-autoencoding pre-training; writes encoder checkpoint + loss log."""
    os.makedirs(out_dir, exist_ok=True)
    base_seed = cfg.seed if seed is None else seed
    torch.manual_seed(derive_seed(base_seed, 0x11))
    encoder = ContextEncoder(cfg.encoder_config())
    decoder = MaskedDecoder(cfg.getint("model.cond_dim"), cfg.getint("data.image_size"))
    losses = pretrain_encoder(encoder, decoder, volumes, cfg.pretrain_config(base_seed))
    if not all(np.isfinite(losses)):
        raise TrainingError("pre-training loss diverged")
    ckpt = os.path.join(out_dir, "encoder.ckpt")
    torch.save({"format": 1, "config": dict(cfg.values), "encoder": encoder.state_dict()}, ckpt)
    with open(os.path.join(out_dir, "pretrain_log.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, "%.12g" % loss])
    return ckpt, losses


def load_pretrained_encoder(cfg: ExperimentConfig, path) -> ContextEncoder:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    encoder = ContextEncoder(cfg.encoder_config())
    encoder.load_state_dict(payload["encoder"])
    return encoder


def train_model(
    cfg: ExperimentConfig,
    train_volumes,
    val_volumes,
    out_dir,
    preset: str | None = None,
    seed: int | None = None,
    encoder_ckpt=None,
) -> TrainResult:
    """Train one model and keep the best-validation checkpoint.

    Deterministic in (cfg, seed): numpy drives all data/noise sampling and
    torch is seeded before weight init.
    """
    os.makedirs(out_dir, exist_ok=True)
    preset = preset or cfg.get("model.preset")
    base_seed = cfg.seed if seed is None else seed
    if not train_volumes:
        raise TrainingError("no training volumes")
    if not val_volumes:
        raise TrainingError("no validation volumes")

    schedule = cfg.schedule()
    abar = schedule.alpha_bars
    T = schedule.T
    kind = cfg.get("noise.kind")
    simplex = cfg.simplex_params()
    batch = cfg.getint("train.batch_size")
    epochs = cfg.getint("train.epochs")
    steps_per_epoch = cfg.getint("train.steps_per_epoch")
    val_t = cfg.getint("train.val_t")
    do_augment = cfg.getbool("train.augment")

    torch.manual_seed(derive_seed(base_seed, 0x22))
    unet, encoder = build_models(cfg, preset)
    if encoder_ckpt:
        if encoder is None:
            raise TrainingError("encoder checkpoint given but preset has no encoder")
        encoder = load_pretrained_encoder(cfg, encoder_ckpt)
    params = list(unet.parameters()) + (list(encoder.parameters()) if encoder else [])
    opt = torch.optim.Adam(params, lr=cfg.getfloat("train.lr"))

    data_rng = np.random.default_rng(derive_seed(base_seed, 0x33))
    noise_rng = np.random.default_rng(derive_seed(base_seed, 0x44))

    # fixed validation corruption so per-epoch losses are comparable
    val_pool = _slice_pool(val_volumes)
    val_noise = _noise_batch(
        val_pool.shape[1:], kind,
        [derive_seed(base_seed, 0x55, i) for i in range(val_pool.shape[0])], simplex,
    )
    val_xt = mix_signal_noise(val_pool, val_t, schedule, val_noise)

    hw = val_pool.shape[1:]
    best_val = np.inf
    best_epoch = -1
    best_state = None
    train_losses, val_losses = [], []
    log_rows = []

    for epoch in range(epochs):
        if do_augment:
            pool = _slice_pool(
                [augment_all(v, derive_seed(base_seed, 0x66, epoch, i)) for i, v in enumerate(train_volumes)]
            )
        else:
            pool = _slice_pool(train_volumes)

        unet.train()
        if encoder is not None:
            encoder.train()
        epoch_losses = []
        for _ in range(steps_per_epoch):
            idx = data_rng.integers(0, pool.shape[0], size=batch)
            x0 = pool[idx]
            ts = data_rng.integers(1, T + 1, size=batch)
            eps = _noise_batch(hw, kind, noise_rng.integers(0, 2**63, size=batch), simplex)
            coef_sig = np.sqrt(abar[ts - 1]).astype(np.float32)[:, None, None]
            coef_noise = np.sqrt(1.0 - abar[ts - 1]).astype(np.float32)[:, None, None]
            xt = coef_sig * x0 + coef_noise * eps

            x0_t = torch.from_numpy(x0).unsqueeze(1)
            xt_t = torch.from_numpy(xt).unsqueeze(1)
            t_t = torch.from_numpy(ts.astype(np.int64))
            ctx = encoder(x0_t) if encoder is not None else None
            rec = unet(xt_t, t_t, ctx)
            loss = (rec - x0_t).abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingError(f"training loss diverged at epoch {epoch}")
            epoch_losses.append(value)

        val_loss = _validation_loss(unet, encoder, val_pool, val_xt, val_t, batch=64)
        train_losses.append(float(np.mean(epoch_losses)))
        val_losses.append(val_loss)
        log_rows.append([epoch, "%.12g" % train_losses[-1], "%.12g" % val_loss])
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = (
                copy.deepcopy(unet.state_dict()),
                None if encoder is None else copy.deepcopy(encoder.state_dict()),
            )

    unet.load_state_dict(best_state[0])
    if encoder is not None:
        encoder.load_state_dict(best_state[1])
    ckpt = os.path.join(out_dir, "model.ckpt")
    save_checkpoint(
        ckpt, cfg, preset, unet, encoder,
        extra={"best_epoch": best_epoch, "best_val_loss": best_val, "seed": base_seed},
    )
    with open(os.path.join(out_dir, "train_log.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        writer.writerows(log_rows)
    return TrainResult(
        checkpoint_path=ckpt,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        train_losses=train_losses,
        val_losses=val_losses,
    )


@torch.no_grad()
def _validation_loss(unet, encoder, x0_pool, xt_pool, val_t, batch=64):
    unet.eval()
    if encoder is not None:
        encoder.eval()
    total = 0.0
    count = 0
    for start in range(0, x0_pool.shape[0], batch):
        x0 = torch.from_numpy(x0_pool[start:start + batch]).unsqueeze(1)
        xt = torch.from_numpy(xt_pool[start:start + batch]).unsqueeze(1)
        ctx = encoder(x0) if encoder is not None else None
        rec = unet(xt, val_t, ctx)
        total += float((rec - x0).abs().sum())
        count += x0.numel()
    return total / count
