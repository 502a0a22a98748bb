"""Run orchestration: reconstruction, evaluation, and the noise-level sweep.

Every command echoes its effective config and a small manifest into its
output directory; metric CSVs are formatted deterministically so a repeated
run with the same seed is byte-identical.
"""

import csv
import math
import os
import time
import zlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig
from .dataset import Dataset
from .diffusion import ensemble_reconstruct
from .metrics import auprc, dice, histogram, kld, l1_ratio, psnr, ssim
from .pipeline import (
    binarize,
    connected_component_filter,
    greedy_threshold_search,
    preprocess_residual,
    residual,
    run_pipeline,
)
from .training import denoiser_from_checkpoint, load_checkpoint
from .volume import contrast_transform, read_cdv, write_cdv
from .noise import derive_seed

RECON_SPLITS = ("unhealthy_val", "unhealthy_test", "healthy_test")

# checkpoint keys that must agree with the active config at inference time
_MODEL_KEYS = (
    "model.level_channels",
    "model.cond_dim",
    "model.groupnorm_groups",
    "encoder.widths",
    "schedule.T",
    "schedule.beta_start",
    "schedule.beta_end",
)


class ExperimentError(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return "%.12g" % x
    return str(x)


def write_kv(path, mapping) -> None:
    with open(path, "w") as f:
        for key in mapping:
            f.write(f"{key}={mapping[key]}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                key, _, val = line.partition("=")
                out[key] = val
    return out


def volume_seed(base_seed: int, vid: str) -> int:
    """Per-volume reconstruction seed, stable in the volume id."""
    return derive_seed(base_seed, 0x77, zlib.crc32(vid.encode()))


def check_checkpoint_compatible(cfg: ExperimentConfig, ckpt_path) -> None:
    ckpt_cfg, _, _, _, _ = load_checkpoint(ckpt_path)
    for key in _MODEL_KEYS:
        if ckpt_cfg.get(key) != cfg.get(key):
            raise ExperimentError(
                f"checkpoint incompatible with config: {key} is "
                f"{ckpt_cfg.get(key)!r} in checkpoint, {cfg.get(key)!r} in config"
            )


def cmd_reconstruct(cfg: ExperimentConfig, checkpoint, data_dir, out_dir,
                    splits=RECON_SPLITS, keep_levels=False, seed=None):
    """Reconstruct every volume of the requested splits into out_dir."""
    t_start = time.time()
    check_checkpoint_compatible(cfg, checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    base_seed = cfg.seed if seed is None else seed
    dataset = Dataset(data_dir)
    denoiser = denoiser_from_checkpoint(checkpoint)
    schedule = cfg.schedule()
    t_list = cfg.getints("test.t_list")
    kind = cfg.get("noise.kind")
    simplex = cfg.simplex_params()
    contrast = cfg.getfloat("eval.contrast_level")

    count = 0
    for split in splits:
        for vid in dataset.ids(split):
            vol = dataset.volume(vid)
            if contrast != 1.0:
                vol = contrast_transform(vol, contrast)
            result = ensemble_reconstruct(
                denoiser, vol, t_list, schedule,
                seed=volume_seed(base_seed, vid),
                noise_kind=kind, simplex_params=simplex, keep_levels=keep_levels,
            )
            write_cdv(os.path.join(out_dir, f"{vid}.rec.cdv"), result.x0_rec)
            if keep_levels:
                lv_dir = os.path.join(out_dir, "levels")
                os.makedirs(lv_dir, exist_ok=True)
                for t, level in zip(result.t_list, result.per_level):
                    write_cdv(os.path.join(lv_dir, f"{vid}.t{t}.cdv"), level)
            count += 1
    if count == 0:
        raise ExperimentError("no volumes found to reconstruct")
    cfg.echo(os.path.join(out_dir, "config.txt"))
    write_kv(os.path.join(out_dir, "recon_manifest.txt"), {
        "checkpoint": str(checkpoint),
        "data_dir": str(data_dir),
        "seed": base_seed,
        "t_list": ",".join(str(t) for t in t_list),
        "contrast_level": _fmt(contrast),
        "volumes": count,
        "wall_seconds": _fmt(time.time() - t_start),
    })
    return count


def _load_pair(dataset: Dataset, recon_dir, vid, contrast: float):
    vol = dataset.volume(vid)
    if contrast != 1.0:
        vol = contrast_transform(vol, contrast)
    rec = read_cdv(os.path.join(recon_dir, f"{vid}.rec.cdv"))
    return vol, rec


def cmd_evaluate(cfg: ExperimentConfig, data_dir, recon_dir, out_dir, seed=None):
    """Threshold search on the unhealthy validation split, metrics on the test splits.

    Produces metrics.csv (one row per volume), summary.txt, per-volume
    histogram exports, and a histogram comparison figure.
    """
    t_start = time.time()
    os.makedirs(out_dir, exist_ok=True)
    base_seed = cfg.seed if seed is None else seed
    dataset = Dataset(data_dir)
    post = cfg.postproc_config()
    contrast = cfg.getfloat("eval.contrast_level")

    manifest_path = os.path.join(recon_dir, "recon_manifest.txt")
    if os.path.exists(manifest_path):
        recon_meta = read_kv(manifest_path)
        if "contrast_level" in recon_meta and abs(float(recon_meta["contrast_level"]) - contrast) > 1e-12:
            raise ExperimentError(
                f"reconstructions were made at contrast {recon_meta['contrast_level']}, "
                f"config asks for {contrast}"
            )

    val_ids = dataset.ids("unhealthy_val")
    if not val_ids:
        raise ExperimentError("no unhealthy validation volumes for the threshold search")
    val_res, val_gts, val_brains = [], [], []
    for vid in val_ids:
        vol, rec = _load_pair(dataset, recon_dir, vid, contrast)
        val_res.append(residual(vol, rec))
        val_gts.append(dataset.annotation(vid))
        val_brains.append(dataset.brain_mask(vid))
    search = greedy_threshold_search(val_res, val_gts, post, brain_masks=val_brains)
    theta = search.threshold

    rows = []
    test_proc, test_gts = [], []
    hist_dir = os.path.join(out_dir, "histograms")
    os.makedirs(hist_dir, exist_ok=True)
    pooled_hists = {"input": [], "recon": []}

    for vid in dataset.ids("unhealthy_test"):
        vol, rec = _load_pair(dataset, recon_dir, vid, contrast)
        brain = dataset.brain_mask(vid)
        annot = dataset.annotation(vid)
        res = residual(vol, rec)
        proc = preprocess_residual(res, brain, post)
        pred = binarize(proc, theta)
        if post.cc_enabled:
            pred = connected_component_filter(pred, post.cc_min_size)
        test_proc.append(proc)
        test_gts.append(annot)
        upper = max(float(vol.max()), float(rec.max()))
        h_in = histogram(vol, brain, upper=upper)
        h_rec = histogram(rec, brain, upper=upper)
        _export_histogram(os.path.join(hist_dir, f"{vid}.input.txt"), h_in)
        _export_histogram(os.path.join(hist_dir, f"{vid}.recon.txt"), h_rec)
        pooled_hists["input"].append((vol, brain))
        pooled_hists["recon"].append((rec, brain))
        err = np.abs(vol.astype(np.float64) - rec.astype(np.float64))
        healthy_mask = brain & ~annot
        rows.append({
            "volume": vid,
            "split": "unhealthy_test",
            "dice": dice(pred, annot),
            "auprc": auprc(proc, annot) if annot.any() else "",
            "ssim": ssim(vol, rec),
            "psnr": psnr(vol, rec),
            "l1_healthy": float(err[healthy_mask].mean()),
            "l1_unhealthy": float(err[annot].mean()) if annot.any() else "",
            "l1_ratio": l1_ratio(vol, rec, annot, brain) if annot.any() else "",
            "kld": kld(h_in, h_rec),
        })

    for vid in dataset.ids("healthy_test"):
        rec_path = os.path.join(recon_dir, f"{vid}.rec.cdv")
        if not os.path.exists(rec_path):
            continue
        vol, rec = _load_pair(dataset, recon_dir, vid, contrast)
        brain = dataset.brain_mask(vid)
        upper = max(float(vol.max()), float(rec.max()))
        h_in = histogram(vol, brain, upper=upper)
        h_rec = histogram(rec, brain, upper=upper)
        err = np.abs(vol.astype(np.float64) - rec.astype(np.float64))
        rows.append({
            "volume": vid,
            "split": "healthy_test",
            "dice": "",
            "auprc": "",
            "ssim": ssim(vol, rec),
            "psnr": psnr(vol, rec),
            "l1_healthy": float(err[brain].mean()),
            "l1_unhealthy": "",
            "l1_ratio": "",
            "kld": kld(h_in, h_rec),
        })

    if not test_proc:
        raise ExperimentError("no unhealthy test volumes found in the dataset")
    pooled_auprc = auprc(test_proc, test_gts)

    columns = ["volume", "split", "dice", "auprc", "ssim", "psnr",
               "l1_healthy", "l1_unhealthy", "l1_ratio", "kld"]
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) if row[c] != "" else "" for c in columns])

    summary = {
        "config_hash": cfg.config_hash(),
        "seed": base_seed,
        "contrast_level": _fmt(contrast),
        "threshold": _fmt(theta),
        "val_mean_dice": _fmt(search.mean_dice),
        "auprc_pooled": _fmt(pooled_auprc),
    }
    test_rows = [r for r in rows if r["split"] == "unhealthy_test"]
    for metric in ("dice", "ssim", "psnr", "l1_ratio", "kld"):
        vals = [r[metric] for r in test_rows if r[metric] != ""]
        vals = [v for v in vals if not (isinstance(v, float) and math.isinf(v))]
        if vals:
            summary[f"test_{metric}_mean"] = _fmt(float(np.mean(vals)))
            summary[f"test_{metric}_std"] = _fmt(float(np.std(vals)))
    summary["wall_seconds"] = _fmt(time.time() - t_start)
    write_kv(os.path.join(out_dir, "summary.txt"), summary)

    _histogram_figure(pooled_hists, os.path.join(out_dir, "figures"), contrast)
    cfg.echo(os.path.join(out_dir, "config.txt"))
    return rows, summary


def _export_histogram(path, hist) -> None:
    centers = (hist.edges[:-1] + hist.edges[1:]) / 2.0
    with open(path, "w") as f:
        for c, d in zip(centers, hist.densities):
            f.write(f"{_fmt(float(c))} {_fmt(float(d))}\n")


def _histogram_figure(pooled, fig_dir, contrast) -> None:
    os.makedirs(fig_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pairs in pooled.items():
        vals = np.concatenate([v[m] for v, m in pairs])
        upper = float(max(np.max(np.concatenate([v[m] for v, m in pooled["input"]])),
                          np.max(np.concatenate([v[m] for v, m in pooled["recon"]]))))
        edges = np.linspace(0.0, max(upper, 1e-6), 501)
        counts, _ = np.histogram(vals, bins=edges)
        dens = counts / (counts.sum() * (edges[1] - edges[0]))
        centers = (edges[:-1] + edges[1:]) / 2.0
        ax.plot(centers, dens, label=label)
    ax.set_xlabel("intensity")
    ax.set_ylabel("density")
    ax.set_title(f"input vs reconstruction intensities (contrast {contrast})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(fig_dir, "histogram_comparison.png"), dpi=120)
    plt.close(fig)


def sweep_noise_levels(cfg: ExperimentConfig, checkpoint, data_dir, out_dir,
                       t_values=(250, 500, 750), include_ensemble=True, seed=None):
    """DICE as a function of the test-time noise level, plus the ensemble row.

    Per-level reconstructions share noise seeds with the ensemble, which is
    their exact arithmetic mean. Writes sweep.csv and a matplotlib curve.
    """
    t_start = time.time()
    check_checkpoint_compatible(cfg, checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    base_seed = cfg.seed if seed is None else seed
    dataset = Dataset(data_dir)
    denoiser = denoiser_from_checkpoint(checkpoint)
    schedule = cfg.schedule()
    kind = cfg.get("noise.kind")
    simplex = cfg.simplex_params()
    contrast = cfg.getfloat("eval.contrast_level")
    post = cfg.postproc_config()
    t_values = [int(t) for t in t_values]

    recons = {}  # (setting label) -> {vid: recon volume}
    labels = [str(t) for t in t_values] + (["ensemble"] if include_ensemble else [])
    for label in labels:
        recons[label] = {}
    vols, brains, annots, split_of = {}, {}, {}, {}
    for split in ("unhealthy_val", "unhealthy_test"):
        for vid in dataset.ids(split):
            vol = dataset.volume(vid)
            if contrast != 1.0:
                vol = contrast_transform(vol, contrast)
            vols[vid] = vol
            brains[vid] = dataset.brain_mask(vid)
            annots[vid] = dataset.annotation(vid)
            split_of[vid] = split
            result = ensemble_reconstruct(
                denoiser, vol, t_values, schedule,
                seed=volume_seed(base_seed, vid),
                noise_kind=kind, simplex_params=simplex, keep_levels=True,
            )
            for t, level in zip(result.t_list, result.per_level):
                recons[str(t)][vid] = level
            if include_ensemble:
                recons["ensemble"][vid] = result.x0_rec

    sweep_rows = []
    for label in labels:
        val_res = [residual(vols[v], recons[label][v]) for v in vols if split_of[v] == "unhealthy_val"]
        val_gts = [annots[v] for v in vols if split_of[v] == "unhealthy_val"]
        val_brains = [brains[v] for v in vols if split_of[v] == "unhealthy_val"]
        search = greedy_threshold_search(val_res, val_gts, post, brain_masks=val_brains)
        dices = []
        for vid in vols:
            if split_of[vid] != "unhealthy_test":
                continue
            pred = run_pipeline(vols[vid], recons[label][vid], brains[vid], post, search.threshold)
            dices.append(dice(pred, annots[vid]))
        sweep_rows.append({
            "setting": label,
            "threshold": search.threshold,
            "val_mean_dice": search.mean_dice,
            "test_mean_dice": float(np.mean(dices)),
        })

    with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["setting", "threshold", "val_mean_dice", "test_mean_dice"])
        for row in sweep_rows:
            writer.writerow([row["setting"], _fmt(row["threshold"]),
                             _fmt(row["val_mean_dice"]), _fmt(row["test_mean_dice"])])

    fig, ax = plt.subplots(figsize=(6, 4))
    singles = [r for r in sweep_rows if r["setting"] != "ensemble"]
    ax.plot([int(r["setting"]) for r in singles], [r["test_mean_dice"] for r in singles],
            marker="o", label="single noise level")
    for row in sweep_rows:
        if row["setting"] == "ensemble":
            ax.axhline(row["test_mean_dice"], color="tab:red", linestyle="--",
                       label="ensemble of all levels")
    ax.set_xlabel("test-time noise level t")
    ax.set_ylabel("test DICE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "dice_vs_t.png"), dpi=120)
    plt.close(fig)

    write_kv(os.path.join(out_dir, "sweep_manifest.txt"), {
        "checkpoint": str(checkpoint),
        "seed": base_seed,
        "t_values": ",".join(str(t) for t in t_values),
        "wall_seconds": _fmt(time.time() - t_start),
    })
    return sweep_rows
