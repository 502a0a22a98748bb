"""Cross-run comparison reports: aggregate tables, significance tests, image panels.

A "run" directory is expected to hold the echoed config, a recon/ directory
with its manifest, and an eval/ directory with metrics.csv + summary.txt as
produced by the train/reconstruct/evaluate commands.
"""

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig, parse_config_text
from .dataset import Dataset
from .experiment import read_kv, write_kv, _fmt
from .metrics import permutation_test
from .pipeline import binarize, connected_component_filter, preprocess_residual, residual
from .volume import read_cdv, write_pgm

AGG_METRICS = ("dice", "auprc", "ssim", "psnr", "l1_ratio", "kld")


class ReportError(RuntimeError):
    pass


def _load_run(run_dir):
    cfg_path = os.path.join(run_dir, "config.txt")
    metrics_path = os.path.join(run_dir, "eval", "metrics.csv")
    summary_path = os.path.join(run_dir, "eval", "summary.txt")
    if not os.path.exists(cfg_path) or not os.path.exists(metrics_path):
        raise ReportError(f"{run_dir}: not a completed run (need config.txt and eval/metrics.csv)")
    with open(cfg_path) as f:
        cfg = ExperimentConfig(parse_config_text(f.read()))
    rows = []
    with open(metrics_path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(row)
    summary = read_kv(summary_path) if os.path.exists(summary_path) else {}
    return {"dir": run_dir, "config": cfg, "rows": rows, "summary": summary}


def group_label(cfg: ExperimentConfig) -> str:
    label = cfg.get("model.preset")
    if cfg.get("encoder.init") == "pretrained":
        label += "+ssl"
    if len(cfg.getints("test.t_list")) > 1:
        label += "+ens"
    return label


def _metric_values(rows, metric, split="unhealthy_test"):
    vals = []
    for row in rows:
        if row.get("split") != split or not row.get(metric):
            continue
        v = float(row[metric])
        if not math.isinf(v):
            vals.append(v)
    return vals


def cmd_report(run_dirs, out_dir, panel_volumes: int = 3, seed: int = 0):
    """Aggregate completed runs into comparison tables and example panels."""
    if not run_dirs:
        raise ReportError("no run directories given")
    os.makedirs(out_dir, exist_ok=True)
    runs = [_load_run(d) for d in run_dirs]

    groups = {}
    for run in runs:
        groups.setdefault(group_label(run["config"]), []).append(run)

    # aggregate table: per-run means first, then mean +/- std across runs
    table_rows = []
    for label in sorted(groups):
        for metric in AGG_METRICS:
            run_means = []
            for run in groups[label]:
                vals = _metric_values(run["rows"], metric)
                if vals:
                    run_means.append(float(np.mean(vals)))
            if run_means:
                table_rows.append({
                    "group": label,
                    "metric": metric,
                    "runs": len(run_means),
                    "mean": float(np.mean(run_means)),
                    "std": float(np.std(run_means)),
                })
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["group", "metric", "runs", "mean", "std"])
        for row in table_rows:
            writer.writerow([row["group"], row["metric"], row["runs"],
                             _fmt(row["mean"]), _fmt(row["std"])])

    # pairwise significance on pooled per-volume test DICE
    labels = sorted(groups)
    pv_rows = []
    if len(labels) >= 2:
        pooled = {
            label: sum((_metric_values(run["rows"], "dice") for run in groups[label]), [])
            for label in labels
        }
        for i, la in enumerate(labels):
            for lb in labels[i + 1:]:
                if pooled[la] and pooled[lb]:
                    p = permutation_test(pooled[la], pooled[lb], rounds=10000, seed=seed)
                    pv_rows.append({"group_a": la, "group_b": lb, "metric": "dice", "p_value": p})
        with open(os.path.join(out_dir, "pvalues.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["group_a", "group_b", "metric", "p_value"])
            for row in pv_rows:
                writer.writerow([row["group_a"], row["group_b"], row["metric"], _fmt(row["p_value"])])

    with open(os.path.join(out_dir, "table.txt"), "w") as f:
        f.write(f"{'group':<16}{'metric':<12}{'runs':<6}{'mean':<14}{'std':<14}\n")
        for row in table_rows:
            f.write(f"{row['group']:<16}{row['metric']:<12}{row['runs']:<6}"
                    f"{row['mean']:<14.4f}{row['std']:<14.4f}\n")

    _render_panels(runs[0], out_dir, panel_volumes)
    write_kv(os.path.join(out_dir, "report_manifest.txt"), {
        "runs": ",".join(str(d) for d in run_dirs),
        "groups": ",".join(labels),
    })
    return table_rows, pv_rows


def _render_panels(run, out_dir, panel_volumes):
    """Input / reconstruction / residual / prediction / ground-truth panels."""
    recon_dir = os.path.join(run["dir"], "recon")
    manifest = os.path.join(recon_dir, "recon_manifest.txt")
    if not os.path.exists(manifest):
        return
    meta = read_kv(manifest)
    data_dir = meta.get("data_dir", "")
    if not os.path.isdir(data_dir):
        return
    cfg = run["config"]
    dataset = Dataset(data_dir)
    theta = float(run["summary"].get("threshold", "0.5"))
    post = cfg.postproc_config()
    contrast = cfg.getfloat("eval.contrast_level")

    ids = dataset.ids("unhealthy_test")[:panel_volumes]
    if not ids:
        return
    panel_dir = os.path.join(out_dir, "panels")
    os.makedirs(panel_dir, exist_ok=True)
    fig, axes = plt.subplots(len(ids), 5, figsize=(11, 2.3 * len(ids)), squeeze=False)
    col_titles = ("input", "reconstruction", "residual", "prediction", "ground truth")
    from .volume import contrast_transform

    for r, vid in enumerate(ids):
        vol = dataset.volume(vid)
        if contrast != 1.0:
            vol = contrast_transform(vol, contrast)
        rec = read_cdv(os.path.join(recon_dir, f"{vid}.rec.cdv"))
        brain = dataset.brain_mask(vid)
        annot = dataset.annotation(vid)
        res = residual(vol, rec)
        proc = preprocess_residual(res, brain, post)
        pred = binarize(proc, theta)
        if post.cc_enabled:
            pred = connected_component_filter(pred, post.cc_min_size)
        z = int(np.argmax(annot.sum(axis=(1, 2))))  # most annotated slice
        images = (vol[z], rec[z], res[z] / max(res.max(), 1e-6),
                  pred[z].astype(np.float32), annot[z].astype(np.float32))
        for c, (img, title) in enumerate(zip(images, col_titles)):
            write_pgm(os.path.join(panel_dir, f"{vid}.{title.split()[0]}.pgm"), img)
            ax = axes[r][c]
            ax.imshow(img, cmap="gray", vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if r == 0:
                ax.set_title(title, fontsize=9)
        axes[r][0].set_ylabel(vid, fontsize=8)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "panels.png"), dpi=120)
    plt.close(fig)
