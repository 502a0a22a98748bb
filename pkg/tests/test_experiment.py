import csv
import os

import numpy as np
import pytest

from diffuad.experiment import (
    ExperimentError,
    cmd_evaluate,
    cmd_reconstruct,
    check_checkpoint_compatible,
    sweep_noise_levels,
)
from diffuad.volume import read_cdv

from conftest import micro_config


@pytest.fixture(scope="module")
def recon_dir(tmp_path_factory, micro_cfg, micro_run, micro_data):
    out = tmp_path_factory.mktemp("recon")
    cmd_reconstruct(micro_cfg, micro_run["checkpoint"], micro_data, out)
    return out


class TestReconstruct:
    def test_outputs_one_file_per_volume(self, recon_dir, micro_cfg):
        files = [f for f in os.listdir(recon_dir) if f.endswith(".rec.cdv")]
        expect = (micro_cfg.getint("data.unhealthy_val")
                  + micro_cfg.getint("data.unhealthy_test")
                  + micro_cfg.getint("data.healthy_test"))
        assert len(files) == expect
        assert (recon_dir / "recon_manifest.txt").exists()
        assert (recon_dir / "config.txt").exists()

    def test_rerun_is_byte_identical(self, tmp_path, micro_cfg, micro_run, micro_data, recon_dir):
        again = tmp_path / "again"
        cmd_reconstruct(micro_cfg, micro_run["checkpoint"], micro_data, again,
                        splits=("unhealthy_val",))
        for name in os.listdir(again):
            if name.endswith(".rec.cdv"):
                assert (again / name).read_bytes() == (recon_dir / name).read_bytes()

    def test_keep_levels_writes_exact_mean(self, tmp_path, micro_run, micro_data):
        cfg = micro_config(**{"test.t_list": "250,500,750"})
        out = tmp_path / "levels"
        cmd_reconstruct(cfg, micro_run["checkpoint"], micro_data, out,
                        splits=("unhealthy_val",), keep_levels=True)
        vid = "uva000"
        rec = read_cdv(out / f"{vid}.rec.cdv")
        levels = [read_cdv(out / "levels" / f"{vid}.t{t}.cdv") for t in (250, 500, 750)]
        assert np.array_equal(rec, np.mean(np.stack(levels), axis=0).astype(np.float32))

    def test_incompatible_checkpoint_rejected(self, micro_run):
        other = micro_config(**{"model.level_channels": "4,8,8"})
        with pytest.raises(ExperimentError, match="incompatible"):
            check_checkpoint_compatible(other, micro_run["checkpoint"])

    def test_contrast_transform_applied(self, tmp_path, micro_cfg, micro_run, micro_data, recon_dir):
        cfg = micro_config(**{"eval.contrast_level": "2.0"})
        out = tmp_path / "cl2"
        cmd_reconstruct(cfg, micro_run["checkpoint"], micro_data, out, splits=("unhealthy_val",))
        a = read_cdv(out / "uva000.rec.cdv")
        b = read_cdv(recon_dir / "uva000.rec.cdv")
        assert not np.array_equal(a, b)


@pytest.fixture(scope="module")
def eval_out(tmp_path_factory, micro_cfg, micro_data, recon_dir):
    out = tmp_path_factory.mktemp("eval")
    rows, summary = cmd_evaluate(micro_cfg, micro_data, recon_dir, out)
    return out, rows, summary


class TestEvaluate:
    def test_metrics_csv_structure(self, eval_out, micro_cfg):
        out, rows, _ = eval_out
        with open(out / "metrics.csv", newline="") as f:
            parsed = list(csv.DictReader(f))
        n_test = micro_cfg.getint("data.unhealthy_test")
        n_healthy = micro_cfg.getint("data.healthy_test")
        assert len(parsed) == n_test + n_healthy
        unhealthy = [r for r in parsed if r["split"] == "unhealthy_test"]
        assert all(r["dice"] != "" for r in unhealthy)
        healthy = [r for r in parsed if r["split"] == "healthy_test"]
        assert all(r["dice"] == "" for r in healthy)

    def test_summary_aggregates_match_rows(self, eval_out):
        out, rows, summary = eval_out
        with open(out / "metrics.csv", newline="") as f:
            parsed = [r for r in csv.DictReader(f) if r["split"] == "unhealthy_test"]
        dices = [float(r["dice"]) for r in parsed]
        assert float(summary["test_dice_mean"]) == pytest.approx(np.mean(dices), abs=1e-9)
        assert float(summary["test_dice_std"]) == pytest.approx(np.std(dices), abs=1e-9)
        assert 0.0 <= float(summary["auprc_pooled"]) <= 1.0

    def test_histograms_and_figure_exported(self, eval_out, micro_cfg):
        out, _, _ = eval_out
        hist_files = os.listdir(out / "histograms")
        assert len(hist_files) == 2 * micro_cfg.getint("data.unhealthy_test")
        sample = (out / "histograms" / sorted(hist_files)[0]).read_text().splitlines()
        assert len(sample) == 500
        assert len(sample[0].split()) == 2
        assert (out / "figures" / "histogram_comparison.png").exists()

    def test_rerun_is_byte_identical(self, tmp_path, micro_cfg, micro_data, recon_dir, eval_out):
        out1, _, _ = eval_out
        out2 = tmp_path / "eval2"
        cmd_evaluate(micro_cfg, micro_data, recon_dir, out2)
        assert (out1 / "metrics.csv").read_bytes() == (out2 / "metrics.csv").read_bytes()

    def test_contrast_mismatch_rejected(self, micro_data, recon_dir, tmp_path):
        cfg = micro_config(**{"eval.contrast_level": "2.0"})
        with pytest.raises(ExperimentError, match="contrast"):
            cmd_evaluate(cfg, micro_data, recon_dir, tmp_path / "bad")


class TestSweep:
    def test_sweep_rows_and_artifacts(self, tmp_path, micro_cfg, micro_run, micro_data):
        out = tmp_path / "sweep"
        rows = sweep_noise_levels(micro_cfg, micro_run["checkpoint"], micro_data, out,
                                  t_values=(200, 600))
        settings = [r["setting"] for r in rows]
        assert settings == ["200", "600", "ensemble"]
        assert (out / "sweep.csv").exists()
        assert (out / "dice_vs_t.png").exists()
        for row in rows:
            assert 0.0 <= row["test_mean_dice"] <= 1.0
