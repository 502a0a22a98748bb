"""Experiment configuration: flat dotted key=value files, presets, and echoing.

Every run merges its config file (if any) over the desk-scale defaults and
writes the complete effective mapping back into its output directory, so a
run can always be reproduced from the echo alone.
"""

import hashlib

from .nets import EncoderConfig, UNetConfig
from .noise import SimplexParams
from .phantom import PhantomSpec
from .pipeline import PostProcConfig
from .pretrain import PretrainConfig
from .schedule import NoiseSchedule, linear_schedule

# desk-scale defaults: CPU-trainable in minutes
DESK_DEFAULTS = {
    "seed": "0",
    "data.image_size": "32",
    "data.depth": "8",
    "data.healthy_train": "100",
    "data.healthy_val": "10",
    "data.healthy_test": "10",
    "data.unhealthy_val": "10",
    "data.unhealthy_test": "20",
    "data.axis_frac_min": "0.60",
    "data.axis_frac_max": "0.72",
    "data.depth_frac_min": "0.85",
    "data.depth_frac_max": "0.95",
    "data.texture_amplitude": "0.08",
    "data.texture_wavelength": "8.0",
    "data.base_intensity_min": "0.40",
    "data.base_intensity_max": "0.60",
    "data.ventricle_frac_min": "0.25",
    "data.ventricle_frac_max": "0.45",
    "data.ventricle_factor_min": "0.55",
    "data.ventricle_factor_max": "0.80",
    "data.anomaly_count": "2",
    "data.anomaly_radius_min": "2.0",
    "data.anomaly_radius_max": "3.2",
    "data.anomaly_depth_radius_max": "2.0",
    "data.anomaly_offset": "0.40",
    "data.normalize_percentile": "0.98",
    "schedule.T": "1000",
    "schedule.beta_start": "1e-4",
    "schedule.beta_end": "0.02",
    "noise.kind": "simplex",
    "noise.octaves": "6",
    "noise.persistence": "0.8",
    "noise.frequency": "0.03125",
    "model.preset": "cddpm",
    "model.level_channels": "32,64,64",
    "model.cond_dim": "32",
    "model.groupnorm_groups": "8",
    "encoder.widths": "16,32,64,64",
    "encoder.init": "scratch",
    "encoder.checkpoint": "",
    "train.lr": "1e-3",
    "train.batch_size": "8",
    "train.epochs": "25",
    "train.steps_per_epoch": "60",
    "train.augment": "true",
    "train.val_t": "500",
    "pretrain.epochs": "8",
    "pretrain.steps_per_epoch": "25",
    "pretrain.lr": "1e-3",
    "pretrain.batch_size": "16",
    "pretrain.patch_size": "8",
    "pretrain.ratio": "0.65",
    "test.t_list": "500",
    "eval.contrast_level": "1.0",
    "pipeline.median_enabled": "true",
    "pipeline.median_kernel": "3",
    "pipeline.erosion_enabled": "true",
    "pipeline.erosion_iterations": "1",
    "pipeline.cc_enabled": "true",
    "pipeline.cc_min_size": "7",
    "pipeline.threshold_count": "100",
}

# published-scale settings; kept as a preset, not exercised by tests
PAPER_OVERRIDES = {
    "data.image_size": "96",
    "data.depth": "50",
    "model.level_channels": "128,256,256",
    "model.cond_dim": "128",
    "model.groupnorm_groups": "32",
    "encoder.widths": "64,128,256,512",
    "train.lr": "1e-5",
    "train.batch_size": "32",
    "train.epochs": "1600",
    "test.t_list": "250,500,750",
    "pipeline.median_kernel": "5",
    "pipeline.erosion_iterations": "3",
}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


class ExperimentConfig:
    """Typed view over the merged flat key-value mapping."""

    def __init__(self, values: dict | None = None, scale: str = "desk"):
        base = dict(DESK_DEFAULTS)
        if scale == "paper":
            base.update(PAPER_OVERRIDES)
        elif scale != "desk":
            raise ConfigError(f"unknown scale preset {scale!r}")
        for key, val in (values or {}).items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r}")
            base[key] = str(val)
        self.values = base

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as f:
            values = parse_config_text(f.read())
        scale = values.pop("scale", "desk")
        values.update(overrides or {})
        return cls(values, scale=scale)

    # typed getters -------------------------------------------------------
    def get(self, key: str) -> str:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing config key {key!r}") from None

    def getint(self, key: str) -> int:
        return int(self.get(key))

    def getfloat(self, key: str) -> float:
        return float(self.get(key))

    def getbool(self, key: str) -> bool:
        val = self.get(key).lower()
        if val in ("true", "1", "yes"):
            return True
        if val in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {val!r}")

    def getints(self, key: str) -> list:
        raw = self.get(key)
        return [int(x) for x in raw.split(",") if x.strip()]

    # structured views ----------------------------------------------------
    @property
    def seed(self) -> int:
        return self.getint("seed")

    def phantom_spec(self, seed: int, anomalous: bool) -> PhantomSpec:
        return PhantomSpec(
            image_size=self.getint("data.image_size"),
            depth=self.getint("data.depth"),
            axis_frac_min=self.getfloat("data.axis_frac_min"),
            axis_frac_max=self.getfloat("data.axis_frac_max"),
            depth_frac_min=self.getfloat("data.depth_frac_min"),
            depth_frac_max=self.getfloat("data.depth_frac_max"),
            texture_amplitude=self.getfloat("data.texture_amplitude"),
            texture_wavelength=self.getfloat("data.texture_wavelength"),
            base_intensity_min=self.getfloat("data.base_intensity_min"),
            base_intensity_max=self.getfloat("data.base_intensity_max"),
            ventricle_frac_min=self.getfloat("data.ventricle_frac_min"),
            ventricle_frac_max=self.getfloat("data.ventricle_frac_max"),
            ventricle_factor_min=self.getfloat("data.ventricle_factor_min"),
            ventricle_factor_max=self.getfloat("data.ventricle_factor_max"),
            anomaly_count=self.getint("data.anomaly_count") if anomalous else 0,
            anomaly_radius_min=self.getfloat("data.anomaly_radius_min"),
            anomaly_radius_max=self.getfloat("data.anomaly_radius_max"),
            anomaly_depth_radius_max=self.getfloat("data.anomaly_depth_radius_max"),
            anomaly_offset=self.getfloat("data.anomaly_offset"),
            seed=seed,
        )

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(
            self.getint("schedule.T"),
            self.getfloat("schedule.beta_start"),
            self.getfloat("schedule.beta_end"),
        )

    def simplex_params(self) -> SimplexParams:
        return SimplexParams(
            octaves=self.getint("noise.octaves"),
            persistence=self.getfloat("noise.persistence"),
            frequency=self.getfloat("noise.frequency"),
        )

    def unet_config(self) -> UNetConfig:
        return UNetConfig(
            level_channels=tuple(self.getints("model.level_channels")),
            cond_dim=self.getint("model.cond_dim"),
            groupnorm_groups=self.getint("model.groupnorm_groups"),
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            widths=tuple(self.getints("encoder.widths")),
            cond_dim=self.getint("model.cond_dim"),
            groupnorm_groups=self.getint("model.groupnorm_groups"),
        )

    def postproc_config(self) -> PostProcConfig:
        return PostProcConfig(
            median_enabled=self.getbool("pipeline.median_enabled"),
            median_kernel=self.getint("pipeline.median_kernel"),
            erosion_enabled=self.getbool("pipeline.erosion_enabled"),
            erosion_iterations=self.getint("pipeline.erosion_iterations"),
            cc_enabled=self.getbool("pipeline.cc_enabled"),
            cc_min_size=self.getint("pipeline.cc_min_size"),
            threshold_count=self.getint("pipeline.threshold_count"),
        )

    def pretrain_config(self, seed: int) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.getint("pretrain.epochs"),
            steps_per_epoch=self.getint("pretrain.steps_per_epoch"),
            lr=self.getfloat("pretrain.lr"),
            batch_size=self.getint("pretrain.batch_size"),
            patch_size=self.getint("pretrain.patch_size"),
            ratio=self.getfloat("pretrain.ratio"),
            seed=seed,
        )

    # persistence ---------------------------------------------------------
    def dump(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))

    def echo(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.dump())

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]

    def copy(self, **overrides) -> "ExperimentConfig":
        values = dict(self.values)
        for key, val in overrides.items():
            values[key] = str(val)
        return ExperimentConfig(values)
