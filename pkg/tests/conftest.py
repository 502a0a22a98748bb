import pytest

from diffuad.config import ExperimentConfig
from diffuad.dataset import Dataset, generate_dataset
from diffuad.training import train_model

# micro scale: 16x16x6 phantoms and a small net, for fast plumbing tests
MICRO = {
    "data.image_size": "16",
    "data.depth": "6",
    "data.healthy_train": "8",
    "data.healthy_val": "2",
    "data.healthy_test": "2",
    "data.unhealthy_val": "3",
    "data.unhealthy_test": "4",
    "data.anomaly_count": "1",
    "data.anomaly_radius_min": "1.5",
    "data.anomaly_radius_max": "2.0",
    "data.anomaly_depth_radius_max": "1.0",
    "model.level_channels": "8,16,16",
    "model.cond_dim": "8",
    "model.groupnorm_groups": "4",
    "encoder.widths": "4,8",
    "train.epochs": "3",
    "train.steps_per_epoch": "5",
    "train.batch_size": "4",
    "pretrain.epochs": "1",
    "pretrain.steps_per_epoch": "4",
    "pretrain.batch_size": "4",
    "pipeline.median_kernel": "3",
    "pipeline.erosion_iterations": "1",
    "pipeline.threshold_count": "20",
    "seed": "11",
}


def micro_config(**overrides):
    values = dict(MICRO)
    values.update({k: str(v) for k, v in overrides.items()})
    return ExperimentConfig(values)


@pytest.fixture(scope="session")
def micro_cfg():
    return micro_config()


@pytest.fixture(scope="session")
def micro_data(tmp_path_factory, micro_cfg):
    root = tmp_path_factory.mktemp("micro_data")
    generate_dataset(micro_cfg, root)
    return root


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory, micro_cfg, micro_data):
    """A trained cddpm micro model with its run directory."""
    run_dir = tmp_path_factory.mktemp("micro_run")
    ds = Dataset(micro_data)
    result = train_model(
        micro_cfg,
        ds.volumes("healthy_train"),
        ds.volumes("healthy_val"),
        run_dir,
        preset="cddpm",
    )
    micro_cfg.echo(run_dir / "config.txt")
    return {"dir": run_dir, "checkpoint": result.checkpoint_path, "result": result}
