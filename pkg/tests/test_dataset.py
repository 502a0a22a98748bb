import os

import numpy as np
import pytest

from diffuad.config import ExperimentConfig
from diffuad.dataset import Dataset, DatasetSplit, generate_dataset
from diffuad.volume import VolumeError

TINY = {
    "data.healthy_train": "3",
    "data.healthy_val": "2",
    "data.healthy_test": "1",
    "data.unhealthy_val": "2",
    "data.unhealthy_test": "2",
}


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = ExperimentConfig(TINY)
    split = generate_dataset(cfg, root)
    return root, split


def test_split_sizes_and_disjointness(tiny_dataset):
    _, split = tiny_dataset
    assert len(split.healthy_train) == 3
    assert len(split.unhealthy_test) == 2
    split.validate()  # raises on overlap


def test_files_on_disk(tiny_dataset):
    root, split = tiny_dataset
    for vid in split.all_ids():
        assert os.path.exists(root / f"{vid}.cdv")
        assert os.path.exists(root / f"{vid}.brain.cdv")
    for vid in split.unhealthy_val + split.unhealthy_test:
        assert os.path.exists(root / f"{vid}.annot.cdv")
    for vid in split.healthy_train:
        assert not os.path.exists(root / f"{vid}.annot.cdv")


def test_loading_and_shapes(tiny_dataset):
    root, split = tiny_dataset
    ds = Dataset(root)
    assert ds.ids("healthy_train") == split.healthy_train
    vol = ds.volume(split.unhealthy_test[0])
    assert vol.shape == (8, 32, 32)
    brain = ds.brain_mask(split.unhealthy_test[0])
    annot = ds.annotation(split.unhealthy_test[0])
    assert brain.dtype == np.bool_ and annot.dtype == np.bool_
    assert annot.any()
    assert not np.any(annot & ~brain)


def test_healthy_volume_has_no_annotation(tiny_dataset):
    root, split = tiny_dataset
    ds = Dataset(root)
    with pytest.raises(VolumeError, match="no annotation"):
        ds.annotation(split.healthy_train[0])


def test_generation_deterministic(tmp_path):
    cfg = ExperimentConfig(dict(TINY, seed="9"))
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    generate_dataset(cfg, a_dir)
    generate_dataset(cfg, b_dir)
    for name in sorted(os.listdir(a_dir)):
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_distinct_volumes_within_split(tiny_dataset):
    root, split = tiny_dataset
    ds = Dataset(root)
    a = ds.volume(split.healthy_train[0])
    b = ds.volume(split.healthy_train[1])
    assert not np.array_equal(a, b)


def test_overlapping_split_rejected():
    split = DatasetSplit(healthy_train=["a"], healthy_val=["a"])
    with pytest.raises(VolumeError, match="overlap"):
        split.validate()


def test_missing_directory_rejected(tmp_path):
    with pytest.raises(VolumeError, match="split.txt"):
        Dataset(tmp_path / "nope")


def test_unknown_split_name_rejected(tiny_dataset):
    root, _ = tiny_dataset
    ds = Dataset(root)
    with pytest.raises(VolumeError, match="unknown split"):
        ds.ids("training")
