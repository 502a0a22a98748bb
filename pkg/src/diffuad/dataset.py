"""Dataset materialization: phantom splits on disk in the CDV1 container.

Layout of a dataset directory:
    split.txt            one `split.<name>=id,id,...` line per split
    <id>.cdv             volume
    <id>.brain.cdv       brain support mask
    <id>.annot.cdv       anomaly annotation (unhealthy volumes only)
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .noise import derive_seed
from .phantom import generate_phantom, inject_anomaly
from .volume import VolumeError, read_cdv, read_mask_cdv, write_cdv, write_mask_cdv

SPLITS = ("healthy_train", "healthy_val", "healthy_test", "unhealthy_val", "unhealthy_test")
_PREFIX = {
    "healthy_train": "htr",
    "healthy_val": "hva",
    "healthy_test": "hte",
    "unhealthy_val": "uva",
    "unhealthy_test": "ute",
}


@dataclass
class DatasetSplit:
    healthy_train: list = field(default_factory=list)
    healthy_val: list = field(default_factory=list)
    healthy_test: list = field(default_factory=list)
    unhealthy_val: list = field(default_factory=list)
    unhealthy_test: list = field(default_factory=list)

    def all_ids(self):
        return sum((getattr(self, s) for s in SPLITS), [])

    def validate(self):
        ids = self.all_ids()
        if len(ids) != len(set(ids)):
            raise VolumeError("dataset splits overlap")


def generate_dataset(cfg: ExperimentConfig, out_dir, seed: int | None = None) -> DatasetSplit:
    """Generate all phantom volumes for the configured splits under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    base_seed = cfg.seed if seed is None else seed
    split = DatasetSplit()
    counter = 0
    for name in SPLITS:
        n = cfg.getint(f"data.{name}")
        anomalous = name.startswith("unhealthy")
        for k in range(n):
            vol_seed = derive_seed(base_seed, 0xDA, counter)
            counter += 1
            vid = f"{_PREFIX[name]}{k:03d}"
            spec = cfg.phantom_spec(vol_seed, anomalous=anomalous)
            healthy, brain = generate_phantom(spec)
            if anomalous:
                vol, annot = inject_anomaly(healthy, spec, brain)
                write_mask_cdv(os.path.join(out_dir, f"{vid}.annot.cdv"), annot)
            else:
                vol = healthy
            write_cdv(os.path.join(out_dir, f"{vid}.cdv"), vol)
            write_mask_cdv(os.path.join(out_dir, f"{vid}.brain.cdv"), brain)
            getattr(split, name).append(vid)
    split.validate()
    with open(os.path.join(out_dir, "split.txt"), "w") as f:
        for name in SPLITS:
            f.write(f"split.{name}={','.join(getattr(split, name))}\n")
    return split


class Dataset:
    """Read access to a materialized dataset directory."""

    def __init__(self, root):
        self.root = str(root)
        split_path = os.path.join(self.root, "split.txt")
        if not os.path.exists(split_path):
            raise VolumeError(f"{self.root}: not a dataset directory (missing split.txt)")
        split = DatasetSplit()
        with open(split_path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                name = key.removeprefix("split.")
                if name not in SPLITS:
                    raise VolumeError(f"unknown split {name!r} in split.txt")
                setattr(split, name, [v for v in val.split(",") if v])
        split.validate()
        self.split = split

    def ids(self, split_name: str):
        if split_name not in SPLITS:
            raise VolumeError(f"unknown split {split_name!r}")
        return list(getattr(self.split, split_name))

    def volume(self, vid: str) -> np.ndarray:
        return read_cdv(os.path.join(self.root, f"{vid}.cdv"))

    def brain_mask(self, vid: str) -> np.ndarray:
        return read_mask_cdv(os.path.join(self.root, f"{vid}.brain.cdv"))

    def annotation(self, vid: str) -> np.ndarray:
        path = os.path.join(self.root, f"{vid}.annot.cdv")
        if not os.path.exists(path):
            raise VolumeError(f"{vid} has no annotation mask")
        return read_mask_cdv(path)

    def volumes(self, split_name: str):
        return [self.volume(v) for v in self.ids(split_name)]
