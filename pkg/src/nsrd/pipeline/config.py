"""Training configuration and the JSON config file shared by all CLI subcommands."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..neural.network import NetworkConfig
from ..objective import LossWeights
from ..renderer import RenderConfig


@dataclass
class TrainConfig:
    epochs: int = 40
    steps_per_epoch: int = 16
    lr: float = 5e-4
    lr_period: int = 20
    batch: int = 8
    crop: int = 32
    unroll: int = 6
    seed: int = 0
    demodulation: bool = True
    temporal_loss: bool = True
    motion_mask: bool = True
    recurrence: bool = True
    loss_weights: tuple = (1.0, 1.0, 1.0)
    val_windows: int = 4

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        LossWeights(*self.loss_weights)
        if self.crop % 4:
            raise ValueError(f"crop {self.crop} must be divisible by 4")
        if self.unroll < 2:
            raise ValueError("unroll length must be at least 2 frames")
        if min(self.epochs, self.steps_per_epoch, self.batch, self.lr_period) < 1:
            raise ValueError(f"nonpositive schedule entry in {self}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(*self.loss_weights)

    def check_data(self, lr_size):
        if self.crop > min(lr_size):
            raise ValueError(f"crop {self.crop} exceeds LR size {lr_size}")

    def variant(self, **changes) -> "TrainConfig":
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)


@dataclass
class DataConfig:
    """Which procedural sequences make up each split."""
    train: tuple = ("demo0", "demo1", "demo2", "demo3")
    val: tuple = ("demo4",)
    test: tuple = ("demo5",)
    scene_seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            setattr(self, name, tuple(getattr(self, name)))
        if not self.train:
            raise ValueError("at least one training sequence is required")


@dataclass
class Config:
    render: RenderConfig = field(default_factory=RenderConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    workdir: str = "runs"

    def __post_init__(self):
        if self.network.sr_factor != self.render.sr_factor:
            raise ValueError("network and render sr_factor differ")
        self.train.check_data(self.render.lr_size)

    def to_json(self) -> dict:
        return asdict(self)


_SECTIONS = {"render": RenderConfig, "network": NetworkConfig, "train": TrainConfig, "data": DataConfig}


def _build(cls, values: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**values)


def config_from_dict(d: dict) -> Config:
    unknown = set(d) - set(_SECTIONS) - {"workdir"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    render = _build(RenderConfig, d.get("render", {}))
    net = dict(d.get("network", {}))
    net.setdefault("sr_factor", render.sr_factor)
    return Config(render, _build(NetworkConfig, net), _build(TrainConfig, d.get("train", {})),
                  _build(DataConfig, d.get("data", {})), d.get("workdir", "runs"))


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    return config_from_dict(json.loads(Path(path).read_text()))


def cache_dir() -> Path:
    """Root for cached LUTs and rendered datasets (``NSRD_CACHE`` overrides)."""
    root = Path(os.environ.get("NSRD_CACHE", Path.home() / ".cache" / "nsrd"))
    root.mkdir(parents=True, exist_ok=True)
    return root
