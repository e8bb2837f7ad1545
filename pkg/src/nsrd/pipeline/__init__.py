from .config import Config, DataConfig, TrainConfig, load_config
from .data import Sequence, ensure_dataset, ensure_lut, load_manifest, prepare_sequence
from .evaluate import evaluate
from .infer import bilinear_baseline, infer
from .train import train, unroll

__all__ = ["Config", "DataConfig", "TrainConfig", "load_config", "Sequence", "ensure_dataset",
           "ensure_lut", "load_manifest", "prepare_sequence", "evaluate", "bilinear_baseline", "infer",
           "train", "unroll"]
