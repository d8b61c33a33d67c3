"""Segment-wise multi-rate CSI compression on a small numpy network core."""
from .config import ConfigError, RunConfig, load_config, parse_config
from .scenet import MultiRateOutput, SCEnet, SCEnetConfig
from .training import Checkpoint, TrainConfig, TrainReport, train, weighted_loss

__all__ = [
    "Checkpoint", "ConfigError", "MultiRateOutput", "RunConfig", "SCEnet", "SCEnetConfig",
    "TrainConfig", "TrainReport", "load_config", "parse_config", "train", "weighted_loss",
]
__version__ = "0.1.0"
