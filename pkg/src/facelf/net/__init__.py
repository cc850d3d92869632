from .model import FaceLFNet, NetConfig, euclidean_loss, layout
from .train import TrainConfig, TrainResult, TrainingDivergedError, infer_depthmaps, train

__all__ = ["FaceLFNet", "NetConfig", "TrainConfig", "TrainResult", "TrainingDivergedError",
           "euclidean_loss", "infer_depthmaps", "layout", "train"]
