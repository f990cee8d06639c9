"""Vectorized bird's-eye-view map construction from multi-view cameras,
robust to missing views.

The package generates synthetic multi-camera road scenes, trains a
transformer map detector on them with its own numpy-based reverse-mode
autodiff, reconstructs the features of missing camera views from the
surrounding ring, and evaluates Chamfer-distance average precision
under every view-dropout scenario.
"""

from .config import ModelConfig, TrainConfig
from .dataset import Dataset, generate_dataset
from .errors import (BevMapError, CheckpointError, ContractViolation,
                     DatasetError, TrainingAborted)
from .evaluation import evaluate_model, mean_map_by_k, mean_resilience
from .geometry import BevGrid, CameraRig
from .model import MapModel
from .scene import GeneratorConfig, MapElement, Scene, generate_scene
from .training import TrainResult, load_model_from_checkpoint, train_model

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig",
    "Dataset", "generate_dataset",
    "BevMapError", "CheckpointError", "ContractViolation", "DatasetError",
    "TrainingAborted",
    "evaluate_model", "mean_map_by_k", "mean_resilience",
    "BevGrid", "CameraRig",
    "MapModel",
    "GeneratorConfig", "MapElement", "Scene", "generate_scene",
    "TrainResult", "load_model_from_checkpoint", "train_model",
    "__version__",
]
