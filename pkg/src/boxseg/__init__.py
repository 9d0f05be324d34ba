"""Box-supervised 3D instance segmentation on synthetic point clouds,
trained with an EMA teacher that labels box-overlap points."""
from .evaluation import MetricReport, evaluate
from .losses import LossWeights
from .model import ModelConfig, init_params
from .scene import SceneConfig, generate_scene, partition_regions
from .training import TrainConfig, train

__all__ = ["LossWeights", "MetricReport", "ModelConfig", "SceneConfig", "TrainConfig",
           "evaluate", "generate_scene", "init_params", "partition_regions", "train"]
__version__ = "0.1.0"
