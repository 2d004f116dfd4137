"""Semi-supervised photorealistic translation between a pair of images."""

from .config import ArchConfig, Config, GanForm, LossWeights, MattingConfig, TrainConfig
from .matting import SparseSym, affine_loss, build_matting_laplacian
from .tensor import Tensor, backward, no_grad
from .trainer import TrainState, train, train_step, translate, translate_samples

__all__ = [
    "ArchConfig", "Config", "GanForm", "LossWeights", "MattingConfig", "TrainConfig",
    "SparseSym", "affine_loss", "build_matting_laplacian",
    "Tensor", "backward", "no_grad",
    "TrainState", "train", "train_step", "translate", "translate_samples",
]
