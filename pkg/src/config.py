"""Configuration settings for the image-pair translation application."""
import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import yaml

from .errors import ConfigError


class GanForm(Enum):
    """Adversarial objective variants."""
    LSGAN = "lsgan"
    LOG = "log"


class Precision(Enum):
    """Floating-point modes for tensor computation."""
    TRAIN32 = "train32"
    CHECK64 = "check64"


class StyleSource(Enum):
    """Where a translation takes its style code from."""
    IMAGE = "image"
    PRIOR = "prior"


class Config:
    """Default settings for the application."""
    # Loss weights
    LAMBDA_X = 10.0
    LAMBDA_C = 1.0
    LAMBDA_S = 1.0
    LAMBDA_A = 1e4

    # Optimizer settings
    ADAM_LR = 1e-4
    ADAM_BETA1 = 0.5
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8

    # Matting Laplacian settings
    MATTING_EPS = 1e-5
    MATTING_RADIUS = 1

    # Architecture settings
    IMAGE_SIZE = 256
    STYLE_DIM = 8
    BASE_CHANNELS = 64
    MLP_DIM = 256
    N_RES_BLOCKS = 4
    FULL_SCALE_DISCRIMINATORS = 3
    DESK_SCALE_DISCRIMINATORS = 1

    # Training settings
    ITERATIONS = 500
    SEED = 0
    CHECKPOINT_EVERY = 100
    DESK_IMAGE_SIZE = 32

    # Output settings
    METRICS_FILE = "metrics.csv"
    RUN_CONFIG_FILE = "run_config.yaml"
    CHECKPOINT_PATTERN = "checkpoint_{step:06d}.ssit"

    @classmethod
    def default_scales(cls, image_size: int) -> int:
        """Discriminator scale count for an image size."""
        if image_size >= 256:
            return cls.FULL_SCALE_DISCRIMINATORS
        return cls.DESK_SCALE_DISCRIMINATORS

    @classmethod
    def save_run_config(cls, out_dir: str, train_config: "TrainConfig") -> str:
        """Save a human-readable echo of the run configuration."""
        path = os.path.join(out_dir, cls.RUN_CONFIG_FILE)
        with open(path, "w") as f:
            yaml.safe_dump(train_config.to_dict(include_location=False), f,
                           default_flow_style=False, sort_keys=True)
        return path


@dataclass
class LossWeights:
    """Weights of the total objective."""
    lambda_x: float = Config.LAMBDA_X
    lambda_c: float = Config.LAMBDA_C
    lambda_s: float = Config.LAMBDA_S
    lambda_a: float = Config.LAMBDA_A

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ConfigError(f"{name} must be nonnegative, got {value}")


@dataclass
class MattingConfig:
    """Window radius and regularization of the matting Laplacian."""
    window_radius: int = Config.MATTING_RADIUS
    eps: float = Config.MATTING_EPS

    def __post_init__(self):
        if self.window_radius < 1:
            raise ConfigError(f"window_radius must be >= 1, got {self.window_radius}")
        if not self.eps > 0:
            raise ConfigError(f"matting eps must be positive, got {self.eps}")

    @property
    def window_size(self) -> int:
        return (2 * self.window_radius + 1) ** 2


@dataclass
class ArchConfig:
    """Layer widths and counts of the auto-encoders and discriminators."""
    image_size: int = Config.IMAGE_SIZE
    style_dim: int = Config.STYLE_DIM
    base_channels: int = Config.BASE_CHANNELS
    mlp_dim: int = Config.MLP_DIM
    n_res_blocks: int = Config.N_RES_BLOCKS
    n_scales: Optional[int] = None

    def __post_init__(self):
        if self.image_size % 16 != 0 or self.image_size <= 0:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if self.n_scales is None:
            self.n_scales = Config.default_scales(self.image_size)
        if self.n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {self.n_scales}")
        if self.image_size // 2 ** (self.n_scales - 1) < 16:
            raise ConfigError(
                f"{self.n_scales} discriminator scales do not fit a {self.image_size}px image"
            )

    @property
    def content_channels(self) -> int:
        return self.base_channels * 4


@dataclass
class AdamConfig:
    """Adam hyperparameters."""
    lr: float = Config.ADAM_LR
    beta1: float = Config.ADAM_BETA1
    beta2: float = Config.ADAM_BETA2
    eps: float = Config.ADAM_EPS


@dataclass
class TrainConfig:
    """Everything that determines a training run."""
    content_path: str = ""
    style_path: str = ""
    out_dir: str = "runs"
    iterations: int = Config.ITERATIONS
    seed: int = Config.SEED
    checkpoint_every: int = Config.CHECKPOINT_EVERY
    gan_form: GanForm = GanForm.LSGAN
    saturating: bool = False
    use_matting: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    matting: MattingConfig = field(default_factory=MattingConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    resume: Optional[str] = None

    # Fields that say where a run lives rather than what it computes
    LOCATION_FIELDS = ("out_dir", "resume")

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    @property
    def image_size(self) -> int:
        return self.arch.image_size

    def to_dict(self, include_location: bool = True) -> Dict[str, Any]:
        data = asdict(self)
        data["gan_form"] = self.gan_form.value
        if not include_location:
            for name in self.LOCATION_FIELDS:
                data.pop(name, None)
        return data

    def to_echo(self) -> str:
        """Canonical JSON of the fields that determine the computation."""
        return json.dumps(self.to_dict(include_location=False), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_echo(cls, text: str, **location: Any) -> "TrainConfig":
        data = json.loads(text)
        return cls(
            content_path=data["content_path"],
            style_path=data["style_path"],
            iterations=data["iterations"],
            seed=data["seed"],
            checkpoint_every=data["checkpoint_every"],
            gan_form=GanForm(data["gan_form"]),
            saturating=data["saturating"],
            use_matting=data["use_matting"],
            weights=LossWeights(**data["weights"]),
            matting=MattingConfig(**data["matting"]),
            arch=ArchConfig(**data["arch"]),
            adam=AdamConfig(**data["adam"]),
            **location,
        )
