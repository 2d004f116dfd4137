"""Shared fixtures: seeded generators, tiny image files and a small architecture."""

import os

import numpy as np
import pytest

from src.config import ArchConfig, LossWeights, TrainConfig
from src.image_io import write_ppm

TINY_SIZE = 16


def tiny_arch(**overrides) -> ArchConfig:
    """Narrow 16px model that trains a step in well under a second."""
    values = dict(image_size=TINY_SIZE, base_channels=2, mlp_dim=8, n_res_blocks=1)
    values.update(overrides)
    return ArchConfig(**values)


def smooth_pixels(rng: np.random.Generator, size: int) -> np.ndarray:
    """Color gradient plus noise, so every matting window has a nondegenerate covariance."""
    y, x = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = np.stack([x, y, 0.5 * (x + y)], axis=-1) * 200.0 + 20.0
    noisy = base + rng.uniform(-15.0, 15.0, size=base.shape)
    return np.clip(np.round(noisy), 0, 255).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def image_pair(tmp_path):
    """Paths of a content and a style image at the tiny training size."""
    gen = np.random.default_rng(42)
    content = write_ppm(str(tmp_path / "content.ppm"), smooth_pixels(gen, TINY_SIZE))
    style = write_ppm(str(tmp_path / "style.ppm"), smooth_pixels(gen, TINY_SIZE)[::-1].copy())
    return content, style


@pytest.fixture
def make_config(image_pair, tmp_path):
    """Factory for small training configs writing under tmp_path."""
    content, style = image_pair

    def make(out: str = "run", **overrides) -> TrainConfig:
        values = dict(
            content_path=content,
            style_path=style,
            out_dir=os.path.join(str(tmp_path), out),
            iterations=2,
            checkpoint_every=100,
            arch=tiny_arch(),
            weights=LossWeights(lambda_a=1.0),
        )
        values.update(overrides)
        return TrainConfig(**values)

    return make
