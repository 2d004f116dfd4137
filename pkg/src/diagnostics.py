"""Descriptive statistics of a checkpoint's latent spaces and reconstructions.

Nothing here is a pass/fail test of a trained model: the report quantifies how
far the sampled style and content statistics are from the ideal and how well
images and latent codes survive a round trip.
"""

import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
import yaml

from . import functional as F
from .checkpoint import Checkpoint
from .config import Config
from .errors import ConfigError, NonFiniteError
from .matting import SparseSym, build_matting_laplacian, network_affine_loss
from .networks import ModelParams, content_encode, decode, encode, style_encode
from .rng import Site, stream
from .tensor import Tensor, no_grad
from .trainer import load_model

logger = logging.getLogger(__name__)

MAX_TRANSLATIONS = 16
MAX_WORKERS = 4

Encoder = Callable[[Tensor], Tuple[Tensor, Tensor]]
Decoder = Callable[[Tensor, Tensor], Tensor]


@dataclass
class Moments:
    """Sample mean vector and covariance matrix of a set of style codes."""
    n: int
    mean: List[float]
    cov: List[List[float]]

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "Moments":
        samples = np.asarray(samples, dtype=np.float64)
        return cls(
            n=int(samples.shape[0]),
            mean=samples.mean(axis=0).tolist(),
            cov=np.atleast_2d(np.cov(samples, rowvar=False)).tolist(),
        )

    @property
    def max_abs_mean(self) -> float:
        return float(np.max(np.abs(self.mean)))

    @property
    def max_cov_deviation(self) -> float:
        """Largest entry of |cov - I|, the distance to the standard Gaussian's covariance."""
        cov = np.asarray(self.cov)
        return float(np.max(np.abs(cov - np.eye(cov.shape[0]))))


@dataclass
class StateReport:
    step: int
    seed: int
    n_samples: int
    n_translations: int
    prior_1: Moments
    prior_2: Moments
    # Style codes re-encoded from translations into each domain
    style_1: Moments
    style_2: Moments
    content_mean_distance: float
    content_std_distance: float
    recon_x1: float
    recon_x2: float
    recon_c1: float
    recon_c2: float
    recon_s1: float
    recon_s2: float
    affine_x1: float
    affine_x2: float

    def scalars(self) -> Dict[str, float]:
        values = {
            "n_samples": float(self.n_samples),
            "n_translations": float(self.n_translations),
        }
        for label in ("prior_1", "prior_2", "style_1", "style_2"):
            moments: Moments = getattr(self, label)
            values[f"{label}_max_abs_mean"] = moments.max_abs_mean
            values[f"{label}_max_cov_deviation"] = moments.max_cov_deviation
        for name in ("content_mean_distance", "content_std_distance", "recon_x1", "recon_x2",
                     "recon_c1", "recon_c2", "recon_s1", "recon_s2", "affine_x1", "affine_x2"):
            values[name] = getattr(self, name)
        return values

    def check_finite(self) -> None:
        for name, value in self.scalars().items():
            if not math.isfinite(value):
                raise NonFiniteError(f"report entry {name} is not finite ({value})")

    def to_csv(self) -> str:
        lines = ["quantity,value"] + [f"{name},{value!r}" for name, value in self.scalars().items()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"Checkpoint step {self.step}, seed {self.seed}\n")
        out.write(f"Prior samples per domain: {self.n_samples}; translations per direction: "
                  f"{self.n_translations}\n\n")
        out.write("Style codes (distance to the standard Gaussian prior)\n")
        for label, title in (("prior_1", "prior, domain 1"), ("prior_2", "prior, domain 2"),
                             ("style_1", "re-encoded x2->1"), ("style_2", "re-encoded x1->2")):
            m: Moments = getattr(self, label)
            out.write(f"  {title:<18} n={m.n:<7} max|mean|={m.max_abs_mean:.4g}  "
                      f"max|cov-I|={m.max_cov_deviation:.4g}\n")
        out.write("\nContent codes, domain 1 vs domain 2\n")
        out.write(f"  channel mean distance {self.content_mean_distance:.4g}\n")
        out.write(f"  channel std distance  {self.content_std_distance:.4g}\n")
        out.write("\nReconstruction errors (mean absolute)\n")
        out.write(f"  image   x1 {self.recon_x1:.4g}  x2 {self.recon_x2:.4g}\n")
        out.write(f"  content c1 {self.recon_c1:.4g}  c2 {self.recon_c2:.4g}\n")
        out.write(f"  style   s1 {self.recon_s1:.4g}  s2 {self.recon_s2:.4g}\n")
        out.write("\nAffine losses of translations\n")
        out.write(f"  x1->2 {self.affine_x1:.4g}  x2->1 {self.affine_x2:.4g}\n")
        out.write("\n")
        out.write(self.to_csv())
        return out.getvalue()

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), default_flow_style=False, sort_keys=False)

    def save(self, path: str) -> str:
        """Write the text report to `path` and the full report as YAML next to it."""
        with open(path, "w") as f:
            f.write(self.to_text())
        yaml_path = os.path.splitext(path)[0] + ".yaml"
        with open(yaml_path, "w") as f:
            f.write(self.to_yaml())
        return path


def image_cycle_error(encoder: Encoder, decoder: Decoder, x: Tensor) -> float:
    """x -> (content, style) -> x, as a mean absolute error."""
    c, s = encoder(x)
    return float(F.l1_distance(decoder(c, s), x).data)


def latent_cycle_errors(
    encoder_dst: Encoder,
    decoder_dst: Decoder,
    content: Tensor,
    style: Tensor,
) -> Tuple[float, float, Tensor]:
    """(content, style) -> image in the destination domain -> (content, style).

    Returns the content error, the style error and the translated image.
    """
    translated = decoder_dst(content, style)
    c_back, s_back = encoder_dst(translated)
    return (
        float(F.l1_distance(c_back, content).data),
        float(F.l1_distance(s_back, F.reshape(style, s_back.shape)).data),
        translated,
    )


def _encoder(params: ModelParams, domain: int) -> Encoder:
    return lambda x: encode(params, x, domain)


def _decoder(params: ModelParams, domain: int) -> Decoder:
    return lambda c, s: decode(params, c, s, domain)


def _channel_moments(code: Tensor) -> Tuple[np.ndarray, np.ndarray]:
    data = code.data.astype(np.float64)
    return data.mean(axis=(0, 2, 3)), data.std(axis=(0, 2, 3))


def _prior_samples(seed: int, n_samples: int, style_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = stream(seed, 0, Site.DIAGNOSTICS)
    return rng.standard_normal((n_samples, style_dim)), rng.standard_normal((n_samples, style_dim))


def _translation_stats(
    params: ModelParams,
    c1: Tensor,
    c2: Tensor,
    s1: np.ndarray,
    s2: np.ndarray,
    M1: SparseSym,
    M2: SparseSym,
) -> Dict[str, object]:
    s1_t = Tensor(s1[None, :], dtype=np.float32)
    s2_t = Tensor(s2[None, :], dtype=np.float32)
    with no_grad():
        recon_c1, recon_s2, x12 = latent_cycle_errors(
            _encoder(params, 2), _decoder(params, 2), c1, s2_t)
        recon_c2, recon_s1, x21 = latent_cycle_errors(
            _encoder(params, 1), _decoder(params, 1), c2, s1_t)
        return {
            "style_1": style_encode(params, x21, 1).data[0].astype(np.float64),
            "style_2": style_encode(params, x12, 2).data[0].astype(np.float64),
            "recon_c1": recon_c1,
            "recon_c2": recon_c2,
            "recon_s1": recon_s1,
            "recon_s2": recon_s2,
            "affine_x1": float(network_affine_loss(M1, x12).data),
            "affine_x2": float(network_affine_loss(M2, x21).data),
        }


def measure_state(
    ckpt: Checkpoint,
    x1: Tensor,
    x2: Tensor,
    n_samples: int,
    seed: int,
    max_translations: int = MAX_TRANSLATIONS,
) -> StateReport:
    """Statistics of the model in `ckpt` evaluated on the image pair (x1, x2).

    Prior moments use all `n_samples` draws; translations, re-encoded styles,
    latent round trips and affine losses use the first `max_translations` of them.
    """
    if n_samples < 2:
        raise ConfigError(f"n_samples must be >= 2, got {n_samples}")
    if max_translations < 2:
        raise ConfigError(f"max_translations must be >= 2, got {max_translations}")
    params, config = load_model(ckpt)
    style_dim = config.arch.style_dim
    prior_1, prior_2 = _prior_samples(seed, n_samples, style_dim)
    n_translations = min(n_samples, max_translations)

    with ThreadPoolExecutor(max_workers=2) as pool:
        colors = [(x.data[0].astype(np.float64) + 1.0) * 0.5 for x in (x1, x2)]
        M1, M2 = pool.map(lambda img: build_matting_laplacian(img, config.matting), colors)

    with no_grad():
        c1 = content_encode(params, x1, 1)
        c2 = content_encode(params, x2, 2)
        recon_x1 = image_cycle_error(_encoder(params, 1), _decoder(params, 1), x1)
        recon_x2 = image_cycle_error(_encoder(params, 2), _decoder(params, 2), x2)
    mean_1, std_1 = _channel_moments(c1)
    mean_2, std_2 = _channel_moments(c2)

    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
        stats = list(pool.map(
            lambda i: _translation_stats(params, c1, c2, prior_1[i], prior_2[i], M1, M2),
            range(n_translations),
        ))
    logger.info("Evaluated %d translations per direction", n_translations)

    def average(key: str) -> float:
        return float(np.mean([s[key] for s in stats]))

    report = StateReport(
        step=ckpt.step,
        seed=seed,
        n_samples=n_samples,
        n_translations=n_translations,
        prior_1=Moments.from_samples(prior_1),
        prior_2=Moments.from_samples(prior_2),
        style_1=Moments.from_samples(np.stack([s["style_1"] for s in stats])),
        style_2=Moments.from_samples(np.stack([s["style_2"] for s in stats])),
        content_mean_distance=float(np.mean(np.abs(mean_1 - mean_2))),
        content_std_distance=float(np.mean(np.abs(std_1 - std_2))),
        recon_x1=recon_x1,
        recon_x2=recon_x2,
        recon_c1=average("recon_c1"),
        recon_c2=average("recon_c2"),
        recon_s1=average("recon_s1"),
        recon_s2=average("recon_s2"),
        affine_x1=average("affine_x1"),
        affine_x2=average("affine_x2"),
    )
    report.check_finite()
    return report


def prior_moments(seed: int, n_samples: int, style_dim: int = Config.STYLE_DIM) -> Tuple[Moments, Moments]:
    """Moments of the prior draws `measure_state` would use, without a model."""
    if n_samples < 2:
        raise ConfigError(f"n_samples must be >= 2, got {n_samples}")
    prior_1, prior_2 = _prior_samples(seed, n_samples, style_dim)
    return Moments.from_samples(prior_1), Moments.from_samples(prior_2)
