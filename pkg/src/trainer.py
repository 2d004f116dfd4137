"""Two-image bidirectional training and style translation."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from . import functional as F
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import Config, GanForm, StyleSource, TrainConfig
from .errors import ConfigError, NonFiniteError, ShapeError
from .image_io import load_image
from .losses import (
    LossReport,
    MetricsLog,
    gan_loss_log,
    gan_loss_lsgan,
    latent_recon_losses,
    total_generator_loss,
)
from .matting import SparseSym, build_matting_laplacian, network_affine_loss
from .networks import (
    DISCRIMINATOR_PREFIXES,
    GENERATOR_PREFIXES,
    ModelParams,
    StyleCode,
    content_encode,
    decode,
    discriminate,
    encode,
    init_params,
    params_from_arrays,
    style_encode,
)
from .optim import Adam
from .rng import Site, stream
from .tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


def sample_style_prior(rng: np.random.Generator, style_dim: int = Config.STYLE_DIM) -> StyleCode:
    """Style code drawn from the standard Gaussian prior."""
    return Tensor(rng.standard_normal(style_dim)[None, :], dtype=np.float32)


def prior_styles(seed: int, step: int, style_dim: int) -> Tuple[StyleCode, StyleCode]:
    """Prior style codes for domains 1 and 2 at one training step."""
    return (
        sample_style_prior(stream(seed, step, Site.PRIOR_STYLE_1), style_dim),
        sample_style_prior(stream(seed, step, Site.PRIOR_STYLE_2), style_dim),
    )


@dataclass
class TrainState:
    """Everything the training loop mutates."""
    config: TrainConfig
    params: ModelParams
    gen_opt: Adam
    dis_opt: Adam
    step: int = 0

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        return cls(
            config=config,
            params=init_params(config.arch, config.seed),
            gen_opt=Adam(config.adam),
            dis_opt=Adam(config.adam),
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, config: TrainConfig) -> "TrainState":
        if ckpt.seed != config.seed:
            raise ConfigError(f"checkpoint was trained with seed {ckpt.seed}, run uses seed {config.seed}")
        state = cls(
            config=config,
            params=params_from_arrays(config.arch, ckpt.params),
            gen_opt=Adam(config.adam),
            dis_opt=Adam(config.adam),
            step=ckpt.step,
        )
        state.gen_opt.load_state_arrays(ckpt.gen_opt_t, ckpt.gen_opt)
        state.dis_opt.load_state_arrays(ckpt.dis_opt_t, ckpt.dis_opt)
        return state

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            step=self.step,
            seed=self.config.seed,
            params=self.params.arrays(),
            gen_opt=self.gen_opt.state_arrays(),
            dis_opt=self.dis_opt.state_arrays(),
            gen_opt_t=self.gen_opt.t,
            dis_opt_t=self.dis_opt.t,
            config_echo=self.config.to_echo(),
        )


def _gan_objective(config: TrainConfig) -> Callable:
    if config.gan_form == GanForm.LOG:
        return partial(gan_loss_log, saturating=config.saturating)
    return gan_loss_lsgan


def _require_finite(name: str, value: Tensor) -> float:
    result = float(value.data)
    if not np.isfinite(result):
        raise NonFiniteError(f"loss term {name} is not finite ({result})")
    return result


def _zero_scalar() -> Tensor:
    return Tensor(0.0, dtype=np.float32)


def discriminator_step(
    state: TrainState,
    x1: Tensor,
    x2: Tensor,
    s1_prior: StyleCode,
    s2_prior: StyleCode,
) -> Tuple[float, float]:
    """Update both discriminators on translations of the current generators."""
    cfg = state.config
    params = state.params
    gan = _gan_objective(cfg)
    params.zero_grad()
    with no_grad():
        x21 = decode(params, content_encode(params, x2, 2), s1_prior, 1)
        x12 = decode(params, content_encode(params, x1, 1), s2_prior, 2)
    _, gan_d1 = gan(discriminate(params, x21, 1), discriminate(params, x1, 1))
    _, gan_d2 = gan(discriminate(params, x12, 2), discriminate(params, x2, 2))
    d1_value = _require_finite("gan_d1", gan_d1)
    d2_value = _require_finite("gan_d2", gan_d2)
    d_objective = F.add(gan_d1, gan_d2)
    if cfg.gan_form == GanForm.LOG:
        # The log-form term is maximized by the discriminator
        d_objective = F.scale(d_objective, -1.0)
    backward(d_objective)
    state.dis_opt.step(params.tensors(DISCRIMINATOR_PREFIXES))
    return d1_value, d2_value


def generator_step(
    state: TrainState,
    x1: Tensor,
    x2: Tensor,
    M1: Optional[SparseSym],
    M2: Optional[SparseSym],
    s1_prior: StyleCode,
    s2_prior: StyleCode,
) -> Tuple[Dict[str, Tensor], float]:
    """Update both auto-encoders; returns the loss terms and the weighted total.

    Gradients are left on the generator parameters.
    """
    cfg = state.config
    params = state.params
    gan = _gan_objective(cfg)
    params.zero_grad()
    with params.frozen(DISCRIMINATOR_PREFIXES):
        c1, s1 = encode(params, x1, 1)
        c2, s2 = encode(params, x2, 2)
        terms = {
            "recon_x1": F.l1_distance(decode(params, c1, s1, 1), x1),
            "recon_x2": F.l1_distance(decode(params, c2, s2, 2), x2),
        }
        terms["recon_c1"], terms["recon_s2"], x12 = latent_recon_losses(params, c1, s2_prior, 2)
        terms["recon_c2"], terms["recon_s1"], x21 = latent_recon_losses(params, c2, s1_prior, 1)
        terms["gan_g1"], _ = gan(discriminate(params, x21, 1))
        terms["gan_g2"], _ = gan(discriminate(params, x12, 2))
        if cfg.use_matting:
            terms["affine_x1"] = network_affine_loss(M1, x12)
            terms["affine_x2"] = network_affine_loss(M2, x21)
        else:
            terms["affine_x1"] = _zero_scalar()
            terms["affine_x2"] = _zero_scalar()
        total_g = total_generator_loss(terms, cfg.weights)
        total_g_value = _require_finite("total_g", total_g)
        backward(total_g)
    state.gen_opt.step(params.tensors(GENERATOR_PREFIXES))
    return terms, total_g_value


def train_step(
    state: TrainState,
    x1: Tensor,
    x2: Tensor,
    M1: Optional[SparseSym],
    M2: Optional[SparseSym],
) -> LossReport:
    """One discriminator update followed by one generator update, in both directions."""
    cfg = state.config
    step = state.step + 1
    s1_prior, s2_prior = prior_styles(cfg.seed, step, cfg.arch.style_dim)
    d1_value, d2_value = discriminator_step(state, x1, x2, s1_prior, s2_prior)
    terms, total_g_value = generator_step(state, x1, x2, M1, M2, s1_prior, s2_prior)
    state.params.zero_grad()
    state.step = step

    report = LossReport(
        gan_d1=d1_value,
        gan_d2=d2_value,
        total_g=total_g_value,
        total_d=d1_value + d2_value,
        **{name: float(t.data) for name, t in terms.items()},
    )
    report.check_finite()
    return report


def _laplacian_for(image: Tensor, config: TrainConfig) -> SparseSym:
    colors = (image.data[0].astype(np.float64) + 1.0) * 0.5
    return build_matting_laplacian(colors, config.matting)


def prepare_inputs(config: TrainConfig) -> Tuple[Tensor, Tensor, Optional[SparseSym], Optional[SparseSym]]:
    """Load both images and build their matting matrices, two at a time."""
    with ThreadPoolExecutor(max_workers=2) as pool:
        x1, x2 = pool.map(partial(load_image, target_size=config.image_size),
                          [config.content_path, config.style_path])
        if not config.use_matting:
            return x1, x2, None, None
        M1, M2 = pool.map(partial(_laplacian_for, config=config), [x1, x2])
    logger.info("Built matting Laplacians of order %d (%d and %d nonzeros)", M1.n, M1.nnz, M2.nnz)
    return x1, x2, M1, M2


def checkpoint_path(out_dir: str, step: int) -> str:
    return os.path.join(out_dir, Config.CHECKPOINT_PATTERN.format(step=step))


def train(config: TrainConfig, progress: bool = True) -> Tuple[Checkpoint, str]:
    """Run the training loop; returns the final checkpoint and where it was written."""
    os.makedirs(config.out_dir, exist_ok=True)
    x1, x2, M1, M2 = prepare_inputs(config)

    if config.resume:
        state = TrainState.from_checkpoint(load_checkpoint(config.resume), config)
        logger.info("Resumed from %s at step %d", config.resume, state.step)
    else:
        state = TrainState.fresh(config)
    metrics = MetricsLog(
        os.path.join(config.out_dir, Config.METRICS_FILE),
        resume_step=state.step if config.resume else None,
    )
    Config.save_run_config(config.out_dir, config)

    saved_step = None
    bar = tqdm(total=config.iterations, initial=min(state.step, config.iterations),
               disable=not progress, desc="train")
    while state.step < config.iterations:
        report = train_step(state, x1, x2, M1, M2)
        metrics.append(state.step, report)
        bar.update(1)
        bar.set_postfix(total_g=f"{report.total_g:.4g}", total_d=f"{report.total_d:.4g}")
        logger.debug("step %d: %s", state.step, report.as_dict())
        if state.step % config.checkpoint_every == 0 or state.step == config.iterations:
            save_checkpoint(checkpoint_path(config.out_dir, state.step), state.to_checkpoint())
            saved_step = state.step
    bar.close()

    ckpt = state.to_checkpoint()
    path = checkpoint_path(config.out_dir, state.step)
    if saved_step != state.step:
        save_checkpoint(path, ckpt)
    return ckpt, path


# ---------------------------------------------------------------------------
# Translation
# ---------------------------------------------------------------------------

def load_model(ckpt: Checkpoint) -> Tuple[ModelParams, TrainConfig]:
    config = TrainConfig.from_echo(ckpt.config_echo)
    return params_from_arrays(config.arch, ckpt.params), config


def _direction_domains(direction: str) -> Tuple[int, int]:
    if direction not in ("12", "21"):
        raise ConfigError(f"direction must be '12' or '21', got {direction!r}")
    return int(direction[0]), int(direction[1])


def translate(
    ckpt: Checkpoint,
    content_image: Tensor,
    source: StyleSource,
    style_image: Optional[Tensor] = None,
    style_seed: int = 0,
    direction: str = "12",
) -> Tensor:
    """Decode the content code of `content_image` with a style from an image or the prior."""
    params, config = load_model(ckpt)
    source_domain, target_domain = _direction_domains(direction)
    size = config.image_size
    if content_image.shape[2:] != (size, size):
        raise ShapeError(f"content image is {content_image.shape[2:]}, model was trained at {size}x{size}")
    with no_grad():
        c = content_encode(params, content_image, source_domain)
        if source == StyleSource.IMAGE:
            if style_image is None:
                raise ConfigError("style source 'image' needs a style image")
            s = style_encode(params, style_image, target_domain)
        else:
            s = sample_style_prior(stream(style_seed, 0, Site.TRANSLATE), config.arch.style_dim)
        return decode(params, c, s, target_domain)


def translate_samples(
    ckpt: Checkpoint,
    content_image: Tensor,
    style_seed: int,
    n_samples: int,
    direction: str = "12",
) -> List[Tensor]:
    """`n_samples` translations of one content image, each with its own prior style code."""
    params, config = load_model(ckpt)
    source_domain, target_domain = _direction_domains(direction)
    with no_grad():
        c = content_encode(params, content_image, source_domain)
        return [
            decode(params, c, sample_style_prior(stream(style_seed, i, Site.TRANSLATE),
                                                 config.arch.style_dim), target_domain)
            for i in range(n_samples)
        ]
