"""Reconstruction, adversarial and total losses plus the per-iteration metrics log."""

import csv
import math
import os
from dataclasses import dataclass, fields
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from . import functional as F
from .config import LossWeights
from .errors import NonFiniteError
from .networks import (
    ContentCode,
    DiscOutput,
    ModelParams,
    StyleCode,
    content_encode,
    decode,
    encode,
    style_encode,
)
from .tensor import Tensor

PROB_CLAMP = 1e-7


@dataclass
class LossReport:
    """One value per term of the total objective, plus both totals."""
    recon_x1: float = 0.0
    recon_x2: float = 0.0
    recon_c1: float = 0.0
    recon_c2: float = 0.0
    recon_s1: float = 0.0
    recon_s2: float = 0.0
    gan_g1: float = 0.0
    gan_g2: float = 0.0
    gan_d1: float = 0.0
    gan_d2: float = 0.0
    affine_x1: float = 0.0
    affine_x2: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in self.columns()}

    def check_finite(self) -> None:
        for name, value in self.as_dict().items():
            if not math.isfinite(value):
                raise NonFiniteError(f"loss term {name} is not finite ({value})")

    def generator_total(self, w: LossWeights) -> float:
        """Weighted sum of the generator-side terms, recomputed from the report."""
        return (
            self.gan_g1 + self.gan_g2
            + w.lambda_x * (self.recon_x1 + self.recon_x2)
            + w.lambda_c * (self.recon_c1 + self.recon_c2)
            + w.lambda_s * (self.recon_s1 + self.recon_s2)
            + w.lambda_a * (self.affine_x1 + self.affine_x2)
        )


GENERATOR_TERMS = (
    "gan_g1", "gan_g2", "recon_x1", "recon_x2", "recon_c1", "recon_c2",
    "recon_s1", "recon_s2", "affine_x1", "affine_x2",
)


# ---------------------------------------------------------------------------
# Reconstruction terms
# ---------------------------------------------------------------------------

def image_recon_loss(params: ModelParams, x: Tensor, domain: int) -> Tensor:
    """Mean L1 between an image and its reconstruction through its own auto-encoder."""
    c, s = encode(params, x, domain)
    return F.l1_distance(decode(params, c, s, domain), x)


def latent_recon_losses(
    params: ModelParams,
    content: ContentCode,
    style: StyleCode,
    target_domain: int,
) -> Tuple[Tensor, Tensor, Tensor]:
    """Translate `content` into `target_domain` with `style`, then re-encode it.

    With content c1 and target domain 2 this gives the content term for c1 and the
    style term for s2; call with (c2, s1, 1) for the mirrored pair. The translated
    image is returned as well so callers can score it.
    """
    translated = decode(params, content, style, target_domain)
    content_back = content_encode(params, translated, target_domain)
    style_back = style_encode(params, translated, target_domain)
    content_term = F.l1_distance(content_back, content)
    style_term = F.l1_distance(style_back, F.reshape(style, style_back.shape))
    return content_term, style_term, translated


# ---------------------------------------------------------------------------
# Adversarial terms
# ---------------------------------------------------------------------------

def _mean_over_scales(terms: List[Tensor]) -> Tensor:
    return F.scale(F.total(terms), 1.0 / len(terms))


def gan_loss_lsgan(
    d_out_fake: DiscOutput,
    d_out_real: Optional[DiscOutput] = None,
) -> Tuple[Tensor, Optional[Tensor]]:
    """Least-squares adversarial terms, averaged over scales.

    g_term pulls fake scores to 1; d_term pulls real scores to 1 and fake scores to 0.
    d_term is None when no real scores are given.
    """
    g_term = _mean_over_scales([F.mse_to(fake, 1.0) for fake in d_out_fake])
    if d_out_real is None:
        return g_term, None
    d_term = _mean_over_scales([
        F.add(F.mse_to(real, 1.0), F.mse_to(fake, 0.0))
        for fake, real in zip(d_out_fake, d_out_real)
    ])
    return g_term, d_term


def _log_prob(scores: Tensor, complement: bool = False) -> Tensor:
    p = F.sigmoid(scores)
    if complement:
        p = 1.0 - p
    return F.log(F.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def gan_loss_log(
    d_out_fake: DiscOutput,
    d_out_real: Optional[DiscOutput] = None,
    saturating: bool = False,
) -> Tuple[Tensor, Optional[Tensor]]:
    """Log-likelihood adversarial terms on sigmoid-squashed scores, averaged over scales.

    d_term = E[log(1 - D(G))] + E[log D(x)] is the quantity the discriminator
    maximizes (it is <= 0). g_term is -E[log D(G)] by default, or the literal
    E[log(1 - D(G))] when `saturating`.
    """
    if saturating:
        g_term = _mean_over_scales([F.mean(_log_prob(fake, complement=True)) for fake in d_out_fake])
    else:
        g_term = _mean_over_scales([F.scale(F.mean(_log_prob(fake)), -1.0) for fake in d_out_fake])
    if d_out_real is None:
        return g_term, None
    d_term = _mean_over_scales([
        F.add(F.mean(_log_prob(fake, complement=True)), F.mean(_log_prob(real)))
        for fake, real in zip(d_out_fake, d_out_real)
    ])
    return g_term, d_term


# ---------------------------------------------------------------------------
# Total objective
# ---------------------------------------------------------------------------

Term = Union[Tensor, float]


def _as_scalar(value: Term) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.float64(value), dtype=np.float64)


def total_generator_loss(terms: Mapping[str, Term], w: LossWeights) -> Tensor:
    """gan_g1 + gan_g2 + lx (x1 + x2) + lc (c1 + c2) + ls (s1 + s2) + lA (affine1 + affine2)."""
    scalars = {}
    for name in GENERATOR_TERMS:
        t = _as_scalar(terms[name])
        value = float(t.data)
        if not math.isfinite(value):
            raise NonFiniteError(f"loss term {name} is not finite ({value})")
        scalars[name] = t

    def pair(a: str, b: str, weight: float) -> Tensor:
        return F.scale(F.add(scalars[a], scalars[b]), weight)

    return F.total([
        scalars["gan_g1"],
        scalars["gan_g2"],
        pair("recon_x1", "recon_x2", w.lambda_x),
        pair("recon_c1", "recon_c2", w.lambda_c),
        pair("recon_s1", "recon_s2", w.lambda_s),
        pair("affine_x1", "affine_x2", w.lambda_a),
    ])


# ---------------------------------------------------------------------------
# Metrics log
# ---------------------------------------------------------------------------

class MetricsLog:
    """Comma-separated log: a header row, then step and every report term per iteration."""

    def __init__(self, path: str, resume_step: Optional[int] = None):
        self.path = path
        header = ["step"] + LossReport.columns()
        if resume_step is None or not os.path.exists(path):
            with open(path, "w", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(header)
        else:
            self._truncate(resume_step, header)

    def _truncate(self, resume_step: int, header: List[str]) -> None:
        with open(self.path, newline="") as f:
            rows = list(csv.reader(f))
        kept = [r for r in rows[1:] if r and int(r[0]) <= resume_step]
        with open(self.path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(kept)

    def append(self, step: int, report: LossReport) -> None:
        with open(self.path, "a", newline="") as f:
            csv.writer(f, lineterminator="\n").writerow(
                [step] + [repr(v) for v in report.as_dict().values()]
            )

    @staticmethod
    def read(path: str) -> List[Dict[str, float]]:
        with open(path, newline="") as f:
            return [
                {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(f)
            ]
