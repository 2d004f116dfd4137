"""Auto-encoders (content encoder, style encoder, decoder) and multi-scale discriminators.

Parameters live in one flat `ModelParams` mapping. Names are dotted paths such as
``gen1.content.res0.conv1.weight``; domain i owns the ``gen{i}`` and ``dis{i}``
prefixes. The same names are the record names in checkpoints.
"""

import logging
from collections import OrderedDict
from contextlib import contextmanager
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from . import functional as F
from .config import ArchConfig
from .errors import ShapeError
from .rng import Site, stream
from .tensor import Tensor

logger = logging.getLogger(__name__)

GENERATOR_PREFIXES = ("gen1", "gen2")
DISCRIMINATOR_PREFIXES = ("dis1", "dis2")
DOMAINS = (1, 2)
LEAKY_SLOPE = 0.2

# A content code is a 1 x 4b x H/4 x W/4 tensor, a style code a 1 x style_dim tensor,
# and a discriminator output one score map per scale.
ContentCode = Tensor
StyleCode = Tensor
DiscOutput = List[Tensor]


class ModelParams:
    """Named learnable tensors of both auto-encoders and both discriminators."""

    def __init__(self, tensors: "OrderedDict[str, Tensor]", arch: ArchConfig):
        self._tensors = tensors
        self.arch = arch

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def tensors(self, prefixes: Sequence[str] = ()) -> List[Tensor]:
        """Parameters under any of `prefixes` (all when empty), in registration order."""
        return [t for name, t in self._tensors.items()
                if not prefixes or name.split(".", 1)[0] in prefixes]

    def count(self, prefixes: Sequence[str] = ()) -> int:
        return int(sum(t.size for t in self.tensors(prefixes)))

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        missing = [n for n in self._tensors if n not in arrays]
        if missing:
            raise ShapeError(f"missing parameters: {', '.join(missing[:5])}")
        for name, t in self._tensors.items():
            if arrays[name].shape != t.shape:
                raise ShapeError(f"{name}: stored shape {arrays[name].shape}, expected {t.shape}")
            t.data = np.array(arrays[name], dtype=t.dtype)

    @contextmanager
    def frozen(self, prefixes: Sequence[str]) -> Iterator[None]:
        """Stop gradients into the given parameter groups for the duration."""
        group = self.tensors(prefixes)
        for t in group:
            t.requires_grad = False
        try:
            yield
        finally:
            for t in group:
                t.requires_grad = True


# ---------------------------------------------------------------------------
# Parameter layout
# ---------------------------------------------------------------------------

def _conv_shapes(name: str, c_in: int, c_out: int, kernel: int) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(f"{name}.weight", (c_out, c_in, kernel, kernel)), (f"{name}.bias", (c_out,))]


def _norm_shapes(name: str, channels: int) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(f"{name}.gamma", (channels,)), (f"{name}.beta", (channels,))]


def _fc_shapes(name: str, n_in: int, n_out: int) -> List[Tuple[str, Tuple[int, ...]]]:
    return [(f"{name}.weight", (n_out, n_in)), (f"{name}.bias", (n_out,))]


def adain_param_count(arch: ArchConfig) -> int:
    """Scale and shift for every channel of both convolutions of every decoder residual block."""
    return arch.n_res_blocks * 2 * arch.content_channels * 2


def parameter_shapes(arch: ArchConfig) -> "OrderedDict[str, Tuple[int, ...]]":
    b = arch.base_channels
    dim = arch.content_channels
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    for domain in DOMAINS:
        g = f"gen{domain}"
        # Content encoder
        shapes += _conv_shapes(f"{g}.content.conv0", 3, b, 7) + _norm_shapes(f"{g}.content.norm0", b)
        shapes += _conv_shapes(f"{g}.content.conv1", b, 2 * b, 4) + _norm_shapes(f"{g}.content.norm1", 2 * b)
        shapes += _conv_shapes(f"{g}.content.conv2", 2 * b, dim, 4) + _norm_shapes(f"{g}.content.norm2", dim)
        for r in range(arch.n_res_blocks):
            for k in range(2):
                shapes += _conv_shapes(f"{g}.content.res{r}.conv{k}", dim, dim, 3)
                shapes += _norm_shapes(f"{g}.content.res{r}.norm{k}", dim)
        # Style encoder
        widths = [3, b, 2 * b, dim, dim, dim]
        kernels = [7, 4, 4, 4, 4]
        for i, kernel in enumerate(kernels):
            shapes += _conv_shapes(f"{g}.style.conv{i}", widths[i], widths[i + 1], kernel)
        shapes += _fc_shapes(f"{g}.style.fc", dim, arch.style_dim)
        # AdaIN parameter MLP
        shapes += _fc_shapes(f"{g}.mlp.fc0", arch.style_dim, arch.mlp_dim)
        shapes += _fc_shapes(f"{g}.mlp.fc1", arch.mlp_dim, arch.mlp_dim)
        shapes += _fc_shapes(f"{g}.mlp.fc2", arch.mlp_dim, adain_param_count(arch))
        # Decoder
        for r in range(arch.n_res_blocks):
            for k in range(2):
                shapes += _conv_shapes(f"{g}.dec.res{r}.conv{k}", dim, dim, 3)
        shapes += _conv_shapes(f"{g}.dec.up0", dim, 2 * b, 5)
        shapes += _conv_shapes(f"{g}.dec.up1", 2 * b, b, 5)
        shapes += _conv_shapes(f"{g}.dec.out", b, 3, 7)
    for domain in DOMAINS:
        for scale in range(arch.n_scales):
            d = f"dis{domain}.scale{scale}"
            widths = [3, b, 2 * b, 4 * b, 8 * b]
            for i in range(4):
                shapes += _conv_shapes(f"{d}.conv{i}", widths[i], widths[i + 1], 4)
            shapes += _conv_shapes(f"{d}.out", 8 * b, 1, 1)
    return OrderedDict(shapes)


def init_params(arch: ArchConfig, seed: int) -> ModelParams:
    """Fan-in scaled Gaussian weights, zero biases and unit norm scales."""
    rng = stream(seed, 0, Site.INIT)
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name, dtype=np.float32)
    params = ModelParams(tensors, arch)
    logger.info(
        "Initialized %s parameters (generators %s, discriminators %s)",
        f"{params.count():,}", f"{params.count(GENERATOR_PREFIXES):,}",
        f"{params.count(DISCRIMINATOR_PREFIXES):,}",
    )
    return params


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _conv(params: ModelParams, name: str, x: Tensor, stride: int, padding: int, pad_mode: str) -> Tensor:
    return F.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride, padding, pad_mode)


def _norm(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return F.instance_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def _fc(params: ModelParams, name: str, x: Tensor) -> Tensor:
    return F.fully_connected(x, params[f"{name}.weight"], params[f"{name}.bias"])


def _check_image(x: Tensor, multiple: int, what: str) -> None:
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ShapeError(f"{what}: expected a 1 x 3 x H x W image, got {x.shape}")
    h, w = x.shape[2:]
    if h % multiple or w % multiple:
        raise ShapeError(f"{what}: height {h} and width {w} must be divisible by {multiple}")


def residual_block(params: ModelParams, name: str, x: Tensor, norms) -> Tensor:
    """conv -> norm -> relu -> conv -> norm, plus the identity skip.

    `norms` maps the convolution index (0 or 1) and its output to the normalized output.
    """
    y = _conv(params, f"{name}.conv0", x, 1, 1, "reflect")
    y = F.relu(norms(0, y))
    y = _conv(params, f"{name}.conv1", y, 1, 1, "reflect")
    y = norms(1, y)
    return F.add(x, y)


# ---------------------------------------------------------------------------
# Encoders and decoder
# ---------------------------------------------------------------------------

def content_encode(params: ModelParams, x: Tensor, domain: int) -> ContentCode:
    _check_image(x, 4, "content_encode")
    g = f"gen{domain}.content"
    y = F.relu(_norm(params, f"{g}.norm0", _conv(params, f"{g}.conv0", x, 1, 3, "reflect")))
    y = F.relu(_norm(params, f"{g}.norm1", _conv(params, f"{g}.conv1", y, 2, 1, "reflect")))
    y = F.relu(_norm(params, f"{g}.norm2", _conv(params, f"{g}.conv2", y, 2, 1, "reflect")))
    for r in range(params.arch.n_res_blocks):
        block = f"{g}.res{r}"
        y = residual_block(params, block, y, lambda k, t, block=block: _norm(params, f"{block}.norm{k}", t))
    return y


def style_encode(params: ModelParams, x: Tensor, domain: int) -> StyleCode:
    _check_image(x, 16, "style_encode")
    g = f"gen{domain}.style"
    y = F.relu(_conv(params, f"{g}.conv0", x, 1, 3, "reflect"))
    for i in range(1, 5):
        y = F.relu(_conv(params, f"{g}.conv{i}", y, 2, 1, "reflect"))
    return _fc(params, f"{g}.fc", F.global_avg_pool(y))


def encode(params: ModelParams, x: Tensor, domain: int) -> Tuple[ContentCode, StyleCode]:
    return content_encode(params, x, domain), style_encode(params, x, domain)


def mlp_adain_params(params: ModelParams, s: StyleCode, domain: int) -> Tensor:
    """Style code -> flat vector of per-channel AdaIN scales and shifts.

    Layout: for residual block r and convolution k, the scales of all channels
    followed by their shifts.
    """
    if s.size != params.arch.style_dim:
        raise ShapeError(f"style code must have {params.arch.style_dim} values, got {s.shape}")
    g = f"gen{domain}.mlp"
    s = F.reshape(s, (1, params.arch.style_dim))
    h = F.relu(_fc(params, f"{g}.fc0", s))
    h = F.relu(_fc(params, f"{g}.fc1", h))
    return _fc(params, f"{g}.fc2", h)


def decode(params: ModelParams, c: ContentCode, s: StyleCode, domain: int) -> Tensor:
    """Image in [-1, 1] from a content code and a style code."""
    arch = params.arch
    dim = arch.content_channels
    if c.ndim != 4 or c.shape[1] != dim:
        raise ShapeError(f"content code must be 1 x {dim} x h x w, got {c.shape}")
    adain_params = mlp_adain_params(params, s, domain)
    g = f"gen{domain}.dec"

    def adain_norm(block: int):
        def norm(k: int, t: Tensor) -> Tensor:
            start = (block * 2 + k) * 2 * dim
            gamma = F.slice_last(adain_params, start, start + dim)
            beta = F.slice_last(adain_params, start + dim, start + 2 * dim)
            return F.adain(t, gamma, beta)
        return norm

    y = c
    for r in range(arch.n_res_blocks):
        y = residual_block(params, f"{g}.res{r}", y, adain_norm(r))
    y = F.relu(_conv(params, f"{g}.up0", F.upsample_nearest(y, 2), 1, 2, "reflect"))
    y = F.relu(_conv(params, f"{g}.up1", F.upsample_nearest(y, 2), 1, 2, "reflect"))
    return F.tanh(_conv(params, f"{g}.out", y, 1, 3, "reflect"))


# ---------------------------------------------------------------------------
# Discriminators
# ---------------------------------------------------------------------------

def discriminate(params: ModelParams, x: Tensor, domain: int) -> DiscOutput:
    """LSGAN score map per scale; scale k sees the input average-pooled k times."""
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"discriminate: expected a batch x 3 x H x W image, got {x.shape}")
    n_scales = params.arch.n_scales
    smallest = min(x.shape[2:]) // 2 ** (n_scales - 1)
    if smallest < 16:
        raise ShapeError(
            f"discriminate: {x.shape[2]}x{x.shape[3]} input is too small for {n_scales} scales "
            f"(coarsest scale would be {smallest}px, need 16)"
        )
    outputs = []
    for scale in range(n_scales):
        d = f"dis{domain}.scale{scale}"
        y = x
        for i in range(4):
            y = F.leaky_relu(_conv(params, f"{d}.conv{i}", y, 2, 1, "zero"), LEAKY_SLOPE)
        outputs.append(_conv(params, f"{d}.out", y, 1, 0, "zero"))
        if scale + 1 < n_scales:
            x = F.avg_pool2d(x, 3, 2, 1)
    return outputs


def params_from_arrays(arch: ArchConfig, arrays: Dict[str, np.ndarray]) -> ModelParams:
    """Model parameters restored from stored arrays, validated against the layout of `arch`."""
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, shape in parameter_shapes(arch).items():
        tensors[name] = Tensor(np.zeros(shape), requires_grad=True, name=name, dtype=np.float32)
    params = ModelParams(tensors, arch)
    params.load_arrays(arrays)
    return params
