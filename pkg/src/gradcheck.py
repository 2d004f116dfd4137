"""Finite-difference verification of every differentiable operation."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .config import MattingConfig, Precision
from .errors import ConfigError
from .matting import affine_loss, build_matting_laplacian
from .tensor import Tensor, backward, no_grad, precision

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
TOLERANCE = 1e-5
INSTANCES_PER_OP = 3
# Smallest distance random inputs keep from a kink or a clip bound
KINK_MARGIN = 0.1

Forward = Callable[[Sequence[Tensor]], Tensor]
Builder = Callable[[np.random.Generator], Tuple[Forward, List[np.ndarray]]]


@dataclass
class GradCheckResult:
    op: str
    instance: int
    shapes: List[Tuple[int, ...]]
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _away_from_zero(rng: np.random.Generator, shape: Tuple[int, ...], high: float = 2.0) -> np.ndarray:
    magnitude = rng.uniform(KINK_MARGIN, high, size=shape)
    return magnitude * rng.choice([-1.0, 1.0], size=shape)


def _image_shape(rng: np.random.Generator, min_hw: int = 3, max_hw: int = 6) -> Tuple[int, int, int, int]:
    return (
        int(rng.integers(1, 3)),
        int(rng.integers(1, 4)),
        int(rng.integers(min_hw, max_hw + 1)),
        int(rng.integers(min_hw, max_hw + 1)),
    )


# ---------------------------------------------------------------------------
# Case builders, one per operation
# ---------------------------------------------------------------------------

def _binary(op: Callable[[Tensor, Tensor], Tensor]) -> Builder:
    def build(rng):
        shape = _image_shape(rng)
        return (lambda t: op(t[0], t[1])), [rng.standard_normal(shape), rng.standard_normal(shape)]
    return build


def _unary(op: Callable[[Tensor], Tensor], sample: Callable[[np.random.Generator, tuple], np.ndarray]) -> Builder:
    def build(rng):
        return (lambda t: op(t[0])), [sample(rng, _image_shape(rng))]
    return build


def _normal(rng, shape):
    return rng.standard_normal(shape)


def _build_clip(rng):
    shape = _image_shape(rng)
    # Values land in (-2, -1.1), (-0.9, 0.9) or (1.1, 2) so none sits on a bound
    inner = rng.uniform(-0.9, 0.9, size=shape)
    outer = rng.uniform(1.1, 2.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    x = np.where(rng.random(shape) < 0.5, inner, outer)
    return (lambda t: F.clip(t[0], -1.0, 1.0)), [x]


def _build_slice_last(rng):
    shape = _image_shape(rng, min_hw=3)
    start = int(rng.integers(0, shape[-1] - 1))
    stop = int(rng.integers(start + 1, shape[-1] + 1))
    return (lambda t: F.slice_last(t[0], start, stop)), [rng.standard_normal(shape)]


def _build_reshape(rng):
    shape = _image_shape(rng)
    return (lambda t: F.reshape(t[0], (shape[0], -1))), [rng.standard_normal(shape)]


def _build_pad(mode: str) -> Builder:
    def build(rng):
        shape = _image_shape(rng, min_hw=4)
        padding = int(rng.integers(1, 4))
        return (lambda t: F.pad2d(t[0], padding, mode)), [rng.standard_normal(shape)]
    return build


def _build_conv2d(rng):
    n, c, h, w = _image_shape(rng, min_hw=5, max_hw=7)
    out_channels = int(rng.integers(1, 4))
    kernel = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    pad_mode = "reflect" if rng.random() < 0.5 else "zero"
    arrays = [
        rng.standard_normal((n, c, h, w)),
        rng.standard_normal((out_channels, c, kernel, kernel)),
        rng.standard_normal(out_channels),
    ]
    return (lambda t: F.conv2d(t[0], t[1], t[2], stride, padding, pad_mode)), arrays


def _build_instance_norm(rng):
    n, c, h, w = _image_shape(rng)
    arrays = [rng.standard_normal((n, c, h, w)), rng.uniform(0.5, 2.0, c), rng.standard_normal(c)]
    return (lambda t: F.instance_norm(t[0], t[1], t[2])), arrays


def _build_adain(rng):
    n, c, h, w = _image_shape(rng)
    arrays = [rng.standard_normal((n, c, h, w)), rng.standard_normal((1, c)), rng.standard_normal((1, c))]
    return (lambda t: F.adain(t[0], t[1], t[2])), arrays


def _build_avg_pool(rng):
    shape = _image_shape(rng, min_hw=4, max_hw=7)
    return (lambda t: F.avg_pool2d(t[0], 3, 2, 1)), [rng.standard_normal(shape)]


def _build_fully_connected(rng):
    batch, n_in, n_out = int(rng.integers(1, 3)), int(rng.integers(2, 7)), int(rng.integers(1, 6))
    arrays = [rng.standard_normal((batch, n_in)), rng.standard_normal((n_out, n_in)), rng.standard_normal(n_out)]
    return (lambda t: F.fully_connected(t[0], t[1], t[2])), arrays


def _build_upsample(rng):
    shape = _image_shape(rng, max_hw=4)
    factor = int(rng.integers(2, 4))
    return (lambda t: F.upsample_nearest(t[0], factor)), [rng.standard_normal(shape)]


def _build_l1(rng):
    shape = _image_shape(rng)
    a = rng.standard_normal(shape)
    return (lambda t: F.l1_distance(t[0], t[1])), [a, a + _away_from_zero(rng, shape)]


def _build_affine_loss(rng):
    size = int(rng.integers(4, 7))
    guide = rng.uniform(0.0, 1.0, size=(3, size, size))
    laplacian = build_matting_laplacian(guide, MattingConfig())
    return (lambda t: affine_loss(laplacian, t[0])), [rng.uniform(0.0, 1.0, size=(1, 3, size, size))]


REGISTRY: Dict[str, Builder] = {
    "add": _binary(F.add),
    "sub": _binary(F.sub),
    "mul": _binary(F.mul),
    "scale": _unary(lambda x: F.scale(x, -1.7), _normal),
    "shift": _unary(lambda x: F.shift(x, 0.3), _normal),
    "square": _unary(F.square, _normal),
    "log": _unary(F.log, lambda rng, shape: rng.uniform(0.5, 2.0, size=shape)),
    "sigmoid": _unary(F.sigmoid, _normal),
    "tanh": _unary(F.tanh, _normal),
    "clip": _build_clip,
    "relu": _unary(F.relu, _away_from_zero),
    "leaky_relu": _unary(lambda x: F.leaky_relu(x, 0.2), _away_from_zero),
    "sum": _unary(F.sum, _normal),
    "mean": _unary(F.mean, _normal),
    "reshape": _build_reshape,
    "slice_last": _build_slice_last,
    "pad2d_zero": _build_pad("zero"),
    "pad2d_reflect": _build_pad("reflect"),
    "conv2d": _build_conv2d,
    "instance_norm": _build_instance_norm,
    "adain": _build_adain,
    "global_avg_pool": _unary(F.global_avg_pool, _normal),
    "avg_pool2d": _build_avg_pool,
    "fully_connected": _build_fully_connected,
    "upsample_nearest": _build_upsample,
    "l1_distance": _build_l1,
    "affine_loss": _build_affine_loss,
}


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| over max(max |a|, max |n|), guarded against all-zero gradients."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def _projected(fn: Forward, arrays: List[np.ndarray], projection: np.ndarray) -> float:
    with no_grad():
        out = fn([Tensor(a, dtype=np.float64) for a in arrays])
    return float(np.sum(out.data * projection))


def numeric_gradient(fn: Forward, arrays: List[np.ndarray], index: int,
                     projection: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of sum(fn(...) * projection) with respect to arrays[index]."""
    base = [a.copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    for pos in np.ndindex(target.shape):
        original = target[pos]
        target[pos] = original + step
        plus = _projected(fn, base, projection)
        target[pos] = original - step
        minus = _projected(fn, base, projection)
        target[pos] = original
        grad[pos] = (plus - minus) / (2.0 * step)
    return grad


def check_function(fn: Forward, arrays: List[np.ndarray], rng: np.random.Generator) -> float:
    """Largest relative error between backward and finite differences over all inputs."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with precision(Precision.CHECK64):
        leaves = [Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
        out = fn(leaves)
        projection = rng.standard_normal(out.shape)
        backward(F.sum(F.mul(out, Tensor(projection, dtype=np.float64))))
        worst = 0.0
        for i, leaf in enumerate(leaves):
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
            numeric = numeric_gradient(fn, arrays, i, projection)
            worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_ops(
    names: Optional[Iterable[str]] = None,
    seed: int = 0,
    instances: int = INSTANCES_PER_OP,
) -> List[GradCheckResult]:
    """Run `instances` random cases of each named op (all ops by default)."""
    names = list(names) if names is not None else list(REGISTRY)
    unknown = [n for n in names if n not in REGISTRY]
    if unknown:
        raise ConfigError(f"unknown ops {unknown}; known ops are {sorted(REGISTRY)}")
    results = []
    for name in names:
        rng = np.random.default_rng(seed)
        for instance in range(instances):
            fn, arrays = REGISTRY[name](rng)
            error = check_function(fn, arrays, rng)
            results.append(GradCheckResult(name, instance, [a.shape for a in arrays], error))
            logger.debug("%s #%d %s: %.3e", name, instance, [a.shape for a in arrays], error)
    return results


def worst_per_op(results: List[GradCheckResult]) -> Dict[str, float]:
    worst: Dict[str, float] = {}
    for r in results:
        worst[r.op] = max(worst.get(r.op, 0.0), r.max_rel_error)
    return worst
