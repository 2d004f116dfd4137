"""Matting Laplacian construction and the affine photorealism loss.

For every (2r+1)^2 window w_k with color mean mu_k and covariance S_k, pixels
i, j in the window receive

    delta_ij - (1 + (I_i - mu_k)^T (S_k + eps/|w_k| Id)^-1 (I_j - mu_k)) / |w_k|

and contributions are summed over all windows containing both pixels. The
quadratic form of the result equals the summed minimum of a per-window,
ridge-regularized affine fit, which `brute_force_affine_cost` computes directly.
"""

import logging
from typing import Dict, Optional, Union

import numpy as np
import scipy.sparse
from numpy.lib.stride_tricks import sliding_window_view

from .config import MattingConfig
from .errors import NonFiniteError, ShapeError
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)


class SparseSym:
    """Symmetric matrix in compressed-sparse-row layout."""

    def __init__(self, matrix: scipy.sparse.csr_matrix):
        if matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"matrix must be square, got {matrix.shape}")
        self.matrix = matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def row_nnz(self, row: int) -> int:
        return int(self.row_offsets[row + 1] - self.row_offsets[row])

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def quadratic_form(self, v: np.ndarray) -> float:
        return float(v @ (self.matrix @ v))

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def max_asymmetry(self) -> float:
        diff = self.matrix - self.matrix.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def summary(self, with_eigen: bool = False) -> Dict[str, Union[int, float]]:
        info: Dict[str, Union[int, float]] = {
            "order": self.n,
            "nonzeros": self.nnz,
            "max_abs_row_sum": float(np.abs(self.row_sums()).max()),
            "max_asymmetry": self.max_asymmetry(),
        }
        if with_eigen:
            info["min_eigenvalue"] = float(np.linalg.eigvalsh(self.to_dense())[0])
        return info


def _channels_last(image: Union[Tensor, np.ndarray]) -> np.ndarray:
    """3 x H x W (or 1 x 3 x H x W) colors as an H x W x 3 float64 array."""
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {data.shape[0]}")
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W color image, got {data.shape}")
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("image contains non-finite pixels")
    return np.moveaxis(data, 0, -1)


def _check_window_fits(h: int, w: int, cfg: MattingConfig) -> None:
    diameter = 2 * cfg.window_radius + 1
    if h < diameter or w < diameter:
        raise ShapeError(f"{h}x{w} image is too small for {diameter}x{diameter} windows")


def window_count(h: int, w: int, cfg: MattingConfig) -> int:
    """Number of full windows in an h x w image."""
    diameter = 2 * cfg.window_radius + 1
    return (h - diameter + 1) * (w - diameter + 1)


def _window_indices(h: int, w: int, cfg: MattingConfig) -> np.ndarray:
    """Flat pixel indices of every window, one row per window."""
    diameter = 2 * cfg.window_radius + 1
    grid = np.arange(h * w).reshape(h, w)
    return sliding_window_view(grid, (diameter, diameter)).reshape(-1, diameter * diameter)


def build_matting_laplacian(image: Union[Tensor, np.ndarray], cfg: Optional[MattingConfig] = None) -> SparseSym:
    """Matting Laplacian of a 3 x H x W image with colors in [0, 1]."""
    cfg = cfg or MattingConfig()
    colors = _channels_last(image)
    h, w, _ = colors.shape
    _check_window_fits(h, w, cfg)
    size = cfg.window_size

    win_inds = _window_indices(h, w, cfg)
    win_colors = colors.reshape(h * w, 3)[win_inds]
    mu = win_colors.mean(axis=1, keepdims=True)
    centered = win_colors - mu
    cov = np.einsum("kji,kjl->kil", centered, centered) / size
    inv = np.linalg.inv(cov + (cfg.eps / size) * np.eye(3))
    proj = np.einsum("kij,kjl,kml->kim", centered, inv, centered)
    # Each window block is symmetric in exact arithmetic; make it so in floating point
    proj = 0.5 * (proj + proj.transpose(0, 2, 1))
    vals = np.eye(size) - (1.0 + proj) / size

    rows = np.repeat(win_inds, size, axis=1).ravel()
    cols = np.tile(win_inds, (1, size)).ravel()
    n = h * w
    matrix = scipy.sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    logger.debug("Built matting Laplacian of order %d with %d nonzeros", n, matrix.nnz)
    return SparseSym(matrix)


def _vectorize(M: SparseSym, output: np.ndarray) -> np.ndarray:
    """Image as a 3 x N matrix of row-major channel vectors."""
    if output.ndim == 4:
        if output.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch of {output.shape[0]}")
        output = output[0]
    if output.ndim != 3 or output.shape[0] != 3:
        raise ShapeError(f"expected a 3 x H x W image, got {output.shape}")
    if output.shape[1] * output.shape[2] != M.n:
        raise ShapeError(
            f"image has {output.shape[1]}x{output.shape[2]} pixels, matrix has order {M.n}"
        )
    return output.reshape(3, -1).astype(np.float64)


class AffineLoss(Function):
    """Sum over channels of V_c^T M V_c."""

    def forward(self, output, laplacian):
        self.laplacian = laplacian
        self.shape = output.shape
        self.vectors = _vectorize(laplacian, output)
        self.products = np.stack([laplacian.matvec(v) for v in self.vectors])
        value = float(np.sum(self.vectors * self.products))
        return np.asarray(value, dtype=output.dtype)

    def backward(self, grad):
        return ((2.0 * float(grad) * self.products).reshape(self.shape).astype(grad.dtype),)


def affine_loss(M: SparseSym, output_image: Tensor) -> Tensor:
    """Photorealism penalty of an image with colors in [0, 1]."""
    return AffineLoss.apply(output_image, laplacian=M)


def affine_loss_grad(M: SparseSym, output_image: Tensor) -> Tensor:
    """Gradient 2 M V_c of the penalty, in image layout."""
    vectors = _vectorize(M, output_image.data)
    grad = np.stack([2.0 * M.matvec(v) for v in vectors])
    return Tensor(grad.reshape(output_image.shape), dtype=output_image.dtype)


def network_affine_loss(M: SparseSym, generated: Tensor) -> Tensor:
    """Penalty of a network output in [-1, 1], mapped to the [0, 1] colors M was built on."""
    return affine_loss(M, (generated + 1.0) * 0.5)


def brute_force_affine_cost(
    image: Union[Tensor, np.ndarray],
    alpha_channel: np.ndarray,
    cfg: Optional[MattingConfig] = None,
) -> float:
    """Summed minimum over windows of the ridge-regularized local affine fit.

    Solves min_{a,b} sum_i (alpha_i - a^T I_i - b)^2 + eps |a|^2 per window with a
    dense 4 x 4 normal system; meant for images of at most 8 x 8 pixels.
    """
    cfg = cfg or MattingConfig()
    colors = _channels_last(image)
    h, w, _ = colors.shape
    _check_window_fits(h, w, cfg)
    alpha = np.asarray(alpha_channel, dtype=np.float64).ravel()
    if alpha.size != h * w:
        raise ShapeError(f"alpha has {alpha.size} values for a {h}x{w} image")

    ridge = cfg.eps * np.diag([1.0, 1.0, 1.0, 0.0])
    flat = colors.reshape(h * w, 3)
    cost = 0.0
    for inds in _window_indices(h, w, cfg):
        design = np.hstack([flat[inds], np.ones((len(inds), 1))])
        target = alpha[inds]
        normal = design.T @ design + ridge
        try:
            theta = np.linalg.solve(normal, design.T @ target)
        except np.linalg.LinAlgError as e:
            raise ShapeError(f"singular normal system for window {inds.tolist()}") from e
        residual = target - design @ theta
        cost += float(residual @ residual + cfg.eps * theta[:3] @ theta[:3])
    return cost
