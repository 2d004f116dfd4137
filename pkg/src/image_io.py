"""Loading, normalizing and saving images.

Binary PPM (P6, maxval 255) is read and written directly so that files are
bit-exact; PNG goes through OpenCV.
"""

import os
from typing import Optional, Tuple

import cv2
import numpy as np

from .errors import ImageFormatError, ShapeError
from .tensor import Tensor

PPM_MAGIC = b"P6"
PPM_MAXVAL = 255
WHITESPACE = b" \t\n\r\v\f"


def _is_png(path: str) -> bool:
    return os.path.splitext(path)[1].lower() == ".png"


def _parse_ppm_header(data: bytes, path: str) -> Tuple[int, int, int]:
    """Width, height and payload offset of a P6 file.

    Whitespace between fields is free-form and one comment line is allowed.
    """
    if data[:2] != PPM_MAGIC:
        raise ImageFormatError(f"{path}: not a binary PPM (expected magic 'P6', got {data[:2]!r})")
    pos = 2
    fields = []
    comments = 0
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError(f"{path}: header ends after {len(fields)} of 3 fields")
        byte = data[pos:pos + 1]
        if byte in WHITESPACE:
            pos += 1
        elif byte == b"#":
            comments += 1
            if comments > 1:
                raise ImageFormatError(f"{path}: more than one comment line in header")
            end = data.find(b"\n", pos)
            if end < 0:
                raise ImageFormatError(f"{path}: unterminated comment in header")
            pos = end + 1
        elif byte.isdigit():
            if data[pos - 1:pos] not in WHITESPACE:
                raise ImageFormatError(f"{path}: missing whitespace before header field at byte {pos}")
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise ImageFormatError(f"{path}: unexpected byte {byte!r} in header at offset {pos}")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != PPM_MAXVAL:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (only {PPM_MAXVAL} is supported)")
    if pos >= len(data) or data[pos:pos + 1] not in WHITESPACE:
        raise ImageFormatError(f"{path}: maxval must be followed by a single whitespace byte")
    return width, height, pos + 1


def read_ppm(path: str) -> np.ndarray:
    """H x W x 3 uint8 pixels of a P6 file."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise OSError(f"could not read image {path}: {e}") from e
    width, height, offset = _parse_ppm_header(data, path)
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path: str, pixels: np.ndarray, comment: Optional[str] = None) -> str:
    if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3 uint8 pixels, got {pixels.dtype} {pixels.shape}")
    height, width = pixels.shape[:2]
    header = PPM_MAGIC + b"\n"
    if comment:
        header += b"# " + " ".join(comment.splitlines()).encode("utf-8") + b"\n"
    header += f"{width} {height}\n{PPM_MAXVAL}\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header + np.ascontiguousarray(pixels).tobytes())
    except OSError as e:
        raise OSError(f"could not write image {path}: {e}") from e
    return path


def read_pixels(path: str) -> np.ndarray:
    """H x W x 3 uint8 RGB pixels from a PPM or PNG file."""
    if not _is_png(path):
        return read_ppm(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path}")
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ImageFormatError(f"{path}: could not decode PNG")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def resize_bilinear(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers to size x size (float32 output)."""
    return cv2.resize(pixels.astype(np.float32), (size, size), interpolation=cv2.INTER_LINEAR)


def load_image(path: str, target_size: int) -> Tensor:
    """Image as a 1 x 3 x S x S tensor with values in [-1, 1]."""
    pixels = read_pixels(path)
    if pixels.shape[:2] != (target_size, target_size):
        pixels = resize_bilinear(pixels, target_size)
    values = pixels.astype(np.float64) / 127.5 - 1.0
    return Tensor(values.transpose(2, 0, 1)[None], dtype=np.float32)


def to_pixels(image: Tensor) -> np.ndarray:
    """Quantize a 1 x 3 x H x W tensor in [-1, 1] to H x W x 3 uint8."""
    if image.ndim != 4 or image.shape[:2] != (1, 3):
        raise ShapeError(f"expected a 1 x 3 x H x W image, got {image.shape}")
    values = np.clip(image.data[0].astype(np.float64), -1.0, 1.0)
    return np.round((values + 1.0) * 127.5).astype(np.uint8).transpose(1, 2, 0)


def save_image(image: Tensor, path: str, comment: Optional[str] = None) -> str:
    pixels = to_pixels(image)
    if not _is_png(path):
        return write_ppm(path, pixels, comment)
    if not cv2.imwrite(path, cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write image {path}")
    return path
