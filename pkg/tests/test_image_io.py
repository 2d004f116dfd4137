import cv2
import numpy as np
import pytest

from src.errors import ImageFormatError, ShapeError
from src.image_io import load_image, read_pixels, read_ppm, resize_bilinear, save_image, to_pixels, write_ppm
from src.tensor import Tensor


def write_bytes(path, data):
    with open(path, "wb") as f:
        f.write(data)
    return str(path)


def test_ppm_write_then_read(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    path = write_ppm(str(tmp_path / "a.ppm"), pixels, comment="hello")
    assert open(path, "rb").read().startswith(b"P6\n# hello\n7 5\n255\n")
    assert np.array_equal(read_ppm(path), pixels)


def test_header_whitespace_and_comment(tmp_path):
    payload = bytes(range(12))
    path = write_bytes(tmp_path / "b.ppm", b"P6  \n# made by hand\n 2\t2 \r\n255\n" + payload)
    pixels = read_ppm(path)
    assert pixels.shape == (2, 2, 3)
    assert pixels.ravel().tolist() == list(range(12))


@pytest.mark.parametrize("header,message", [
    (b"P5\n1 1\n255\n", "magic"),
    (b"P6\n1 1\n65535\n", "maxval"),
    (b"P61 1\n255\n", "whitespace"),
    (b"P6\n# one\n# two\n1 1\n255\n", "comment"),
    (b"P6\n0 1\n255\n", "dimensions"),
    (b"P6\n1 1\n", "header"),
])
def test_header_errors(tmp_path, header, message):
    path = write_bytes(tmp_path / "bad.ppm", header + b"\0\0\0")
    with pytest.raises(ImageFormatError, match=message):
        read_ppm(path)


def test_truncated_payload(tmp_path):
    path = write_bytes(tmp_path / "short.ppm", b"P6\n2 2\n255\n" + b"\0" * 5)
    with pytest.raises(ImageFormatError, match="truncated"):
        read_ppm(path)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_pixels(str(tmp_path / "absent.ppm"))
    with pytest.raises(OSError):
        read_pixels(str(tmp_path / "absent.png"))


def test_load_image_normalizes_to_unit_range(tmp_path):
    pixels = np.zeros((16, 16, 3), dtype=np.uint8)
    pixels[:, 8:] = 255
    image = load_image(write_ppm(str(tmp_path / "c.ppm"), pixels), 16)
    assert image.shape == (1, 3, 16, 16)
    assert image.dtype == np.float32
    assert image.data[0, :, 0, 0].tolist() == [-1.0, -1.0, -1.0]
    assert image.data[0, :, 0, 15].tolist() == [1.0, 1.0, 1.0]


def test_load_image_resizes(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(20, 30, 3), dtype=np.uint8)
    image = load_image(write_ppm(str(tmp_path / "d.ppm"), pixels), 16)
    assert image.shape == (1, 3, 16, 16)
    assert np.all(np.abs(image.data) <= 1.0)


def test_resize_of_constant_image_is_constant():
    out = resize_bilinear(np.full((9, 13, 3), 77, dtype=np.uint8), 8)
    assert out.shape == (8, 8, 3)
    assert np.allclose(out, 77.0)


def test_quantization_round_trip(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    image = load_image(write_ppm(str(tmp_path / "e.ppm"), pixels), 16)
    assert np.array_equal(to_pixels(image), pixels)


def test_to_pixels_clips_out_of_range_values():
    image = Tensor(np.array([-3.0, -1.0, 0.0, 1.0, 3.0]).reshape(1, 1, 1, 5) * np.ones((1, 3, 1, 1)))
    assert to_pixels(image)[0, :, 0].tolist() == [0, 0, 128, 255, 255]
    with pytest.raises(ShapeError):
        to_pixels(Tensor(np.zeros((3, 4, 4))))


def test_png_adapter(tmp_path, rng):
    pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    image = load_image(write_ppm(str(tmp_path / "f.ppm"), pixels), 16)
    path = save_image(image, str(tmp_path / "f.png"))
    assert np.array_equal(read_pixels(path), pixels)
    assert np.array_equal(cv2.imread(path)[..., ::-1], pixels)


def test_save_image_writes_ppm_with_comment(tmp_path):
    image = Tensor(np.zeros((1, 3, 4, 4)))
    path = save_image(image, str(tmp_path / "g.ppm"), comment="style: prior seed 3")
    data = open(path, "rb").read()
    assert data.startswith(b"P6\n# style: prior seed 3\n4 4\n255\n")
    assert read_ppm(path).shape == (4, 4, 3)
