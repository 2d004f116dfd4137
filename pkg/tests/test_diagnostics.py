import numpy as np
import pytest
import yaml

from src.diagnostics import (
    Moments,
    StateReport,
    image_cycle_error,
    latent_cycle_errors,
    measure_state,
    prior_moments,
)
from src.errors import ConfigError
from src.image_io import load_image
from src.tensor import Tensor
from src.trainer import TrainState
from tests.conftest import TINY_SIZE


@pytest.fixture
def initial_checkpoint(make_config):
    return TrainState.fresh(make_config()).to_checkpoint()


@pytest.fixture
def images(make_config):
    config = make_config()
    return load_image(config.content_path, TINY_SIZE), load_image(config.style_path, TINY_SIZE)


def test_prior_moments_match_the_standard_gaussian():
    first, second = prior_moments(seed=0, n_samples=100_000)
    for moments in (first, second):
        assert moments.n == 100_000
        assert moments.max_abs_mean < 0.02
        assert moments.max_cov_deviation < 0.05


def test_moments_from_samples():
    m = Moments.from_samples(np.array([[1.0, 0.0], [3.0, 2.0]]))
    assert m.mean == [2.0, 1.0]
    assert np.allclose(m.cov, [[2.0, 2.0], [2.0, 2.0]])
    assert m.max_abs_mean == 2.0


def test_perfect_model_has_zero_cycle_errors(rng):
    fixed_style = Tensor(rng.standard_normal((1, 8)))

    def encoder(x):
        return x, fixed_style

    def decoder(c, s):
        return c

    x = Tensor(rng.uniform(-1, 1, size=(1, 3, 8, 8)))
    assert image_cycle_error(encoder, decoder, x) == 0.0
    content_error, style_error, translated = latent_cycle_errors(encoder, decoder, x, fixed_style)
    assert content_error == 0.0 and style_error == 0.0
    assert np.array_equal(translated.data, x.data)


def test_report_on_a_random_model(initial_checkpoint, images):
    x1, x2 = images
    report = measure_state(initial_checkpoint, x1, x2, n_samples=6, seed=1, max_translations=3)
    report.check_finite()
    assert report.n_samples == 6
    assert report.n_translations == 3
    assert report.prior_1.n == 6 and report.style_1.n == 3
    assert len(report.style_2.mean) == 8
    assert report.recon_x1 > 0.0 and report.affine_x1 >= 0.0


def test_report_is_deterministic(initial_checkpoint, images):
    x1, x2 = images
    a = measure_state(initial_checkpoint, x1, x2, n_samples=4, seed=2, max_translations=2)
    b = measure_state(initial_checkpoint, x1, x2, n_samples=4, seed=2, max_translations=2)
    assert a.to_csv() == b.to_csv()
    assert a.to_yaml() == b.to_yaml()


def test_needs_at_least_two_samples(initial_checkpoint, images):
    with pytest.raises(ConfigError):
        measure_state(initial_checkpoint, *images, n_samples=1, seed=0)
    with pytest.raises(ConfigError):
        prior_moments(seed=0, n_samples=1)


def test_text_csv_and_yaml_outputs(initial_checkpoint, images, tmp_path):
    report = measure_state(initial_checkpoint, *images, n_samples=3, seed=0, max_translations=2)
    text = report.to_text()
    assert "quantity,value" in text
    lines = report.to_csv().splitlines()
    assert lines[0] == "quantity,value"
    assert dict(line.split(",") for line in lines[1:])["n_translations"] == "2.0"
    path = report.save(str(tmp_path / "report.txt"))
    assert open(path).read() == text
    dumped = yaml.safe_load(open(tmp_path / "report.yaml"))
    assert dumped["n_samples"] == 3
    assert dumped["prior_1"]["n"] == 3
    assert isinstance(report, StateReport)
