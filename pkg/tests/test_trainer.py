import os

import numpy as np
import pytest

from src.checkpoint import load_checkpoint
from src.config import ArchConfig, Config, GanForm, LossWeights, StyleSource, TrainConfig
from src.errors import ConfigError, ShapeError
from src.image_io import load_image
from src.losses import LossReport, MetricsLog
from src.networks import DISCRIMINATOR_PREFIXES, GENERATOR_PREFIXES
from src.rng import Site, stream
from src.tensor import Tensor
from src.trainer import (
    TrainState,
    checkpoint_path,
    discriminator_step,
    generator_step,
    prepare_inputs,
    prior_styles,
    sample_style_prior,
    train,
    train_step,
    translate,
    translate_samples,
)
from tests.conftest import TINY_SIZE


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_style_prior_is_keyed_by_seed_step_and_site():
    a = sample_style_prior(stream(0, 5, Site.PRIOR_STYLE_1))
    b = sample_style_prior(stream(0, 5, Site.PRIOR_STYLE_1))
    c = sample_style_prior(stream(0, 5, Site.PRIOR_STYLE_2))
    assert a.shape == (1, 8)
    assert a.dtype == np.float32
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_train_step_updates_both_groups(make_config):
    config = make_config()
    state = TrainState.fresh(config)
    x1, x2, M1, M2 = prepare_inputs(config)
    before = state.params.arrays()
    before = {k: v.copy() for k, v in before.items()}
    report = train_step(state, x1, x2, M1, M2)
    assert state.step == 1
    assert state.gen_opt.t == 1 and state.dis_opt.t == 1
    report.check_finite()
    assert report.total_d == pytest.approx(report.gan_d1 + report.gan_d2)
    assert report.total_g == pytest.approx(report.generator_total(config.weights), rel=1e-5)
    for prefixes in (GENERATOR_PREFIXES, DISCRIMINATOR_PREFIXES):
        changed = [
            not np.array_equal(before[name], t.data)
            for name, t in state.params.items() if name.split(".")[0] in prefixes
        ]
        assert any(changed)
    assert all(t.grad is None for t in state.params.tensors())


def snapshot(params, prefixes):
    return {name: t.data.copy() for name, t in params.items() if name.split(".")[0] in prefixes}


def test_each_sub_step_leaves_the_other_group_untouched(make_config):
    config = make_config()
    state = TrainState.fresh(config)
    x1, x2, M1, M2 = prepare_inputs(config)
    s1, s2 = prior_styles(config.seed, 1, config.arch.style_dim)

    generators = snapshot(state.params, GENERATOR_PREFIXES)
    discriminator_step(state, x1, x2, s1, s2)
    after = snapshot(state.params, GENERATOR_PREFIXES)
    assert all(np.array_equal(generators[n], after[n]) for n in generators)

    discriminators = snapshot(state.params, DISCRIMINATOR_PREFIXES)
    generator_step(state, x1, x2, M1, M2, s1, s2)
    after = snapshot(state.params, DISCRIMINATOR_PREFIXES)
    assert all(np.array_equal(discriminators[n], after[n]) for n in discriminators)


def test_generator_backward_reaches_every_encoder_and_decoder(make_config):
    config = make_config()
    state = TrainState.fresh(config)
    x1, x2, M1, M2 = prepare_inputs(config)
    s1, s2 = prior_styles(config.seed, 1, config.arch.style_dim)
    generator_step(state, x1, x2, M1, M2, s1, s2)

    for name, t in state.params.items():
        if name.startswith("gen"):
            assert t.grad is not None and np.all(np.isfinite(t.grad)), name
        else:
            assert t.grad is None, name
    for domain in (1, 2):
        encoders = (f"gen{domain}.content.", f"gen{domain}.style.")
        decoders = (f"gen{domain}.mlp.", f"gen{domain}.dec.")
        for group in (encoders, decoders):
            grads = [t.grad for name, t in state.params.items() if name.startswith(group)]
            assert any(np.any(g != 0) for g in grads), group


def test_log_objective_trains(make_config):
    for saturating in (False, True):
        config = make_config(gan_form=GanForm.LOG, saturating=saturating)
        state = TrainState.fresh(config)
        report = train_step(state, *prepare_inputs(config))
        report.check_finite()
        assert report.gan_d1 <= 0.0 and report.gan_d2 <= 0.0


def test_train_writes_checkpoints_metrics_and_run_config(make_config):
    config = make_config(iterations=3, checkpoint_every=2)
    ckpt, path = train(config, progress=False)
    assert ckpt.step == 3
    assert path == checkpoint_path(config.out_dir, 3)
    files = sorted(os.listdir(config.out_dir))
    assert files == ["checkpoint_000002.ssit", "checkpoint_000003.ssit", Config.METRICS_FILE,
                     Config.RUN_CONFIG_FILE]
    rows = MetricsLog.read(os.path.join(config.out_dir, Config.METRICS_FILE))
    assert [r["step"] for r in rows] == [1, 2, 3]
    assert all(np.isfinite(r[c]) for r in rows for c in LossReport.columns())
    loaded = load_checkpoint(path)
    assert TrainConfig.from_echo(loaded.config_echo).to_echo() == config.to_echo()


def test_single_iteration_writes_one_checkpoint(make_config):
    config = make_config(iterations=1)
    train(config, progress=False)
    assert [f for f in os.listdir(config.out_dir) if f.endswith(".ssit")] == ["checkpoint_000001.ssit"]


def test_identical_configs_give_identical_outputs(make_config):
    a = make_config("a")
    b = make_config("b")
    train(a, progress=False)
    train(b, progress=False)
    for name in sorted(os.listdir(a.out_dir)):
        assert read(os.path.join(a.out_dir, name)) == read(os.path.join(b.out_dir, name)), name


def test_resume_reproduces_the_uninterrupted_run(make_config):
    full = make_config("full", iterations=3, checkpoint_every=2)
    train(full, progress=False)
    first = make_config("split", iterations=2, checkpoint_every=2)
    train(first, progress=False)
    resumed = make_config("split", iterations=3, checkpoint_every=2,
                          resume=checkpoint_path(first.out_dir, 2))
    train(resumed, progress=False)
    assert read(checkpoint_path(full.out_dir, 3)) == read(checkpoint_path(resumed.out_dir, 3))
    metrics = Config.METRICS_FILE
    assert read(os.path.join(full.out_dir, metrics)) == read(os.path.join(resumed.out_dir, metrics))


def test_resume_rejects_a_different_seed(make_config):
    first = make_config("seeded", iterations=1)
    train(first, progress=False)
    other = make_config("other", iterations=2, seed=5, resume=checkpoint_path(first.out_dir, 1))
    with pytest.raises(ConfigError, match="seed"):
        train(other, progress=False)


def test_zero_affine_weight_matches_disabled_matting(make_config):
    weighted = make_config("weighted", weights=LossWeights(lambda_a=0.0))
    disabled = make_config("disabled", weights=LossWeights(lambda_a=0.0), use_matting=False)
    ckpt_w, _ = train(weighted, progress=False)
    ckpt_d, _ = train(disabled, progress=False)
    rows_w = MetricsLog.read(os.path.join(weighted.out_dir, Config.METRICS_FILE))
    rows_d = MetricsLog.read(os.path.join(disabled.out_dir, Config.METRICS_FILE))
    for row_w, row_d in zip(rows_w, rows_d):
        for column in LossReport.columns():
            if not column.startswith("affine"):
                assert row_w[column] == row_d[column], column
        assert row_d["affine_x1"] == 0.0
    for name, array in ckpt_w.params.items():
        assert np.array_equal(array, ckpt_d.params[name]), name


def test_translate_with_prior_style_is_reproducible(make_config):
    config = make_config(iterations=1)
    ckpt, _ = train(config, progress=False)
    content = load_image(config.content_path, TINY_SIZE)
    a = translate(ckpt, content, StyleSource.PRIOR, style_seed=4)
    b = translate(ckpt, content, StyleSource.PRIOR, style_seed=4)
    c = translate(ckpt, content, StyleSource.PRIOR, style_seed=5)
    assert a.shape == content.shape
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_translate_with_style_image_and_direction(make_config):
    config = make_config(iterations=1)
    ckpt, _ = train(config, progress=False)
    x1 = load_image(config.content_path, TINY_SIZE)
    x2 = load_image(config.style_path, TINY_SIZE)
    forward = translate(ckpt, x1, StyleSource.IMAGE, style_image=x2)
    backward_dir = translate(ckpt, x2, StyleSource.IMAGE, style_image=x1, direction="21")
    assert forward.shape == backward_dir.shape == x1.shape
    with pytest.raises(ConfigError):
        translate(ckpt, x1, StyleSource.IMAGE)
    with pytest.raises(ConfigError):
        translate(ckpt, x1, StyleSource.PRIOR, direction="13")
    with pytest.raises(ShapeError):
        translate(ckpt, Tensor(np.zeros((1, 3, 32, 32))), StyleSource.PRIOR)


def test_translate_samples_are_distinct_and_match_single_draws(make_config):
    config = make_config(iterations=1)
    ckpt, _ = train(config, progress=False)
    content = load_image(config.content_path, TINY_SIZE)
    samples = translate_samples(ckpt, content, style_seed=2, n_samples=3)
    assert len(samples) == 3
    assert not np.array_equal(samples[0].data, samples[1].data)
    single = translate(ckpt, content, StyleSource.PRIOR, style_seed=2)
    assert np.array_equal(samples[0].data, single.data)


@pytest.mark.slow
def test_default_scale_training_step(image_pair, tmp_path):
    content, style = image_pair
    config = TrainConfig(content_path=content, style_path=style, out_dir=str(tmp_path / "big"),
                         iterations=1)
    ckpt, _ = train(config, progress=False)
    assert ckpt.step == 1


def smoothed(rows, key, step, window=50):
    """Mean of `key` over the `window` steps ending at `step`."""
    return float(np.mean([row[key] for row in rows if step - window < row["step"] <= step]))


def desk_run(make_config, out, iterations):
    config = make_config(out=out, iterations=iterations, checkpoint_every=iterations,
                         arch=ArchConfig(image_size=Config.DESK_IMAGE_SIZE), weights=LossWeights())
    assert config.arch.n_scales == 1
    train(config, progress=False)
    rows = MetricsLog.read(os.path.join(config.out_dir, Config.METRICS_FILE))
    assert len(rows) == iterations
    assert all(np.isfinite(row["total_g"]) and np.isfinite(row["total_d"]) for row in rows)
    return rows


@pytest.mark.slow
def test_desk_scale_training_lowers_the_generator_loss(make_config):
    rows = desk_run(make_config, "desk", 500)
    assert smoothed(rows, "total_g", 500) < smoothed(rows, "total_g", 50)


@pytest.mark.slow
def test_extended_desk_run_reconstructs_both_images(make_config):
    rows = desk_run(make_config, "desk_long", 2000)
    assert smoothed(rows, "recon_x1", 2000) < 0.15
    assert smoothed(rows, "recon_x2", 2000) < 0.15
