import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expocorr.core import CheckpointError, Tensor, finite_diff_check
from expocorr.core.optim import Adam
from expocorr.data import make_clean_frame, synth_corrupt
from expocorr.losses import LossWeights
from expocorr.model import (
    DiscriminatorConfig,
    GeneratorConfig,
    ModelConfigError,
    build_discriminator,
    build_generator,
    enhance_image,
    image_batch_to_tensor,
    load_checkpoint,
    pyramid_tensors,
    save_checkpoint,
)
from expocorr.pyramid import gauss_pyramid
from expocorr.trainer import PhaseConfig, generator_losses, train_phase


def _conv(c_out, c_in, k):
    return c_out * c_in * k * k + c_out


def _subnet_params(c_in, w):
    # depth-2 encoder/decoder: widths w, 2w, 2w; decoder convs see upsampled + skip channels
    return (
        _conv(w, c_in, 3)
        + _conv(2 * w, w, 3)
        + _conv(2 * w, 2 * w, 3)
        + _conv(2 * w, 2 * w + 2 * w, 3)
        + _conv(w, 2 * w + w, 3)
        + _conv(3, w, 1)
    )


def _batch(rng, n, size):
    return rng.random((n, size, size, 3)).astype(np.float32)


def test_parameter_count_matches_shape_arithmetic():
    gen = build_generator(GeneratorConfig(), seed=0)
    expected = _subnet_params(3, 16) + _subnet_params(6, 12) + _subnet_params(6, 8) + _subnet_params(6, 8)
    assert gen.parameter_count() == expected == 83224
    disc = build_discriminator()
    assert disc.parameter_count() == _conv(8, 3, 3) + _conv(16, 8, 3) + _conv(32, 16, 3) + _conv(32, 32, 3) + _conv(1, 32, 1)


def test_build_reports_parameter_count(caplog):
    with caplog.at_level("INFO", logger="expocorr.model"):
        build_generator(GeneratorConfig(), seed=0)
    assert "83224 parameters" in caplog.text and "7M" in caplog.text


def test_build_is_deterministic():
    a, b = build_generator(seed=0), build_generator(seed=0)
    assert list(a.params) == list(b.params)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    c = build_generator(seed=1)
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_build_rejects_degenerate_depth():
    with pytest.raises(ModelConfigError):
        build_generator(GeneratorConfig(encoder_depth=6, patch_size=256), seed=0)
    build_generator(GeneratorConfig(encoder_depth=5, patch_size=256), seed=0)
    with pytest.raises(ModelConfigError):
        GeneratorConfig(levels=3)


def test_forward_shapes_128(rng):
    gen = build_generator(GeneratorConfig(patch_size=128), seed=0)
    preds, y = gen(pyramid_tensors(_batch(rng, 2, 128), 4))
    assert {i: p.shape[2:] for i, p in preds.items()} == {4: (32, 32), 3: (64, 64), 2: (128, 128)}
    assert y.shape == (2, 3, 128, 128)


def test_level_predictions_match_target_pyramid_shapes(rng):
    gen = build_generator(seed=0)
    batch = _batch(rng, 1, 96)
    preds, _ = gen(pyramid_tensors(batch, 4))
    gp = gauss_pyramid(batch.transpose(0, 3, 1, 2), 4, axes=(2, 3))
    for i in (2, 3, 4):
        assert preds[i].shape == gp.levels[i - 2].shape


def test_untrained_outputs_finite_and_bounded(rng):
    gen = build_generator(seed=3)
    preds, y = gen(pyramid_tensors(_batch(rng, 2, 64), 4))
    assert all(np.all(np.isfinite(p.data)) for p in preds.values())
    assert np.all(np.isfinite(y.data)) and y.data.min() >= 0.0 and y.data.max() <= 1.0


def test_forward_rejects_wrong_level_count(rng):
    gen = build_generator(seed=0)
    with pytest.raises(ModelConfigError):
        gen(pyramid_tensors(_batch(rng, 1, 64), 3))


@settings(max_examples=8)
@given(h=st.integers(32, 75), w=st.integers(32, 75))
def test_fully_convolutional_any_size(h, w):
    gen = build_generator(GeneratorConfig(patch_size=32), seed=0)
    img = np.random.default_rng(h * 100 + w).random((h, w, 3)).astype(np.float32)
    _, y = gen(pyramid_tensors(img[None], 4))
    assert y.shape == (1, 3, h, w)
    assert enhance_image(gen, img).shape == (h, w, 3)


def test_discriminator_identical_images_identical_logits(rng):
    disc = build_discriminator(seed=0)
    img = _batch(rng, 1, 64)
    logits = disc(image_batch_to_tensor(np.concatenate([img, img])))
    assert logits.shape == (2,)
    assert np.all(np.isfinite(logits.data))
    assert logits.data[0] == logits.data[1]


def test_discriminator_shape_error():
    with pytest.raises(ModelConfigError):
        build_discriminator()(Tensor(np.zeros((1, 1, 32, 32), np.float32)))


def test_gradient_flow_reaches_every_parameter(rng):
    gen = build_generator(seed=0)
    disc = build_discriminator(seed=0)
    gt = _batch(rng, 2, 64)
    report, _, _ = generator_losses(gen, disc, gt * 0.6, gt, LossWeights())
    report.objective.backward()
    missing = [k for k, p in gen.params.items() if p.grad is None or not np.any(p.grad)]
    assert missing == []


def test_composite_objective_gradient_on_toy_model():
    # four tiny levels; the loss indices 2..4 need the full four-level pyramid
    cfg = GeneratorConfig(base_channels=(2, 2, 2, 2), encoder_depth=1, patch_size=16)
    gen = build_generator(cfg, seed=4, dtype=np.float64)
    disc = build_discriminator(DiscriminatorConfig(channels=(2, 2, 2, 2)), seed=4, dtype=np.float64)
    r = np.random.default_rng(4)
    gt = 0.2 + 0.6 * r.random((1, 16, 16, 3))
    inputs = gt**1.8
    worst = 0.0
    for name in ("s1.head.w", "s4.enc0.w", "s3.up0.b"):
        original = gen.params[name]

        def fn(p, name=name, original=original):
            gen.params[name] = p
            try:
                return generator_losses(gen, disc, inputs, gt, LossWeights())[0].objective
            finally:
                gen.params[name] = original

        worst = max(worst, finite_diff_check(fn, Tensor(original.data.copy()), eps=1e-5))
    # observed 8.7e-6 (s4.enc0.w) at this seed
    assert worst < 1e-3


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    gen, disc = build_generator(seed=2), build_discriminator(seed=2)
    opt = Adam(gen.params, 1e-3)
    report, _, _ = generator_losses(gen, None, _batch(rng, 1, 64), _batch(rng, 1, 64), LossWeights())
    report.objective.backward()
    opt.step()
    save_checkpoint(tmp_path / "ck", gen, disc, opt, None, {"phase": 1})
    ck = load_checkpoint(tmp_path / "ck")
    assert ck.meta["phase"] == "1"
    for k, p in gen.params.items():
        assert ck.generator.params[k].data.tobytes() == p.data.tobytes()
        st_ = ck.adam_g[k]
        assert st_.step_count == 1
        assert st_.first_moment.tobytes() == opt.states[k].first_moment.tobytes()
    for k, p in disc.params.items():
        assert ck.discriminator.params[k].data.tobytes() == p.data.tobytes()


def test_checkpoint_truncation_names_parameter(tmp_path):
    save_checkpoint(tmp_path / "ck", build_generator(seed=0), build_discriminator(seed=0))
    f = tmp_path / "ck" / "gen.s2.down1.w.f32"
    f.write_bytes(f.read_bytes()[:100])
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(tmp_path / "ck")
    assert err.value.name == "gen.s2.down1.w"


def test_phase_one_weights_drive_larger_patches(tmp_path, rng):
    save_checkpoint(tmp_path / "p1", build_generator(GeneratorConfig(patch_size=128), seed=0), build_discriminator(seed=0))
    ck = load_checkpoint(tmp_path / "p1")
    preds, y = ck.generator(pyramid_tensors(_batch(rng, 1, 256), 4))
    assert y.shape == (1, 3, 256, 256)
    assert preds[2].shape[2:] == (256, 256)
    assert ck.discriminator(y).shape == (1,)


def test_discriminator_separates_after_adversarial_steps():
    # 10 toy pairs, 32 px patches, 20 epochs x 10 steps = 200 alternating steps
    pairs = []
    for k in range(10):
        gt = make_clean_frame(48, seed=k)
        pairs.append((synth_corrupt(gt, "under" if k % 2 else "over", 0.5).astype(np.float32), gt))
    gen = build_generator(GeneratorConfig(patch_size=32), seed=0)
    disc = build_discriminator(seed=0)
    cfg = PhaseConfig(epochs=20, batch_size=4, patch_size=32, lr_g=1e-3, lr_d=1e-3, dse=0)
    result = train_phase(gen, disc, pairs, cfg, LossWeights(), seed=0, phase=2)
    assert len(result.log) == 200
    real = np.stack([g[:32, :32] for _, g in pairs])
    fake = np.stack([enhance_image(gen, c[:32, :32]) for c, _ in pairs]).astype(np.float32)
    p_real = 1 / (1 + np.exp(-disc(image_batch_to_tensor(real)).data))
    p_fake = 1 / (1 + np.exp(-disc(image_batch_to_tensor(fake)).data))
    print(f"mean D(real)={p_real.mean():.4f} mean D(fake)={p_fake.mean():.4f}")
    # observed 0.5011 vs 0.5001: the generator output is already close to the
    # targets, so the margin is small but the ordering is stable under this seed
    assert p_real.mean() > p_fake.mean()
