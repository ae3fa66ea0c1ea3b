import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expocorr.core import Tensor, finite_diff_check
from expocorr.losses import (
    LossError,
    LossWeights,
    NonFiniteLossError,
    adversarial_generator_loss,
    discriminator_loss,
    l1_loss,
    pyramid_loss,
    pyramid_loss_terms,
    reconstruction_loss,
    ssim_loss,
    total_loss,
)
from expocorr.metrics import ssim

from oracles import bce_direct, log_sigmoid_clamped

LN2 = math.log(2.0)


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def _level_pairs(rng, sizes=((16, 16), (8, 8), (4, 4))):
    preds = {i: t(rng.normal(size=(2, 3) + s)) for i, s in zip((2, 3, 4), sizes)}
    targets = {i: t(rng.normal(size=(2, 3) + s)) for i, s in zip((2, 3, 4), sizes)}
    return preds, targets


def test_default_weights():
    w = LossWeights()
    assert (w.alpha, w.beta, w.gamma, w.delta) == (0.25, 0.25, 1.0, 0.25)
    with pytest.raises(LossError):
        LossWeights(alpha=-1.0)


# -- L1 and reconstruction ----------------------------------------------------------------


def test_l1_trivial_cases(rng):
    a = rng.random((2, 3, 4, 4))
    assert float(l1_loss(t(a), t(a)).data) == 0.0
    assert float(l1_loss(t(np.ones((3, 3))), t(np.zeros((3, 3)))).data) == 1.0


def test_l1_against_elementwise_oracle(rng):
    a, b = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(2, 3, 5, 5))
    assert abs(float(l1_loss(t(a), t(b)).data) - np.abs(a - b).sum() / a.size) < 1e-12


def test_l1_shape_mismatch():
    with pytest.raises(LossError):
        l1_loss(t(np.zeros((2, 2))), t(np.zeros((2, 3))))


def test_reconstruction_cases(rng):
    target = rng.random((1, 3, 8, 8))
    assert float(reconstruction_loss(t(target), t(target)).data) == 0.0
    assert float(reconstruction_loss(t(target + 0.1), t(target)).data) == pytest.approx(0.1, abs=1e-12)
    a, b = rng.random((1, 3, 8, 8)), rng.random((1, 3, 8, 8))
    assert float(reconstruction_loss(t(a), t(b)).data) == float(l1_loss(t(a), t(b)).data)


# -- pyramid loss --------------------------------------------------------------------------


def test_pyramid_loss_zero_when_equal(rng):
    preds, _ = _level_pairs(rng)
    assert float(pyramid_loss(preds, preds).data) == 0.0


def test_pyramid_loss_unit_levels_give_seven():
    preds = {i: t(np.ones((1, 3, 2 ** (6 - i), 2 ** (6 - i)))) for i in (2, 3, 4)}
    targets = {i: t(np.zeros((1, 3, 2 ** (6 - i), 2 ** (6 - i)))) for i in (2, 3, 4)}
    assert float(pyramid_loss(preds, targets).data) == 7.0


def test_pyramid_loss_against_weighted_sum_script(rng):
    preds, targets = _level_pairs(rng)
    expected = sum(2 ** (i - 2) * np.mean(np.abs(targets[i].data - preds[i].data)) for i in (2, 3, 4))
    assert abs(float(pyramid_loss(preds, targets).data) - expected) < 1e-10


def test_pyramid_loss_weights_bind_to_index(rng):
    preds, targets = _level_pairs(rng)
    reordered_p = {i: preds[i] for i in (4, 2, 3)}
    reordered_t = {i: targets[i] for i in (3, 4, 2)}
    assert float(pyramid_loss(reordered_p, reordered_t).data) == float(pyramid_loss(preds, targets).data)
    seq = float(pyramid_loss([preds[2], preds[3], preds[4]], [targets[2], targets[3], targets[4]]).data)
    assert seq == float(pyramid_loss(preds, targets).data)


def test_pyramid_loss_validation(rng):
    preds, targets = _level_pairs(rng)
    with pytest.raises(LossError):
        pyramid_loss({2: preds[2], 3: preds[3]}, targets)
    with pytest.raises(LossError):
        pyramid_loss([preds[2], preds[3]], [targets[2], targets[3]])
    with pytest.raises(LossError):
        pyramid_loss({2: preds[3], 3: preds[3], 4: preds[4]}, targets)


# -- SSIM loss ----------------------------------------------------------------------------------


def test_ssim_loss_identical_is_zero(rng):
    a = rng.random((1, 3, 16, 16))
    assert float(ssim_loss(t(a), t(a)).data) == 0.0


def test_ssim_loss_substitution(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    s = ssim(b, a)
    value = float(ssim_loss(t(a.transpose(2, 0, 1)[None]), t(b.transpose(2, 0, 1)[None])).data)
    assert value == pytest.approx((1 - s) / 2, abs=1e-12)
    # SSIM 0.5 -> 0.25 and SSIM -1 -> 1 follow from the same expression
    assert (1 - 0.5) / 2 == 0.25 and (1 - (-1)) / 2 == 1.0


def test_ssim_loss_range_on_anticorrelated(rng):
    a = rng.random((1, 3, 16, 16))
    v = float(ssim_loss(t(1 - a), t(a)).data)
    assert 0.5 < v <= 1.0


# -- adversarial terms -------------------------------------------------------------------------


def test_adversarial_at_logit_zero():
    loss = adversarial_generator_loss(t(np.zeros(4)), 256, 256, 4)
    assert float(loss.normalized.data) == pytest.approx(LN2, rel=1e-12)
    assert loss.raw == pytest.approx(3 * 256 * 256 * 4 * LN2, rel=1e-12)
    assert loss.raw == pytest.approx(5.4515e5, rel=1e-4)


def test_adversarial_confident_real_limit():
    loss = adversarial_generator_loss(t(np.full(3, 1e4)), 8, 8)
    assert float(loss.normalized.data) == pytest.approx(-math.log(1 - 1e-7), rel=1e-9)
    assert float(loss.normalized.data) < 1e-6


def test_adversarial_against_script(rng):
    x = rng.normal(scale=3.0, size=7)
    loss = adversarial_generator_loss(t(x), 64, 32, 4)
    expected = -3 * 64 * 32 * 4 * np.mean([log_sigmoid_clamped(v) for v in x])
    assert abs(loss.raw - expected) <= 1e-9 * abs(expected)


def test_adversarial_rejects_nonfinite():
    with pytest.raises(NonFiniteLossError):
        adversarial_generator_loss(t([0.0, math.nan]), 8, 8)


def test_discriminator_loss_cases(rng):
    assert float(discriminator_loss(t(np.zeros(3)), t(np.zeros(5))).data) == pytest.approx(2 * LN2, rel=1e-12)
    perfect = float(discriminator_loss(t(np.full(2, 1e4)), t(np.full(2, -1e4))).data)
    assert perfect == pytest.approx(-2 * math.log(1 - 1e-7), rel=1e-9)
    real, fake = rng.normal(scale=2, size=6), rng.normal(scale=2, size=4)
    assert abs(float(discriminator_loss(t(real), t(fake)).data) - bce_direct(real, fake)) < 1e-9
    with pytest.raises(LossError):
        discriminator_loss(t(np.zeros(0)), t(np.zeros(2)))


# -- total ------------------------------------------------------------------------------------


def test_total_arithmetic_example():
    report = total_loss(4.0, 8.0, 0.2, 12.0, LossWeights())
    assert abs(report.total - 6.2) < 1e-12
    assert total_loss(0.0, 0.0, 0.0, 0.0).total == 0.0
    assert total_loss(4.0, 8.0, 0.2, 12.0, LossWeights(1, 0, 0, 0)).total == 4.0


def test_total_rejects_nonfinite():
    with pytest.raises(NonFiniteLossError, match="ssim"):
        total_loss(1.0, 1.0, math.inf, 0.0)


@given(
    comps=st.lists(st.floats(0, 100), min_size=4, max_size=4),
    weights=st.lists(st.floats(0, 5), min_size=4, max_size=4),
    which=st.integers(0, 3),
    bump=st.floats(0, 10),
)
def test_total_is_linear_in_each_component(comps, weights, which, bump):
    w = LossWeights(*weights)
    base = total_loss(*comps, w)
    assert abs(base.total - sum(c * k for c, k in zip(comps, weights))) <= 1e-9 * max(1.0, abs(base.total))
    moved = list(comps)
    moved[which] += bump
    delta = total_loss(*moved, w).total - base.total
    assert abs(delta - weights[which] * bump) <= 1e-9 * max(1.0, abs(base.total) + abs(delta))


def test_total_keeps_differentiable_objective(rng):
    x = Tensor(rng.random((1, 3, 4, 4)), requires_grad=True)
    target = t(rng.random((1, 3, 4, 4)))
    rec = l1_loss(x, target)
    report = total_loss(0.0, rec, 0.0, 0.0)
    report.objective.backward()
    assert x.grad is not None
    assert report.total == pytest.approx(0.25 * float(rec.data))


@given(seed=st.integers(0, 2**16))
def test_losses_nonnegative_and_zero_on_identity(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((1, 3, 12, 12)), r.random((1, 3, 12, 12))
    for fn in (l1_loss, reconstruction_loss, ssim_loss):
        assert float(fn(t(a), t(b)).data) >= 0.0
        assert float(fn(t(a), t(a)).data) == 0.0
    preds = {i: t(r.random((1, 3, 2 ** (5 - i), 2 ** (5 - i)))) for i in (2, 3, 4)}
    assert float(pyramid_loss(preds, preds).data) == 0.0
    assert float(adversarial_generator_loss(t(r.normal(size=3)), 12, 12).normalized.data) >= 0.0


# -- gradients ---------------------------------------------------------------------------------


def _nonkink(r, shape):
    return r.random(shape) * 0.8 + 0.1


def test_loss_gradients():
    r = np.random.default_rng(11)
    for _ in range(10):
        target = _nonkink(r, (1, 3, 12, 12))
        shift = np.where(r.random(target.shape) < 0.5, -1, 1) * (0.05 + 0.1 * r.random(target.shape))
        point = t(target + shift)
        assert finite_diff_check(lambda x: l1_loss(x, t(target)), point, 1e-6) < 1e-4
        assert finite_diff_check(lambda x: reconstruction_loss(x, t(target)), point, 1e-6) < 1e-4
        assert finite_diff_check(lambda x: ssim_loss(x, t(target)), point, 1e-3, order=4) < 1e-4
        assert finite_diff_check(lambda x: adversarial_generator_loss(x, 8, 8).normalized, t(r.normal(size=5)), 1e-6) < 1e-4
        fake = t(r.normal(size=4))
        assert finite_diff_check(lambda x: discriminator_loss(x, fake), t(r.normal(size=4)), 1e-6) < 1e-4
        real = t(r.normal(size=4))
        assert finite_diff_check(lambda x: discriminator_loss(real, x), t(r.normal(size=4)), 1e-6) < 1e-4


def test_pyramid_loss_gradient():
    r = np.random.default_rng(12)
    for _ in range(10):
        targets = {i: t(r.random((1, 3, 2 ** (5 - i), 2 ** (5 - i)))) for i in (2, 3, 4)}
        fixed = {3: targets[3], 4: targets[4]}
        point = targets[2].data + np.where(r.random(targets[2].shape) < 0.5, -0.2, 0.2)

        def fn(x):
            return pyramid_loss({2: x, **fixed}, targets)

        assert finite_diff_check(fn, t(point), 1e-6) < 1e-4
