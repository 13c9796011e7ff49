import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssgan import losses
from ssgan.core import Tensor, finite_diff_check
from ssgan.errors import ContractError, NonFiniteError, ShapeError

LN4 = 1.386294
NEG_LN_075 = 0.287682


def logits_with(fake=0.0, real=(0.0, 0.0, 0.0), shape=(2, 3, 3)):
    n, h, w = shape
    z = np.zeros((n, 4, h, w), dtype=np.float32)
    for c, v in enumerate(real):
        z[:, c] = v
    z[:, 3] = fake
    return Tensor(z)


def random_logits(seed, shape=(2, 4, 3, 3), scale=3.0):
    return np.random.default_rng(seed).normal(scale=scale, size=shape).astype(np.float32)


# real_prob

def test_real_prob_equal_logits():
    np.testing.assert_allclose(losses.real_prob(logits_with()).data, 0.75, atol=1e-7)


def test_real_prob_fake_dominant():
    assert losses.real_prob(logits_with(fake=30.0)).data.max() < 1e-9


def test_real_prob_symmetric_in_real_channels():
    z = random_logits(1)
    perm = z[:, [2, 0, 1, 3]]
    np.testing.assert_allclose(losses.real_prob(z).data, losses.real_prob(perm).data, rtol=1e-6)


def test_real_prob_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        losses.real_prob(np.zeros((1, 3, 2, 2), np.float32))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_real_and_fake_prob_sum_to_one(seed):
    z = random_logits(seed)
    total = losses.real_prob(z).data + losses.fake_prob(z).data
    np.testing.assert_allclose(total, 1.0, atol=1e-6)


# supervised

def test_supervised_equal_logits_is_ln4():
    mask = np.random.default_rng(0).integers(0, 3, size=(2, 3, 3))
    assert losses.supervised_loss(logits_with(), mask).item() == pytest.approx(LN4, abs=1e-5)


def test_supervised_saturates():
    mask = np.random.default_rng(1).integers(0, 3, size=(2, 3, 3))
    z = np.zeros((2, 4, 3, 3), np.float32)
    np.put_along_axis(z, mask[:, None], 30.0, axis=1)
    assert losses.supervised_loss(z, mask).item() < 1e-9


def test_supervised_ignores_unlabeled_pixels():
    z = np.tile(random_logits(2, (1, 4, 1, 1)), (2, 1, 3, 3))
    mask = np.ones((2, 3, 3), np.uint8)
    half = mask.copy()
    half.reshape(-1)[::2] = 255
    full = losses.supervised_loss(z, mask).item()
    assert losses.supervised_loss(z, half).item() == pytest.approx(full, rel=1e-6)


def test_supervised_all_ignored_is_error():
    with pytest.raises(ContractError):
        losses.supervised_loss(logits_with(), np.full((2, 3, 3), 255, np.uint8))


def test_supervised_rejects_fake_label():
    with pytest.raises(ShapeError):
        losses.supervised_loss(logits_with(), np.full((2, 3, 3), 3, np.uint8))


# unsupervised terms

def test_unsup_real_fixtures():
    assert losses.unsupervised_real_loss(logits_with()).item() == pytest.approx(NEG_LN_075, abs=1e-5)
    assert losses.unsupervised_real_loss(logits_with(fake=-30.0)).item() == pytest.approx(0.0, abs=1e-6)


def test_unsup_real_decreases_with_fake_logit():
    z = random_logits(3)
    before = losses.unsupervised_real_loss(z).item()
    z[0, 3, 1, 1] -= 0.5
    assert losses.unsupervised_real_loss(z).item() < before


def test_unsup_fake_fixtures():
    assert losses.unsupervised_fake_loss(logits_with()).item() == pytest.approx(LN4, abs=1e-5)
    assert losses.unsupervised_fake_loss(logits_with(fake=30.0)).item() == pytest.approx(0.0, abs=1e-6)


def test_unsup_fake_equals_cross_entropy_to_fake_class():
    z = random_logits(4, scale=1.0)
    n, _, h, w = z.shape
    lse = np.log(np.exp(z.astype(np.float64)).sum(axis=1))
    ce = float((lse - z[:, 3]).mean())
    assert losses.unsupervised_fake_loss(z).item() == pytest.approx(ce, abs=1e-6)


def test_generator_loss_fixtures():
    assert losses.generator_loss(logits_with()).item() == pytest.approx(NEG_LN_075, abs=1e-5)
    assert losses.generator_loss(logits_with(fake=-30.0)).item() == pytest.approx(0.0, abs=1e-6)
    z = logits_with()
    g = losses.generator_loss(z).item()
    f = losses.unsupervised_fake_loss(z).item()
    assert losses.generator_loss(z).item() == g and losses.unsupervised_fake_loss(z).item() == f


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 40.0))
def test_losses_nonnegative_and_finite(seed, scale):
    z = random_logits(seed, scale=scale)
    mask = np.random.default_rng(seed).integers(0, 3, size=(2, 3, 3))
    for value in (losses.supervised_loss(z, mask), losses.unsupervised_real_loss(z),
                  losses.unsupervised_fake_loss(z), losses.generator_loss(z)):
        assert np.isfinite(value.item()) and value.item() >= 0


# discriminator total

def test_discriminator_loss_arithmetic():
    assert losses.discriminator_loss(1.0, 0.2, 0.3, 1.0) == pytest.approx(1.5)
    assert losses.discriminator_loss(1.0, 0.2, 0.3, 0.0) == 1.0
    assert losses.discriminator_loss(LN4, NEG_LN_075, LN4, 1.0) == pytest.approx(3.060270, abs=1e-6)


def test_discriminator_loss_from_fixture_logits():
    z = logits_with()
    mask = np.zeros((2, 3, 3), np.uint8)
    total = losses.discriminator_loss(losses.supervised_loss(z, mask), losses.unsupervised_real_loss(z),
                                      losses.unsupervised_fake_loss(z), 1.0)
    assert total.item() == pytest.approx(3.060270, abs=1e-5)


def test_discriminator_loss_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        losses.discriminator_loss(float("nan"), 0.0, 0.0)
    with pytest.raises(ContractError):
        losses.discriminator_loss(1.0, 0.0, 0.0, -1.0)


def test_breakdown_identity():
    b = losses.LossBreakdown(sup=1.0, unsup_real=0.25, unsup_fake=0.5, d_total=1.75, g_loss=0.3)
    assert abs(b.d_total - (b.sup + 1.0 * (b.unsup_real + b.unsup_fake))) < 1e-6


# gradients with respect to logits

@pytest.mark.parametrize("name", ["sup", "unsup_real", "unsup_fake", "gen"])
def test_loss_gradients_match_finite_differences(name):
    z = random_logits(7, shape=(1, 4, 4, 4), scale=1.5).astype(np.float64)
    mask = np.random.default_rng(8).integers(0, 3, size=(1, 4, 4))
    mask[0, 0, :2] = 255
    fns = {
        "sup": lambda p: losses.supervised_loss(p["z"], mask),
        "unsup_real": lambda p: losses.unsupervised_real_loss(p["z"]),
        "unsup_fake": lambda p: losses.unsupervised_fake_loss(p["z"]),
        "gen": lambda p: losses.generator_loss(p["z"]),
    }
    assert finite_diff_check(fns[name], {"z": z}) < 1e-3
