import numpy as np
import pytest

from infovgae import numerics as nx
from infovgae.tc import (
    DiscriminatorParams, TcBatch, discriminator_from_named, discriminator_logit,
    discriminator_loss, init_discriminator, make_tc_batch, tc_penalty,
)


def disc(seed=0, t=3, hidden=8):
    return init_discriminator(t, hidden, np.random.default_rng(seed))


def zero_disc(t=3, hidden=4):
    return DiscriminatorParams(*(nx.parameter(np.zeros(s)) for s in
                                 [(t, hidden), (1, hidden), (hidden, 1), (1, 1)]))


def test_batch_identical_rows():
    z = np.tile([[1.0, 2.0, 3.0]], (5, 1))
    b = make_tc_batch(z, 0)
    assert np.array_equal(b.shuffled, b.joint)


def test_batch_single_column_is_row_permutation():
    z = np.arange(6.0).reshape(6, 1)
    b = make_tc_batch(z, 3)
    assert sorted(b.shuffled.ravel()) == sorted(z.ravel())


def test_batch_column_multisets_preserved():
    z = np.random.default_rng(0).normal(size=(16, 3))
    b = make_tc_batch(z, 1)
    assert np.array_equal(np.sort(b.shuffled, axis=0), np.sort(z, axis=0))
    assert not np.array_equal(b.shuffled, z)


def test_batch_needs_two_rows():
    with pytest.raises(ValueError):
        make_tc_batch(np.ones((1, 3)), 0)


def test_zero_weights_logit_zero():
    out = discriminator_logit(np.random.default_rng(0).normal(size=(7, 3)), zero_disc())
    assert np.array_equal(out.value, np.zeros((7, 1)))
    assert tc_penalty(np.ones((4, 3)), zero_disc()).value[0, 0] == 0.0


def test_logits_row_independent_and_linear_in_last_layer():
    d = disc()
    z = np.random.default_rng(1).normal(size=(3, 3))
    dup = np.vstack([z, z[:1]])
    out = discriminator_logit(dup, d).value
    assert out[3, 0] == out[0, 0]
    base = discriminator_logit(z, d).value
    d.w2.value = d.w2.value * 2.5
    d.b2.value = d.b2.value * 2.5
    assert np.allclose(discriminator_logit(z, d).value, 2.5 * base, rtol=1e-14)


def test_penalty_is_mean_logit():
    d = zero_disc()
    d.b2.value = np.array([[2.0]])
    assert tc_penalty(np.ones((5, 3)), d).value[0, 0] == 2.0
    d = disc(4)
    z = np.random.default_rng(2).normal(size=(10, 3))
    phi = 1 / (1 + np.exp(-discriminator_logit(z, d).value))
    slow = np.mean(np.log(phi) - np.log(1 - phi))
    assert tc_penalty(z, d).value[0, 0] == pytest.approx(slow, abs=1e-10)


def test_loss_log2_at_zero_and_near_zero_when_separated():
    b = make_tc_batch(np.random.default_rng(0).normal(size=(8, 3)), 0)
    assert discriminator_loss(b, zero_disc()).value[0, 0] == pytest.approx(np.log(2), abs=1e-15)
    # joint rows at +1, shuffled at -1: logits 9*4 - 16 = 20 and 9*4*(-0.2) - 16 = -23.2
    d = zero_disc(t=1)
    d.w1.value = np.ones((1, 4))
    d.w2.value = np.full((4, 1), 9.0)
    d.b2.value = np.array([[-16.0]])
    sep = TcBatch(joint=np.ones((4, 1)), shuffled=-np.ones((4, 1)))
    assert discriminator_logit(sep.joint, d).value[0, 0] == pytest.approx(20.0)
    assert discriminator_logit(sep.shuffled, d).value[0, 0] == pytest.approx(-23.2)
    assert discriminator_loss(sep, d).value[0, 0] < 1e-6


def test_loss_statistically_symmetric_in_permutation_seed():
    rng = np.random.default_rng(0)
    z = np.column_stack([rng.normal(size=512), rng.exponential(size=512), rng.random(512)])
    d = disc(1, hidden=16)
    losses = [discriminator_loss(make_tc_batch(z, s), d).value[0, 0] for s in (11, 12)]
    assert abs(losses[0] - losses[1]) < 0.02


def test_gradient_isolation():
    d = disc(3)
    z = nx.parameter(np.random.default_rng(0).normal(size=(6, 3)))
    nx.backward(tc_penalty(z, d))
    assert all(not p.grad.any() for p in d.tensors())
    assert z.grad.any()
    before = tc_penalty(z.value, d).value[0, 0]
    d.w2.value = d.w2.value + 0.1
    assert tc_penalty(z.value, d).value[0, 0] != before

    z2 = nx.parameter(np.random.default_rng(1).normal(size=(6, 3)))
    batch = make_tc_batch(z2.value, 0)
    nx.backward(discriminator_loss(batch, d))
    assert not z2.grad.any()
    assert any(p.grad.any() for p in d.tensors())


def test_discriminator_gradients_finite_difference():
    d = disc(5)
    batch = make_tc_batch(np.random.default_rng(3).normal(size=(12, 3)), 2)
    err = nx.finite_difference_check(lambda: discriminator_loss(batch, d), d.tensors(), h=1e-6)
    assert err < 1e-4


def test_named_round_trip():
    d = disc(2)
    back = discriminator_from_named({n: p.value for n, p in d.named()})
    assert all(np.array_equal(a.value, b.value) for a, b in zip(d.tensors(), back.tensors()))
    with pytest.raises(ValueError):
        discriminator_from_named({})
