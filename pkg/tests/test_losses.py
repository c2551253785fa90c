"""Tests for the adversarial loss terms.

The binding oracle is an independent scalar re-implementation of the four
formulas in plain Python floats; the tensor versions must agree to 1e-12.
"""

import numpy as np
import pytest
import torch

from turbuforge.losses import (DEFAULT_P_D, DEFAULT_P_R, discriminator_loss,
                               generator_loss, gradient_penalty)

torch.set_default_dtype(torch.float64)


def _oracle_d(real, fake, pen, p_d, p_r):
    """Scalar re-implementation of the three terms, float arithmetic only."""
    k = len(real)
    l_real = p_d * sum(s * s for s in real) / k - sum(real) / k
    l_fake = sum(fake) / k
    l_mix = p_r * sum(pen) / k
    return l_real, l_fake, l_mix, l_real + l_fake + l_mix


def test_zero_discriminator_gives_pure_penalty():
    """D == 0 everywhere: zero scores, zero input gradient, so every mixed
    penalty is (0-1)^2 = 1 and L_D = p_r = 10."""
    zeros = torch.zeros(16)
    ones = torch.ones(16)
    l_real, l_fake, l_mix, l_d = discriminator_loss(zeros, zeros, ones)
    assert l_real.item() == 0.0
    assert l_fake.item() == 0.0
    assert l_mix.item() == pytest.approx(10.0, abs=1e-15)
    assert l_d.item() == pytest.approx(10.0, abs=1e-15)


def test_constant_real_scores_closed_form():
    s = 1.75
    real = torch.full((8,), s)
    l_real, _, _, _ = discriminator_loss(real, torch.zeros(8), torch.zeros(8))
    assert l_real.item() == pytest.approx(DEFAULT_P_D * s * s - s, abs=1e-15)


def test_discriminator_loss_matches_scalar_oracle():
    rng = np.random.Generator(np.random.Philox(key=[7, 0]))
    for _ in range(20):
        k = int(rng.integers(1, 12))
        real = rng.normal(size=k)
        fake = rng.normal(size=k)
        pen = rng.uniform(0, 2, size=k)
        p_d = float(rng.uniform(1e-4, 1e-2))
        p_r = float(rng.uniform(1, 20))
        got = discriminator_loss(torch.as_tensor(real), torch.as_tensor(fake),
                                 torch.as_tensor(pen), p_d, p_r)
        want = _oracle_d(list(real), list(fake), list(pen), p_d, p_r)
        for g, w in zip(got, want):
            assert abs(g.item() - w) < 1e-12


def test_loss_decomposition_exact():
    rng = np.random.Generator(np.random.Philox(key=[8, 0]))
    real = torch.as_tensor(rng.normal(size=8))
    fake = torch.as_tensor(rng.normal(size=8))
    pen = torch.as_tensor(rng.uniform(0, 2, size=8))
    l_real, l_fake, l_mix, l_d = discriminator_loss(real, fake, pen)
    assert l_d.item() == (l_real + l_fake + l_mix).item()


def test_mismatched_batch_raises():
    with pytest.raises(ValueError):
        discriminator_loss(torch.zeros(4), torch.zeros(5), torch.zeros(4))
    with pytest.raises(ValueError):
        discriminator_loss(torch.zeros(0), torch.zeros(0), torch.zeros(0))


def test_generator_loss():
    assert generator_loss(torch.full((5,), 2.5)).item() == pytest.approx(-2.5)
    assert generator_loss(torch.tensor([1.0, -1.0])).item() == 0.0
    rng = np.random.Generator(np.random.Philox(key=[9, 0]))
    scores = rng.normal(size=11)
    got = generator_loss(torch.as_tensor(scores)).item()
    assert abs(got - (-sum(scores) / 11)) < 1e-12
    with pytest.raises(ValueError):
        generator_loss(torch.zeros(0))


def test_gradient_penalty_linear_discriminator():
    """D(b) = w.b gives grad_b D = w for every b, so every penalty equals
    (||w|| - 1)^2 no matter how the pair is mixed."""
    torch.manual_seed(0)
    w = torch.randn(6, 6)

    def d_apply(b):
        return (b * w).sum(dim=(1, 2))

    real = torch.rand(4, 6, 6)
    fake = torch.rand(4, 6, 6)
    pen = gradient_penalty(d_apply, real, fake, torch.rand(4))
    expected = (w.norm() - 1.0) ** 2
    assert (pen - expected).abs().max().item() < 1e-12


def test_gradient_penalty_mixing_endpoints():
    """alpha = 1 evaluates at the fake frame, alpha = 0 at the real one;
    D(b) = sum b^2 has grad 2b so the penalty is (2||b|| - 1)^2."""

    def d_apply(b):
        return (b ** 2).reshape(b.shape[0], -1).sum(dim=1)

    real = torch.full((2, 3, 3), 0.5)
    fake = torch.full((2, 3, 3), 0.25)
    pen = gradient_penalty(d_apply, real, fake, torch.tensor([0.0, 1.0]))
    for p, frame in zip(pen, (real[0], fake[1])):
        want = (2.0 * frame.norm() - 1.0) ** 2
        assert abs(p.item() - want.item()) < 1e-12


def test_gradient_penalty_differentiable_wrt_discriminator():
    torch.manual_seed(1)
    w = torch.randn(4, 4, requires_grad=True)

    def d_apply(b):
        return (b * w).sum(dim=(1, 2))

    pen = gradient_penalty(d_apply, torch.rand(3, 4, 4), torch.rand(3, 4, 4),
                           torch.rand(3))
    (grad,) = torch.autograd.grad(pen.mean(), w)
    expected = 2.0 * (w.detach().norm() - 1.0) * w.detach() / w.detach().norm()
    assert (grad - expected).abs().max().item() < 1e-10


def test_gradient_penalty_validation():
    def d_apply(b):
        return b.reshape(b.shape[0], -1).sum(dim=1)

    with pytest.raises(ValueError):
        gradient_penalty(d_apply, torch.rand(2, 4, 4), torch.rand(3, 4, 4),
                         torch.rand(2))
    with pytest.raises(ValueError):
        gradient_penalty(d_apply, torch.rand(2, 4, 4), torch.rand(2, 4, 4),
                         torch.rand(3))
