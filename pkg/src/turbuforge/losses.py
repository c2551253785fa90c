"""Adversarial losses: the three discriminator terms and the generator term.

The discriminator loss combines a drift-regularized real term, a fake term,
and an input-gradient penalty on random mixes of real and fake frames:

    L_real = (p_d/K) sum D(y)^2 - (1/K) sum D(y)
    L_fake = (1/K) sum D(y~)
    L_mix  = (p_r/K) sum (||grad_b D(b)||_2 - 1)^2,  b = a*y~ + (1-a)*y
    L_D    = L_real + L_fake + L_mix
    L_G    = -(1/K) sum D(y~)

The defaults p_d = 0.001 and p_r = 10 follow the drift-penalty and
gradient-penalty weights used with this loss family.
"""

from __future__ import annotations

import torch

DEFAULT_P_D = 0.001
DEFAULT_P_R = 10.0


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor,
                       mixed_penalties: torch.Tensor,
                       p_d: float = DEFAULT_P_D, p_r: float = DEFAULT_P_R):
    """The three discriminator terms and their sum, as (L_real, L_fake,
    L_mix, L_D). ``mixed_penalties`` holds the per-sample values
    (||grad_b D(b)|| - 1)^2."""
    real_scores = torch.as_tensor(real_scores)
    fake_scores = torch.as_tensor(fake_scores)
    mixed_penalties = torch.as_tensor(mixed_penalties)
    k = real_scores.numel()
    if fake_scores.numel() != k or mixed_penalties.numel() != k:
        raise ValueError(
            f"score lists disagree in length: {k} real, "
            f"{fake_scores.numel()} fake, {mixed_penalties.numel()} mixed")
    if k == 0:
        raise ValueError("need at least one sample")
    l_real = p_d * (real_scores ** 2).mean() - real_scores.mean()
    l_fake = fake_scores.mean()
    l_mix = p_r * mixed_penalties.mean()
    return l_real, l_fake, l_mix, l_real + l_fake + l_mix


def generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """L_G = -(1/K) sum D(y~)."""
    fake_scores = torch.as_tensor(fake_scores)
    if fake_scores.numel() < 1:
        raise ValueError("need at least one sample")
    return -fake_scores.mean()


def gradient_penalty(d_apply, real: torch.Tensor, fake: torch.Tensor,
                     mix_alphas: torch.Tensor) -> torch.Tensor:
    """Per-sample penalties (||grad_b D(b)|| - 1)^2 on mixed frames.

    ``real`` and ``fake`` are (K, N, N); ``mix_alphas`` is (K,) in [0, 1],
    one mixing weight per pair. The inner gradient stays on the tape
    (create_graph) so the penalty can be differentiated w.r.t. D's
    parameters.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake "
                         f"{tuple(fake.shape)} must match")
    k = real.shape[0]
    if mix_alphas.numel() != k:
        raise ValueError("one mixing weight per pair required")
    a = mix_alphas.reshape(k, *([1] * (real.dim() - 1))).to(real.dtype)
    b = (a * fake.detach() + (1.0 - a) * real.detach()).requires_grad_(True)
    scores = d_apply(b)
    if scores.shape != (k,):
        raise ValueError("d_apply must return one score per frame")
    (grad_b,) = torch.autograd.grad(scores.sum(), b, create_graph=True)
    norms = grad_b.reshape(k, -1).norm(dim=1)
    return (norms - 1.0) ** 2
