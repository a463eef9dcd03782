"""Adversarial, KL and reconstruction objectives plus the reparameterized sampler."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .rng import RngStream
from .tensor import Tensor

PROB_CLAMP = 1e-7
LOG_VAR_FLOOR = -20.0


def _check_prob(p: Tensor) -> None:
    if np.any(p.data < 0.0) or np.any(p.data > 1.0):
        raise ValueError("discriminator scores must lie in [0, 1]")


def bce_pair_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Mean of ``log D(x) + log(1 - D(G(z)))`` over the batch (the value D maximizes)."""
    _check_prob(d_real)
    _check_prob(d_fake)
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
    return (d_real.clip(lo, hi).log() + (1.0 - d_fake.clip(lo, hi)).log()).mean()


def discriminator_objective(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """What the discriminator minimizes: the negated pair loss."""
    return -bce_pair_loss(d_real, d_fake)


def generator_objective(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss ``-log D(G(z))``, batch mean."""
    _check_prob(d_fake)
    return -(d_fake.clip(PROB_CLAMP, 1.0 - PROB_CLAMP).log()).mean()


def saturating_generator_term(d_fake: Tensor) -> Tensor:
    """``log(1 - D(G(z)))``, batch mean, as it appears in the adversarial value."""
    _check_prob(d_fake)
    return (1.0 - d_fake.clip(PROB_CLAMP, 1.0 - PROB_CLAMP)).log().mean()


# Logit forms used by training; same values as above without the clamp, but
# free of saturation when the sigmoid would round to 0 or 1 in float32.
def discriminator_objective_logits(real_logit: Tensor, fake_logit: Tensor) -> Tensor:
    return -(F.log_sigmoid(real_logit) + F.log_sigmoid(-fake_logit)).mean()


def generator_objective_logits(fake_logit: Tensor) -> Tensor:
    return -F.log_sigmoid(fake_logit).mean()


def pair_value_logits(real_logit: np.ndarray, fake_logit: np.ndarray) -> float:
    """Adversarial value ``log D(x) + log(1 - D(G(z)))`` from raw logits (no graph)."""
    r = np.minimum(real_logit, 0) - np.log1p(np.exp(-np.abs(real_logit)))
    f = np.minimum(-fake_logit, 0) - np.log1p(np.exp(-np.abs(fake_logit)))
    return float(np.mean(r) + np.mean(f))


def kl_gaussian(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dims, mean over batch rows."""
    per = (log_var.exp() + mu * mu - 1.0 - log_var) * 0.5
    if per.ndim == 1:
        return per.sum()
    return per.sum(axis=tuple(range(1, per.ndim))).mean()


def recon_loss(pred: Tensor, target) -> Tensor:
    """Unsquared Euclidean norm of the voxelwise residual per sample, mean over batch.

    The first axis is the batch; a sample with zero residual contributes a
    zero gradient.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    axes = tuple(range(1, diff.ndim))
    sq = (diff * diff).sum(axis=axes)
    norm = np.sqrt(sq.data)
    safe = np.where(norm > 0, norm, 1.0)
    out = Tensor._make(norm, (sq,), lambda g: (np.where(norm > 0, g * 0.5 / safe, 0.0),), "norm")
    return out.mean()


def reparameterize(mu: Tensor, log_var: Tensor, stream: RngStream, eps: np.ndarray | None = None) -> Tensor:
    """``z = mu + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)`` held constant.

    ``log_var`` is clamped below at -20 so a vanishing variance returns ``mu``.
    """
    if eps is None:
        eps = stream.normal(mu.shape).astype(mu.dtype)
    std = (log_var.clip(LOG_VAR_FLOOR, np.inf) * 0.5).exp()
    return mu + std * Tensor(eps.astype(mu.dtype))
