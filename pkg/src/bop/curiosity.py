"""Curiosity bonus from the encoder's information gain, and reward augmentation."""

from __future__ import annotations

import numpy as np

from .advantage import AdvantageInputs
from .diffcore import ContractError
from .retdist import SharedVae, encode


def gaussian_kl(mu1, sigma1, mu2, sigma2) -> np.ndarray:
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)) for diagonal Gaussians, summed over the last axis."""
    mu1, sigma1, mu2, sigma2 = (np.asarray(a, dtype=np.float64) for a in (mu1, sigma1, mu2, sigma2))
    if np.any(sigma1 <= 0) or np.any(sigma2 <= 0):
        raise ContractError("gaussian_kl needs strictly positive sigmas")
    var_ratio = (sigma1 / sigma2) ** 2
    terms = 0.5 * (var_ratio + ((mu1 - mu2) / sigma2) ** 2 - 1.0) - np.log(sigma1 / sigma2)
    return np.maximum(terms.sum(axis=-1), 0.0)


def information_gain(shared: SharedVae, x_on_policy, g_sample, states) -> np.ndarray:
    """KL(q(.|x^k, s) || q(.|g^i, s)); computed on raw arrays so no gradient is recorded."""
    mu1, s1 = encode(shared, x_on_policy, states)
    mu2, s2 = encode(shared, g_sample, states)
    return gaussian_kl(mu1, s1, mu2, s2)


def curiosity_bonus(kl, beta: float, clip: float | None = 1.0) -> np.ndarray:
    bonus = beta * np.asarray(kl, dtype=np.float64)
    return bonus if clip is None else np.minimum(bonus, clip)


def augment(inputs: AdvantageInputs, kl, beta: float, clip: float | None = 1.0) -> np.ndarray:
    """Advantages recomputed with rewards ``r + bonus``; Bellman targets are not touched."""
    if beta == 0.0:
        return inputs.compute()
    return inputs.with_rewards(inputs.rewards + curiosity_bonus(kl, beta, clip)).compute()
