"""Advantage estimation: on-policy GAE and V-trace for off-policy heads.

Arrays follow one convention: ``rewards`` and ``dones`` have length T,
``values`` has length T + 1 (the last entry is the bootstrap sample).
A ``done`` at step t zeroes every bootstrap across that boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diffcore import ContractError


def _check(rewards, values, dones, *others):
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if values.shape != (rewards.shape[0] + 1,) or dones.shape != rewards.shape:
        raise ContractError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    for o in others:
        if np.shape(o) != rewards.shape:
            raise ContractError(f"length mismatch: {np.shape(o)} vs rewards {rewards.shape}")
    return rewards, values, dones


def gae(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    rewards, values, dones = _check(rewards, values, dones)
    not_done = 1.0 - dones
    deltas = rewards + gamma * values[1:] * not_done - values[:-1]
    adv = np.zeros_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    return adv


@dataclass(frozen=True)
class ImportanceWeights:
    rho: np.ndarray
    c: np.ndarray
    rho_bar: float
    c_bar: float


def importance_weights(behaviour_logp, target_logp, rho_bar: float = 1.0,
                       c_bar: float = 1.0) -> ImportanceWeights:
    ratio = np.exp(np.asarray(target_logp, dtype=np.float64)
                   - np.asarray(behaviour_logp, dtype=np.float64))
    return ImportanceWeights(np.minimum(rho_bar, ratio), np.minimum(c_bar, ratio), rho_bar, c_bar)


def vtrace(rewards, values, dones, behaviour_logp, target_logp, gamma: float,
           rho_bar: float = 1.0, c_bar: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """V-trace value targets ``vs`` (length T + 1) and advantages (length T)."""
    rewards, values, dones = _check(rewards, values, dones, behaviour_logp, target_logp)
    w = importance_weights(behaviour_logp, target_logp, rho_bar, c_bar)
    disc = gamma * (1.0 - dones)
    deltas = w.rho * (rewards + disc * values[1:] - values[:-1])
    vs = values.copy()
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = deltas[t] + disc[t] * w.c[t] * acc
        vs[t] = values[t] + acc
    adv = w.rho * (rewards + disc * vs[1:] - values[:-1])
    return vs, adv


def vtrace_advantage(rewards, values, dones, behaviour_logp, target_logp, gamma: float,
                     rho_bar: float = 1.0, c_bar: float = 1.0) -> np.ndarray:
    return vtrace(rewards, values, dones, behaviour_logp, target_logp, gamma, rho_bar, c_bar)[1]


def bellman_targets(advantages, samples) -> np.ndarray:
    """``x = A + g`` elementwise; ``samples`` may carry the trailing bootstrap entry."""
    advantages = np.asarray(advantages, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    return advantages + samples[..., : advantages.shape[-1]]


@dataclass(frozen=True)
class AdvantageInputs:
    """Everything needed to (re)compute one head's advantages on one segment.

    ``on_policy`` selects GAE; otherwise V-trace with the behaviour log-probs.
    Only the behaviour log-probs come from another head.
    """

    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    gamma: float
    lam: float = 0.95
    on_policy: bool = True
    behaviour_logp: np.ndarray | None = None
    target_logp: np.ndarray | None = None
    rho_bar: float = 1.0
    c_bar: float = 1.0

    def compute(self) -> np.ndarray:
        if self.on_policy:
            return gae(self.rewards, self.values, self.dones, self.gamma, self.lam)
        return vtrace_advantage(self.rewards, self.values, self.dones, self.behaviour_logp,
                                self.target_logp, self.gamma, self.rho_bar, self.c_bar)

    def with_rewards(self, rewards) -> "AdvantageInputs":
        return replace(self, rewards=np.asarray(rewards, dtype=np.float64))
