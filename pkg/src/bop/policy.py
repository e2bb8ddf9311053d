"""Policy heads: categorical for discrete actions, diagonal Gaussian for continuous."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Mlp, Tensor
from .envs import Continuous, Discrete

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0


class CategoricalPolicy:
    def __init__(self, obs_dim: int, n_actions: int, width: int = 64, activation: str = "tanh",
                 rng: np.random.Generator | None = None, name: str = "policy"):
        self.n_actions = n_actions
        self.net = Mlp([obs_dim, width, width, n_actions], activation, rng, "head", name)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def probs(self, states: np.ndarray) -> np.ndarray:
        logits = self.net.apply(np.atleast_2d(states))
        return np.exp(logits - dc.np_logsumexp(logits))

    def log_probs_np(self, states: np.ndarray, actions) -> np.ndarray:
        logits = self.net.apply(np.atleast_2d(states))
        logp = logits - dc.np_logsumexp(logits)
        return logp[np.arange(len(logp)), np.asarray(actions, dtype=np.int64)]

    def sample(self, state: np.ndarray, rng: np.random.Generator) -> int:
        p = self.probs(state)[0]
        return int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"),
                       self.n_actions - 1))

    def greedy(self, state: np.ndarray) -> int:
        return int(np.argmax(self.probs(state)[0]))

    def log_prob_entropy(self, states, actions) -> tuple[Tensor, Tensor]:
        logp_all = dc.log_softmax(self.net(dc.as_tensor(states)))
        p = dc.exp(logp_all)
        entropy = -(p * logp_all).sum(axis=-1)
        return dc.take_rows(logp_all, actions), entropy


class GaussianPolicy:
    """State-conditioned diagonal Gaussian; the net emits ``[mu, log_std]``."""

    def __init__(self, obs_dim: int, action_dim: int, width: int = 64, activation: str = "tanh",
                 rng: np.random.Generator | None = None, name: str = "policy"):
        self.action_dim = action_dim
        self.net = Mlp([obs_dim, width, width, 2 * action_dim], activation, rng, "head", name)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def params_np(self, states):
        out = self.net.apply(np.atleast_2d(states))
        d = self.action_dim
        return out[:, :d], np.exp(np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX))

    def log_probs_np(self, states, actions) -> np.ndarray:
        mu, std = self.params_np(states)
        a = np.asarray(actions, dtype=np.float64).reshape(mu.shape)
        return (-0.5 * ((a - mu) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi)).sum(-1)

    def sample(self, state, rng: np.random.Generator) -> np.ndarray:
        mu, std = self.params_np(state)
        return mu[0] + std[0] * rng.standard_normal(self.action_dim)

    def greedy(self, state) -> np.ndarray:
        return self.params_np(state)[0][0]

    def log_prob_entropy(self, states, actions) -> tuple[Tensor, Tensor]:
        out = self.net(dc.as_tensor(states))
        d = self.action_dim
        mu = out[:, :d]
        log_std = dc.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)
        a = np.asarray(actions, dtype=np.float64).reshape(mu.shape)
        z = (a - mu) / dc.exp(log_std)
        logp = (z * z * -0.5 - log_std - 0.5 * np.log(2 * np.pi)).sum(axis=-1)
        entropy = (log_std + 0.5 * np.log(2 * np.pi * np.e)).sum(axis=-1)
        return logp, entropy


def make_policy(space, obs_dim: int, width: int, activation: str, rng, name: str):
    if isinstance(space, Discrete):
        return CategoricalPolicy(obs_dim, space.n, width, activation, rng, name)
    if isinstance(space, Continuous):
        return GaussianPolicy(obs_dim, space.dim, width, activation, rng, name)
    raise TypeError(f"unsupported action space {space!r}")
