"""Return-distribution model: shared prior/encoder/discriminator and per-head generators.

Latents are diagonal Gaussians.  Networks that output Gaussian parameters
emit ``[mu, log_sigma]`` with ``log_sigma`` clamped so that sigma stays in
[1e-4, 1e4].  Generators map ``(z, s)`` to a scalar return sample; each has
a frozen target copy that only moves through ``sync_targets``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Mlp, Tensor

LOG_SIGMA_MIN = float(np.log(1e-4))
LOG_SIGMA_MAX = float(np.log(1e4))
LOGIT_CLAMP = 30.0


@dataclass
class SharedVae:
    prior: Mlp          # s -> [mu, log_sigma] over z
    encoder: Mlp        # (x, s) -> [mu, log_sigma] over z
    discriminator: Mlp  # (x, z, s) -> logit
    latent_dim: int

    @classmethod
    def create(cls, obs_dim: int, latent_dim: int = 8, width: int = 64,
               activation: str = "tanh", seed: int = 0) -> "SharedVae":
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 0xBA5E]).spawn(3)]
        L = latent_dim
        return cls(
            prior=Mlp([obs_dim, width, width, 2 * L], activation, rngs[0], "shared", "prior"),
            encoder=Mlp([1 + obs_dim, width, width, 2 * L], activation, rngs[1], "shared", "encoder"),
            discriminator=Mlp([1 + L + obs_dim, width, width, 1], activation, rngs[2], "shared",
                              "discriminator"),
            latent_dim=L,
        )

    def encoder_prior_params(self) -> list[Tensor]:
        return self.encoder.parameters() + self.prior.parameters()


@dataclass
class Head:
    """One actor-critic member: return generator, its frozen target, and a policy."""

    index: int
    generator: Mlp
    target: Mlp
    policy: object  # bop.policy.CategoricalPolicy | GaussianPolicy

    @classmethod
    def create(cls, index: int, obs_dim: int, policy, latent_dim: int = 8, width: int = 64,
               activation: str = "tanh", seed: int = 0) -> "Head":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6E7, index]))
        gen = Mlp([latent_dim + obs_dim, width, width, 1], activation, rng, "head",
                  f"generator{index}")
        target = Mlp(gen.sizes, activation, None, "head", f"target{index}")
        target.copy_from(gen)
        for p in target.params:
            p.requires_grad = False
        return cls(index, gen, target, policy)


@dataclass(frozen=True)
class ReturnSample:
    value: np.ndarray   # g, shape [B]
    z: np.ndarray       # latent used, shape [B, L]
    head: int


# ---------------------------------------------------------------------------
# Gaussian helpers

def _split_gauss_np(out: np.ndarray, L: int):
    mu = out[..., :L]
    sigma = np.exp(np.clip(out[..., L:], LOG_SIGMA_MIN, LOG_SIGMA_MAX))
    return mu, sigma


def _split_gauss(out: Tensor, L: int):
    mu = out[:, :L]
    sigma = dc.exp(dc.clip(out[:, L:], LOG_SIGMA_MIN, LOG_SIGMA_MAX))
    return mu, sigma


def _col(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1, 1)


def prior_params(shared: SharedVae, states: np.ndarray):
    return _split_gauss_np(shared.prior.apply(states), shared.latent_dim)


def encode(shared: SharedVae, x, states: np.ndarray):
    """Posterior ``q(z | x, s)`` parameters (mu, sigma) as arrays."""
    inp = np.concatenate([_col(x), np.atleast_2d(states)], axis=1)
    return _split_gauss_np(shared.encoder.apply(inp), shared.latent_dim)


def encode_t(shared: SharedVae, x, states, frozen: bool = False):
    inp = dc.concat([dc.as_tensor(_col(x) if not isinstance(x, Tensor) else x), states], axis=1)
    return _split_gauss(shared.encoder(inp, frozen), shared.latent_dim)


def prior_t(shared: SharedVae, states, frozen: bool = False):
    return _split_gauss(shared.prior(dc.as_tensor(states), frozen), shared.latent_dim)


def reparameterize(mu, sigma, eps):
    """``mu + sigma * eps``; works on Tensors and arrays alike."""
    return mu + sigma * eps


def generate(net: Mlp, z, states) -> np.ndarray:
    return net.apply(np.concatenate([z, states], axis=1))[:, 0]


def sample_return(head: Head, shared: SharedVae, states: np.ndarray, rng: np.random.Generator,
                  z: np.ndarray | None = None) -> ReturnSample:
    """Draw ``z ~ p(z|s)`` (unless given) and evaluate ``g = G(z, s)``."""
    states = np.atleast_2d(states)
    if z is None:
        z = sample_prior(shared, states, rng)
    return ReturnSample(generate(head.generator, z, states), z, head.index)


def sample_prior(shared: SharedVae, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mu, sigma = prior_params(shared, states)
    return mu + sigma * rng.standard_normal(mu.shape)


def sample_returns_all(heads, shared: SharedVae, states: np.ndarray, rng: np.random.Generator):
    """One shared latent per state feeds every head's generator.

    Returns ``(g [K, B], z [B, L])``.
    """
    states = np.atleast_2d(states)
    z = sample_prior(shared, states, rng)
    inp = np.concatenate([z, states], axis=1)
    return np.stack([h.generator.apply(inp)[:, 0] for h in heads]), z


# ---------------------------------------------------------------------------
# discriminator and adversarial objectives

def discriminator_logit(shared: SharedVae, x, z, states, frozen: bool = False) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(_col(x))
    if x.ndim == 1:
        x = dc.reshape(x, (-1, 1))
    logit = shared.discriminator(dc.concat([x, z, states], axis=1), frozen)
    return dc.clip(logit[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)


def discriminator_prob(shared: SharedVae, x, z, states) -> np.ndarray:
    inp = np.concatenate([_col(x), np.atleast_2d(z), np.atleast_2d(states)], axis=1)
    logit = np.clip(shared.discriminator.apply(inp)[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    return dc.np_sigmoid(logit)


@dataclass
class AdversarialBatch:
    """Inputs of the two adversarial objectives for one minibatch.

    ``x`` real Bellman targets paired with ``z_bar`` (head-averaged encodings);
    ``x_bar`` (head-averaged adversarial returns) paired with prior draws ``z``.
    """

    x: Tensor
    z_bar: Tensor
    x_bar: Tensor
    z: Tensor
    s: Tensor

    def detached(self) -> "AdversarialBatch":
        return AdversarialBatch(*(Tensor(t.data) for t in (self.x, self.z_bar, self.x_bar,
                                                            self.z, self.s)))


def discriminator_loss(shared: SharedVae, batch: AdversarialBatch) -> Tensor:
    """Objective to ascend for the discriminator: mean[log D(x_bar, z) + log(1 - D(x, z_bar))].

    Inputs are treated as constants, so only discriminator parameters get gradients.
    """
    b = batch.detached()
    fake = discriminator_logit(shared, b.x_bar, b.z, b.s)
    real = discriminator_logit(shared, b.x, b.z_bar, b.s)
    return dc.mean(dc.log_sigmoid(fake) + dc.log_sigmoid(-real))


def encoder_prior_loss(shared: SharedVae, batch: AdversarialBatch) -> Tensor:
    """Objective to ascend for encoder and prior: the flipped discriminator objective.

    Discriminator parameters are frozen for this pass.
    """
    fake = discriminator_logit(shared, batch.x_bar, batch.z, batch.s, frozen=True)
    real = discriminator_logit(shared, batch.x, batch.z_bar, batch.s, frozen=True)
    return dc.mean(dc.log_sigmoid(-fake) + dc.log_sigmoid(real))


def generator_loss(head: Head, z_tilde, x_target, states, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared reconstruction error of the head's Bellman targets.

    ``z_tilde`` is used as a constant so only the head's generator is trained.
    """
    z_tilde = Tensor(z_tilde.data if isinstance(z_tilde, Tensor) else z_tilde)
    states = dc.as_tensor(states)
    pred = head.generator(dc.concat([z_tilde, states], axis=1))[:, 0]
    err = dc.square(pred - np.asarray(x_target, dtype=np.float64))
    if mask is None:
        return dc.mean(err)
    w = np.asarray(mask, dtype=np.float64)
    return dc.tsum(err * w) * (1.0 / max(w.sum(), 1.0))


@dataclass
class Adversaries:
    z_tilde: list[Tensor]   # per head encodings of its own targets
    z_bar: Tensor
    z: Tensor               # prior draw shared by every head's adversary
    x_tilde: list[Tensor]   # per head target-generator outputs
    x_bar: Tensor


def make_adversaries(heads, shared: SharedVae, targets: np.ndarray, states: np.ndarray,
                     eps_enc: np.ndarray, eps_prior: np.ndarray) -> Adversaries:
    """Encode every head's targets, draw prior adversaries, and average over heads.

    ``targets`` is [K, B]; ``eps_enc`` [K, B, L]; ``eps_prior`` [B, L].
    The graph runs through the encoder and prior (live) and the target
    generators (frozen parameters, live inputs).
    """
    K, B = targets.shape
    s = Tensor(states)
    s_rep = Tensor(np.tile(states, (K, 1)))
    mu, sigma = encode_t(shared, targets.reshape(-1, 1), s_rep)
    z_all = reparameterize(mu, sigma, eps_enc.reshape(K * B, -1))
    z_tilde = [z_all[i * B:(i + 1) * B] for i in range(K)]
    z_bar = dc.reshape(z_all, (K, B, shared.latent_dim)).mean(axis=0)

    mu_p, sigma_p = prior_t(shared, s)
    z = reparameterize(mu_p, sigma_p, eps_prior)
    zs = dc.concat([z, s], axis=1)
    x_tilde = [h.target(zs, frozen=True)[:, 0] for h in heads]
    x_bar = dc.stack(x_tilde).mean(axis=0)
    return Adversaries(z_tilde, z_bar, z, x_tilde, x_bar)


def sync_targets(heads) -> None:
    """Hard copy of every live generator into its target."""
    for h in heads:
        h.target.copy_from(h.generator)
