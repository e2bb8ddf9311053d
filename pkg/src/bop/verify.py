"""Self-check battery behind ``bop verify``.

Each check compares a library routine against a slow reference written from
the definition: V-trace by nested products, the Gaussian KL by numerical
integration, and every network's gradients by central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import diffcore as dc
from .advantage import gae, vtrace_advantage
from .curiosity import gaussian_kl
from .policy import CategoricalPolicy, GaussianPolicy
from .retdist import SharedVae, discriminator_logit, encode_t, prior_t


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _fixture(rng, T):
    return (rng.normal(size=T), rng.normal(size=T + 1), rng.random(T) < 0.15,
            np.log(rng.uniform(0.05, 1.0, T)), np.log(rng.uniform(0.05, 1.0, T)))


def vtrace_brute_force(r, v, d, b, t, gamma, rho_bar=1.0, c_bar=1.0):
    T = len(r)
    ratio = np.exp(t - b)
    rho, c = np.minimum(rho_bar, ratio), np.minimum(c_bar, ratio)
    disc = gamma * (1.0 - d)
    delta = rho * (r + disc * v[1:] - v[:-1])
    vs = np.array(v, dtype=float)
    for s in range(T):
        total = 0.0
        for l in range(T - s):
            total += np.prod(disc[s:s + l] * c[s:s + l]) * delta[s + l]
        vs[s] = v[s] + total
    return rho * (r + disc * vs[1:] - v[:-1])


def gae_brute_force(r, v, d, gamma, lam):
    T = len(r)
    delta = r + gamma * v[1:] * (1.0 - d) - v[:-1]
    out = np.zeros(T)
    for s in range(T):
        w = 1.0
        for l in range(T - s):
            out[s] += w * delta[s + l]
            if d[s + l]:
                break
            w *= gamma * lam
    return out


def kl_quadrature(mu1, s1, mu2, s2):
    def f(x):
        lp = -0.5 * ((x - mu1) / s1) ** 2 - np.log(s1)
        lq = -0.5 * ((x - mu2) / s2) ** 2 - np.log(s2)
        return np.exp(lp) / np.sqrt(2 * np.pi) * (lp - lq)
    return integrate.quad(f, mu1 - 40 * s1, mu1 + 40 * s1, points=[mu1, mu2], limit=400,
                          epsabs=1e-12, epsrel=1e-12)[0]


def check_vtrace(n=200, T=15, seed=0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r, v, d, b, t = _fixture(rng, T)
        gamma, rho_bar, c_bar = rng.uniform(0.8, 1.0), rng.uniform(0.5, 2), rng.uniform(0.5, 2)
        got = vtrace_advantage(r, v, d, b, t, gamma, rho_bar, c_bar)
        worst = max(worst, np.max(np.abs(got - vtrace_brute_force(r, v, d, b, t, gamma, rho_bar,
                                                                     c_bar))))
    return float(worst)


def check_gae(n=200, T=15, seed=1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        r, v, d, _, _ = _fixture(rng, T)
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0, 1)
        worst = max(worst, np.max(np.abs(gae(r, v, d, gamma, lam) - gae_brute_force(r, v, d,
                                                                                 gamma, lam))))
    return float(worst)


def check_kl(n=50, seed=2) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        mu1, mu2 = rng.normal(0, 2, size=2)
        s1, s2 = rng.uniform(0.2, 3.0, size=2)
        worst = max(worst, abs(float(gaussian_kl([mu1], [s1], [mu2], [s2]))
                               - kl_quadrature(mu1, s1, mu2, s2)))
    return worst


def network_losses(obs_dim=4, latent_dim=2, width=8, batch=5, seed=0):
    """One scalar objective per trainable network, each a closure over fixed inputs."""
    rng = np.random.default_rng(seed)
    shared = SharedVae.create(obs_dim, latent_dim, width, "tanh", seed)
    gen = dc.Mlp([latent_dim + obs_dim, width, width, 1], "tanh", rng, "head", "generator")
    cat = CategoricalPolicy(obs_dim, 3, width, "tanh", rng)
    gauss = GaussianPolicy(obs_dim, 2, width, "tanh", rng)
    s = rng.normal(size=(batch, obs_dim))
    x = rng.normal(size=batch)
    z = rng.normal(size=(batch, latent_dim))
    a_cat = rng.integers(0, 3, size=batch)
    a_gauss = rng.normal(size=(batch, 2))

    def prior_loss():
        mu, sig = prior_t(shared, s)
        return dc.tsum(mu * mu) + dc.tsum(dc.log(sig))

    def encoder_loss():
        mu, sig = encode_t(shared, x, s)
        return dc.tsum(mu * sig)

    def disc_loss():
        return dc.mean(dc.log_sigmoid(discriminator_logit(shared, x, z, s)))

    def gen_loss():
        out = gen(dc.concat([dc.as_tensor(z), dc.as_tensor(s)], axis=1))
        return dc.mean((out - x[:, None]) ** 2)

    def cat_loss():
        logp, ent = cat.log_prob_entropy(s, a_cat)
        return dc.mean(logp) + 0.1 * dc.mean(ent)

    def gauss_loss():
        logp, ent = gauss.log_prob_entropy(s, a_gauss)
        return dc.mean(logp) + 0.1 * dc.mean(ent)

    return {
        "prior": (prior_loss, shared.prior.parameters()),
        "encoder": (encoder_loss, shared.encoder.parameters()),
        "discriminator": (disc_loss, shared.discriminator.parameters()),
        "generator": (gen_loss, gen.parameters()),
        "policy_categorical": (cat_loss, cat.parameters()),
        "policy_gaussian": (gauss_loss, gauss.parameters()),
    }


def check_gradients(points=10, seed=3) -> dict[str, float]:
    """Worst relative error per network over ``points`` random parameter draws."""
    worst: dict[str, float] = {}
    for p in range(points):
        for name, (fn, params) in network_losses(seed=seed * 1000 + p).items():
            report = dc.gradient_check(fn, params, max_entries=40,
                                       rng=np.random.default_rng(p))
            worst[name] = max(worst.get(name, 0.0), float(report.max_rel_error))
    return worst


def run_all() -> list[CheckResult]:
    results = []

    def timed(name, fn, judge):
        t0 = time.perf_counter()
        value = fn()
        ok, detail = judge(value)
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))

    timed("vtrace_vs_brute_force", check_vtrace,
          lambda e: (e <= 1e-10, f"max abs error {e:.2e} (tol 1e-10)"))
    timed("gae_vs_direct_sum", check_gae,
          lambda e: (e <= 1e-10, f"max abs error {e:.2e} (tol 1e-10)"))
    timed("kl_vs_quadrature", check_kl,
          lambda e: (e <= 1e-4, f"max abs error {e:.2e} (tol 1e-4)"))
    timed("gradient_checks", check_gradients,
          lambda w: (max(w.values()) <= 1e-4,
                     ", ".join(f"{k} {v:.1e}" for k, v in sorted(w.items()))))
    return results
