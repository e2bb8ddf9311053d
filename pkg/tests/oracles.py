"""Independent reference computations used by the tests.

Each oracle expands the textbook definition directly instead of using a
recursion, so it shares no code path with the implementation it checks.
"""

import numpy as np
from scipy import integrate


def gae_direct(rewards, values, dones, gamma, lam):
    """A_t = sum_l (gamma*lam)^l delta_{t+l}, with episode boundaries cutting the sum."""
    T = len(rewards)
    deltas = [rewards[t] + gamma * values[t + 1] * (1 - dones[t]) - values[t] for t in range(T)]
    adv = np.zeros(T)
    for t in range(T):
        total, weight = 0.0, 1.0
        for l in range(T - t):
            total += weight * deltas[t + l]
            if dones[t + l]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


def discounted_returns(rewards, gamma):
    T = len(rewards)
    return np.array([sum(gamma ** l * rewards[t + l] for l in range(T - t)) for t in range(T)])


def vtrace_direct(rewards, values, dones, behaviour_logp, target_logp, gamma, rho_bar, c_bar):
    """vs_t = v_t + sum_l [prod_{m<l} gamma_m c_{t+m}] rho_{t+l} delta_{t+l}; A_t = rho_t (r_t + gamma_t vs_{t+1} - v_t)."""
    T = len(rewards)
    ratio = [np.exp(target_logp[t] - behaviour_logp[t]) for t in range(T)]
    rho = [min(rho_bar, r) for r in ratio]
    c = [min(c_bar, r) for r in ratio]
    disc = [gamma * (0.0 if dones[t] else 1.0) for t in range(T)]
    delta = [rho[t] * (rewards[t] + disc[t] * values[t + 1] - values[t]) for t in range(T)]
    vs = list(values)
    for t in range(T):
        total = 0.0
        for l in range(T - t):
            prod = 1.0
            for m in range(l):
                prod *= disc[t + m] * c[t + m]
            total += prod * delta[t + l]
        vs[t] = values[t] + total
    adv = np.array([rho[t] * (rewards[t] + disc[t] * vs[t + 1] - values[t]) for t in range(T)])
    return np.array(vs), adv


def kl_by_quadrature(mu1, s1, mu2, s2):
    """1-D KL(p || q) = integral p log(p/q), integrated numerically."""
    def integrand(x):
        lp = -0.5 * ((x - mu1) / s1) ** 2 - np.log(s1) - 0.5 * np.log(2 * np.pi)
        lq = -0.5 * ((x - mu2) / s2) ** 2 - np.log(s2) - 0.5 * np.log(2 * np.pi)
        return np.exp(lp) * (lp - lq)
    lo, hi = mu1 - 40 * s1, mu1 + 40 * s1
    val, _ = integrate.quad(integrand, lo, hi, points=[mu1, mu2], limit=400,
                            epsabs=1e-12, epsrel=1e-12)
    return val


def random_fixture(rng, T=15):
    rewards = rng.normal(size=T)
    values = rng.normal(size=T + 1)
    dones = rng.random(T) < 0.15
    behaviour = np.log(rng.uniform(0.05, 1.0, size=T))
    target = np.log(rng.uniform(0.05, 1.0, size=T))
    return rewards, values, dones, behaviour, target
