"""Bag-of-policies training loop.

One iteration runs three stages:

* roll-out: every episode is driven by one uniformly drawn head; all heads
  score the visited states (log-probs and return samples),
* estimation: per-head advantages (GAE for the acting head, V-trace for
  the others), Bellman targets, curiosity bonuses and augmented advantages,
* update: discriminator, encoder/prior, per-head generators, per-head
  policies, in that order, on shuffled minibatches.

Head indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .advantage import AdvantageInputs, bellman_targets
from .config import RunConfig
from .curiosity import curiosity_bonus, gaussian_kl
from .diffcore import Adam, LinearSchedule, OpCounter, Tensor
from .envs import Discrete, Env, make_env, make_vec_env
from .metrics import policy_diversity
from .policy import CategoricalPolicy, make_policy
from .retdist import (AdversarialBatch, Head, SharedVae, discriminator_loss, encode,
                      encoder_prior_loss, generator_loss, make_adversaries, sample_returns_all,
                      sync_targets)


# ---------------------------------------------------------------------------
# data containers

@dataclass
class Segment:
    """A contiguous slice of one episode, driven by a single active head."""

    head: int
    states: np.ndarray    # [T + 1, obs]; last row is the state after the final step
    actions: np.ndarray   # [T]
    rewards: np.ndarray   # [T]
    dones: np.ndarray     # [T]
    logp: np.ndarray      # [K, T] log pi^i(a_t | s_t) for every head
    g: np.ndarray         # [K, T + 1] return samples, last column is the bootstrap
    z: np.ndarray         # [T + 1, L] the latent shared by all heads at each step

    @property
    def T(self) -> int:
        return len(self.rewards)

    @property
    def behaviour_logp(self) -> np.ndarray:
        return self.logp[self.head]


@dataclass
class TrajectoryBatch:
    segments: list[Segment]
    episode_returns: list[tuple[int, float]] = field(default_factory=list)

    @property
    def env_steps(self) -> int:
        return sum(s.T for s in self.segments)

    def flat(self):
        """Concatenate segments into transition-major arrays."""
        segs = self.segments
        return {
            "states": np.concatenate([s.states[:-1] for s in segs]),
            "actions": np.concatenate([s.actions for s in segs]),
            "head": np.concatenate([np.full(s.T, s.head) for s in segs]),
            "logp": np.concatenate([s.logp for s in segs], axis=1),
            "g": np.concatenate([s.g[:, :-1] for s in segs], axis=1),
        }


@dataclass
class AdvantageTable:
    """Per-head, per-transition estimates for one batch (columns follow ``TrajectoryBatch.flat``)."""

    advantages: np.ndarray         # external-reward advantages A^i
    targets: np.ndarray            # Bellman targets x^i = A^i + g^i
    critic_targets: np.ndarray     # what each generator regresses on
    on_policy_targets: np.ndarray  # x^k at every transition
    values: np.ndarray             # g^i
    kl: np.ndarray                 # information gain per head
    bonus: np.ndarray              # clipped beta * kl
    augmented: np.ndarray          # advantages with r + bonus


# ---------------------------------------------------------------------------
# roll-out

def select_active_head(rng: np.random.Generator, K: int) -> int:
    if K < 1:
        raise dc.ContractError("need at least one head")
    return int(rng.integers(K))


def rollout(env: Env, heads, shared: SharedVae, k: int, max_steps: int,
            rng: np.random.Generator, obs: np.ndarray | None = None) -> Segment:
    """Act with head ``k`` until the episode ends or ``max_steps`` steps are taken.

    Only ``heads[k].policy`` influences the actions.  Afterwards every head
    scores the visited states, and one prior latent per state (including
    the final one) feeds all generators.
    """
    if obs is None:
        obs = env.reset()
    policy = heads[k].policy
    states, actions, rewards, dones = [obs], [], [], []
    for _ in range(max_steps):
        a = policy.sample(obs[None, :], rng)
        tr = env.step(a)
        actions.append(a)
        rewards.append(tr.reward)
        dones.append(tr.done)
        obs = tr.next_state
        states.append(obs)
        if tr.done:
            break
    S = np.asarray(states)
    A = np.asarray(actions)
    g, z = sample_returns_all(heads, shared, S, rng)
    logp = np.stack([h.policy.log_probs_np(S[:-1], A) for h in heads])
    return Segment(k, S, A, np.asarray(rewards, dtype=np.float64), np.asarray(dones, dtype=bool),
                   logp, g, z)


# ---------------------------------------------------------------------------
# policy objective

def ppo_loss(policy, states, actions, old_logp, advantages, clip_eps: float,
             entropy_coef: float, surrogate: str = "clipped",
             mask: np.ndarray | None = None) -> Tensor:
    """Negative clipped surrogate plus entropy bonus (a loss to descend).

    ``surrogate="raw"`` uses ``log pi(a|s) * A`` instead of the ratio form.
    """
    logp, entropy = policy.log_prob_entropy(states, actions)
    adv = np.asarray(advantages, dtype=np.float64)
    if surrogate == "raw":
        obj = logp * adv
    else:
        ratio = dc.exp(logp - np.asarray(old_logp, dtype=np.float64))
        obj = dc.minimum(ratio * adv, dc.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)
    if mask is None:
        return -(dc.mean(obj) + dc.mean(entropy) * entropy_coef)
    w = np.asarray(mask, dtype=np.float64)
    scale = 1.0 / max(w.sum(), 1.0)
    return -(dc.tsum(obj * w) * scale + dc.tsum(entropy * w) * (scale * entropy_coef))


# ---------------------------------------------------------------------------
# head scheduling and test-time action selection

def schedule_heads(mode: str, kl_per_head, active_heads=(), rng: np.random.Generator | None = None
                   ) -> list[int]:
    """Which heads to update this iteration.

    ``kl_per_head`` is the mean information gain of each head on the batch.
    Ties resolve to the lowest index.
    """
    kl = np.asarray(kl_per_head, dtype=np.float64)
    K = len(kl)
    if mode in ("all", "top-50-percent-uncertain"):
        return list(range(K))
    if mode == "active-only":
        return sorted(set(int(k) for k in active_heads))
    if mode == "most-uncertain-only":
        return [int(np.argmax(kl))]
    if mode == "random-by-uncertainty":
        p = kl / kl.sum() if kl.sum() > 0 else np.full(K, 1.0 / K)
        return [int(rng.choice(K, p=p))]
    raise dc.ContractError(f"unknown update schedule {mode!r}")


def uncertainty_masks(kl: np.ndarray, fraction: float = 0.5) -> np.ndarray:
    """Per head, mark the ``fraction`` of transitions with the largest information gain."""
    K, N = kl.shape
    n_keep = max(1, int(math.ceil(fraction * N)))
    masks = np.zeros((K, N), dtype=bool)
    for i in range(K):
        masks[i, np.argsort(-kl[i], kind="stable")[:n_keep]] = True
    return masks


def _vote(actions: list[int]) -> int:
    values, counts = np.unique(actions, return_counts=True)
    return int(values[np.argmax(counts)])


def select_action_test(heads, state: np.ndarray, mode: str = "average-then-argmax",
                       rng: np.random.Generator | None = None, gaussian_average: str = "parameter"):
    """Pick an action from the ensemble.

    * ``average-then-argmax``: greedy action of the averaged action distribution,
    * ``argmax-then-vote``: majority vote of per-head greedy actions (ties: lowest action),
    * ``sample-then-argmax``: greedy action of one uniformly drawn head,
    * ``sample``: sampled action of one uniformly drawn head.
    """
    state = np.atleast_2d(state)
    policies = [h.policy for h in heads]
    if mode in ("sample-then-argmax", "sample"):
        pol = policies[int(rng.integers(len(policies)))]
        return pol.greedy(state) if mode == "sample-then-argmax" else pol.sample(state, rng)
    if isinstance(policies[0], CategoricalPolicy):
        if mode == "average-then-argmax":
            return int(np.argmax(average_distribution(heads, state)[0]))
        if mode == "argmax-then-vote":
            return _vote([p.greedy(state) for p in policies])
    else:
        params = [p.params_np(state) for p in policies]
        mus = np.stack([m[0] for m, _ in params])
        stds = np.stack([s[0] for _, s in params])
        if mode == "average-then-argmax":
            if gaussian_average == "parameter":
                return mus.mean(axis=0)
            return mus[int(np.argmax(_mixture_logpdf(mus, mus, stds)))]
        if mode == "argmax-then-vote":
            dist = np.abs(mus[:, None, :] - mus[None, :, :]).sum(axis=(1, 2))
            return mus[int(np.argmin(dist))]
    raise dc.ContractError(f"unknown selection mode {mode!r}")


def _mixture_logpdf(points, mus, stds):
    comp = (-0.5 * ((points[:, None, :] - mus[None]) / stds[None]) ** 2
            - np.log(stds[None]) - 0.5 * np.log(2 * np.pi)).sum(-1)
    m = comp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(comp - m).mean(axis=1, keepdims=True)))[:, 0]


def average_distribution(heads, states: np.ndarray) -> np.ndarray:
    return np.mean([h.policy.probs(states) for h in heads], axis=0)


# ---------------------------------------------------------------------------
# trainer

PARAM_GROUPS = ("discriminator", "encoder", "prior")


class NumericError(FloatingPointError):
    pass


class Trainer:
    """Owns every piece of training state for one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg = cfg.validate()
        root = np.random.SeedSequence(cfg.seed)
        agent_ss, probe_ss, init_ss, eval_ss = root.spawn(4)
        self.rng = np.random.default_rng(agent_ss)
        self.eval_rng = np.random.default_rng(eval_ss)
        self.vec = make_vec_env(cfg.env, cfg.num_envs, cfg.seed)
        self.eval_env = make_env(cfg.env, cfg.seed)
        spec = self.vec.spec
        self.spec = spec
        init_seed = int(init_ss.generate_state(1)[0])
        self.shared = SharedVae.create(spec.obs_dim, cfg.latent_dim, cfg.width, cfg.activation,
                                       init_seed)
        self.heads = []
        for i in range(cfg.heads):
            pol_rng = np.random.default_rng(np.random.SeedSequence([init_seed, 0x901, i]))
            policy = make_policy(spec.action_space, spec.obs_dim, cfg.width, cfg.activation,
                                 pol_rng, f"policy{i}")
            self.heads.append(Head.create(i, spec.obs_dim, policy, cfg.latent_dim, cfg.width,
                                          cfg.activation, init_seed))
        self.disc_opt = Adam(self.shared.discriminator.parameters())
        self.enc_opt = Adam(self.shared.encoder_prior_params())
        self.gen_opts = [Adam(h.generator.parameters()) for h in self.heads]
        self.pol_opts = [Adam(h.policy.parameters()) for h in self.heads]
        self.lr_schedule = LinearSchedule(cfg.lr_start, cfg.lr_end)
        self.clip_schedule = LinearSchedule(cfg.clip_start, cfg.clip_end)
        self.iteration = 0
        self.env_steps = 0
        self.syncs = 0
        n = cfg.num_envs
        self.obs: list[np.ndarray | None] = [None] * n
        self.active = [-1] * n
        self.ep_return = [0.0] * n
        self.ops = OpCounter()
        self.probe = collect_probe_states(make_env(cfg.env, cfg.seed), cfg.probe_states,
                                          np.random.default_rng(probe_ss))
        self.gradient_log: list[dict[str, set[str]]] | None = None

    # -- parameter bookkeeping ------------------------------------------------
    @property
    def K(self) -> int:
        return len(self.heads)

    def param_groups(self) -> dict[str, list[Tensor]]:
        groups = {
            "discriminator": self.shared.discriminator.parameters(),
            "encoder": self.shared.encoder.parameters(),
            "prior": self.shared.prior.parameters(),
        }
        for h in self.heads:
            groups[f"generator{h.index}"] = h.generator.parameters()
            groups[f"policy{h.index}"] = h.policy.parameters()
        return groups

    def _zero_all(self) -> None:
        for params in self.param_groups().values():
            for p in params:
                p.grad = None

    def _touched(self) -> set[str]:
        return {name for name, params in self.param_groups().items()
                if any(p.grad is not None and np.any(p.grad != 0) for p in params)}

    def progress(self) -> float:
        return min(self.env_steps / self.cfg.total_env_steps, 1.0)

    # -- stage 1 --------------------------------------------------------------
    def collect(self) -> TrajectoryBatch:
        cfg = self.cfg
        batch = TrajectoryBatch([])
        for i, env in enumerate(self.vec.envs):
            used = episodes = 0
            while used < cfg.rollout_steps and episodes < cfg.episodes_per_rollout:
                if self.obs[i] is None:
                    self.obs[i] = env.reset()
                    self.active[i] = select_active_head(self.rng, self.K)
                    self.ep_return[i] = 0.0
                seg = rollout(env, self.heads, self.shared, self.active[i],
                              cfg.rollout_steps - used, self.rng, self.obs[i])
                used += seg.T
                self.ep_return[i] += float(seg.rewards.sum())
                batch.segments.append(seg)
                if seg.dones[-1]:
                    batch.episode_returns.append((self.active[i], self.ep_return[i]))
                    episodes += 1
                    self.obs[i] = None
                else:
                    self.obs[i] = seg.states[-1]
        return batch

    # -- stage 2 --------------------------------------------------------------
    def estimate(self, batch: TrajectoryBatch, beta: float | None = None) -> AdvantageTable:
        cfg = self.cfg
        beta = cfg.curiosity_beta if beta is None else beta
        K = self.K
        inputs, adv, targets = [], [], []
        for seg in batch.segments:
            seg_inputs = [AdvantageInputs(seg.rewards, seg.g[i], seg.dones, cfg.gamma,
                                          cfg.gae_lambda, on_policy=(i == seg.head),
                                          behaviour_logp=seg.behaviour_logp,
                                          target_logp=seg.logp[i], rho_bar=cfg.rho_bar,
                                          c_bar=cfg.c_bar)
                          for i in range(K)]
            a = np.stack([inp.compute() for inp in seg_inputs])
            inputs.append(seg_inputs)
            adv.append(a)
            targets.append(bellman_targets(a, seg.g))
        flat = batch.flat()
        A = np.concatenate(adv, axis=1)
        X = np.concatenate(targets, axis=1)
        cols = np.arange(X.shape[1])
        x_on = X[flat["head"], cols]
        critic = np.tile(x_on, (K, 1)) if cfg.shared_targets else X
        g = flat["g"]
        prior_g = np.tile(g[flat["head"], cols], (K, 1)) if cfg.curiosity_prior == "shared" else g
        kl = self._information_gain(x_on, prior_g, flat["states"])
        bonus = curiosity_bonus(kl, beta, cfg.curiosity_clip)
        if beta == 0.0:
            aug = A.copy()
        else:
            aug_parts, start = [], 0
            for seg, seg_inputs in zip(batch.segments, inputs):
                b = bonus[:, start:start + seg.T]
                aug_parts.append(np.stack([inp.with_rewards(seg.rewards + b[i]).compute()
                                           for i, inp in enumerate(seg_inputs)]))
                start += seg.T
            aug = np.concatenate(aug_parts, axis=1)
        return AdvantageTable(A, X, critic, x_on, g, kl, bonus, aug)

    def _information_gain(self, x_on, prior_g, states) -> np.ndarray:
        K, N = prior_g.shape
        xs = np.concatenate([x_on, prior_g.reshape(-1)])
        mu, sigma = encode(self.shared, xs, np.tile(states, (K + 1, 1)))
        L = self.shared.latent_dim
        mu_post, sig_post = mu[:N], sigma[:N]
        mu_pri, sig_pri = mu[N:].reshape(K, N, L), sigma[N:].reshape(K, N, L)
        return gaussian_kl(mu_post[None], sig_post[None], mu_pri, sig_pri)

    # -- stage 3 --------------------------------------------------------------
    def update(self, batch: TrajectoryBatch, table: AdvantageTable) -> dict:
        cfg = self.cfg
        K, L = self.K, self.shared.latent_dim
        flat = batch.flat()
        N = len(flat["actions"])
        lr = self.lr_schedule(self.progress())
        clip_eps = self.clip_schedule(self.progress())
        active = sorted(set(int(h) for h in flat["head"]))
        update_heads = schedule_heads(cfg.update_schedule, table.kl.mean(axis=1), active, self.rng)
        masks = (uncertainty_masks(table.kl) if cfg.update_schedule == "top-50-percent-uncertain"
                 else None)
        adv = table.augmented
        if cfg.normalize_advantages:
            adv = (adv - adv.mean(axis=1, keepdims=True)) / (adv.std(axis=1, keepdims=True) + 1e-8)
        if cfg.ppo_ratio_baseline == "behaviour":
            old_logp = np.tile(flat["logp"][flat["head"], np.arange(N)], (K, 1))
        else:
            old_logp = flat["logp"]
        losses = {"discriminator": [], "encoder_prior": [],
                  "generator": [[] for _ in range(K)], "policy": [[] for _ in range(K)]}
        mb = min(cfg.minibatch, N)
        for _ in range(cfg.update_epochs):
            perm = self.rng.permutation(N)
            for start in range(0, N, mb):
                idx = perm[start:start + mb]
                s = flat["states"][idx]
                B = len(idx)
                eps_enc = self.rng.standard_normal((K, B, L))
                eps_prior = self.rng.standard_normal((B, L))
                advs = make_adversaries(self.heads, self.shared, table.critic_targets[:, idx], s,
                                        eps_enc, eps_prior)
                ab = AdversarialBatch(Tensor(table.on_policy_targets[idx]), advs.z_bar,
                                      advs.x_bar, advs.z, Tensor(s))

                self._zero_all()
                obj = discriminator_loss(self.shared, ab)
                dc.backward(-obj)
                self._log_grads("discriminator")
                self.disc_opt.step(lr)
                losses["discriminator"].append(-obj.item())

                self._zero_all()
                obj = encoder_prior_loss(self.shared, ab)
                dc.backward(-obj)
                self._log_grads("encoder_prior")
                self.enc_opt.step(lr)
                losses["encoder_prior"].append(-obj.item())

                for i in update_heads:
                    self._zero_all()
                    m = None if masks is None else masks[i, idx]
                    loss = generator_loss(self.heads[i], advs.z_tilde[i],
                                          table.critic_targets[i, idx], s, m) * cfg.value_loss_weight
                    dc.backward(loss)
                    self._log_grads(f"generator{i}")
                    self.gen_opts[i].step(lr)
                    losses["generator"][i].append(loss.item())

                for i in update_heads:
                    self._zero_all()
                    m = None if masks is None else masks[i, idx]
                    loss = ppo_loss(self.heads[i].policy, s, flat["actions"][idx], old_logp[i, idx],
                                    adv[i, idx], clip_eps, cfg.entropy_coef, cfg.surrogate, m)
                    dc.backward(loss)
                    self._log_grads(f"policy{i}")
                    self.pol_opts[i].step(lr)
                    losses["policy"][i].append(loss.item())
        self._zero_all()
        self._check_finite()
        return {
            "discriminator": _mean(losses["discriminator"]),
            "encoder_prior": _mean(losses["encoder_prior"]),
            "generator": [_mean(v) for v in losses["generator"]],
            "policy": [_mean(v) for v in losses["policy"]],
            "updated_heads": update_heads,
            "lr": lr,
            "clip": clip_eps,
        }

    def _log_grads(self, loss_name: str) -> None:
        if self.gradient_log is not None:
            self.gradient_log.append({loss_name: self._touched()})

    def _check_finite(self) -> None:
        for name, params in self.param_groups().items():
            for p in params:
                if not np.all(np.isfinite(p.data)):
                    raise NumericError(f"non-finite values in {p.name} ({name}) after update "
                                       f"at iteration {self.iteration}")

    # -- whole iteration ------------------------------------------------------
    def train_iteration(self) -> dict:
        with dc.counting(self.ops):
            before = self.ops.total
            batch = self.collect()
            self.env_steps += batch.env_steps
            table = self.estimate(batch)
            info = self.update(batch, table)
            self.iteration += 1
            if self.iteration % self.cfg.target_sync_period == 0:
                sync_targets(self.heads)
                self.syncs += 1
            report = policy_diversity(self.heads, self.probe)
            eval_return = None
            if self.cfg.eval_every and self.iteration % self.cfg.eval_every == 0:
                eval_return = self.evaluate(self.cfg.test_selection, self.cfg.eval_episodes)["mean"]
            ops_iter = self.ops.total - before
        K = self.K
        per_head = [[r for h, r in batch.episode_returns if h == i] for i in range(K)]
        hist = np.bincount([seg.head for seg in batch.segments if seg.T > 0], minlength=K)
        return {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "episodes": len(batch.episode_returns),
            "mean_return": _mean([r for _, r in batch.episode_returns]),
            "head_return": [_mean(v) for v in per_head],
            "kl_mean": table.kl.mean(axis=1).tolist(),
            "kl_max": table.kl.max(axis=1).tolist(),
            "diversity_l1": report.mean_l1,
            "diversity_cosine": report.mean_cosine,
            "cosine_matrix": report.cosine.reshape(-1).tolist(),
            "active_histogram": hist.tolist(),
            "loss_discriminator": info["discriminator"],
            "loss_encoder_prior": info["encoder_prior"],
            "loss_generator": info["generator"],
            "loss_policy": info["policy"],
            "updated_heads": info["updated_heads"],
            "lr": info["lr"],
            "clip": info["clip"],
            "eval_return": eval_return,
            "ops_iteration": ops_iter,
            "ops_total": self.ops.total,
        }

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, mode: str = "average-then-argmax", episodes: int = 1,
                 env: Env | None = None) -> dict:
        env = env or self.eval_env
        returns = []
        for _ in range(episodes):
            obs = env.reset()
            total, done = 0.0, False
            while not done:
                a = select_action_test(self.heads, obs, mode, self.eval_rng,
                                       self.cfg.gaussian_average)
                tr = env.step(a)
                total += tr.reward
                obs, done = tr.next_state, tr.done
            returns.append(total)
        return score_summary(returns)


def score_summary(returns) -> dict:
    r = np.asarray(returns, dtype=np.float64)
    return {
        "episodes": len(r),
        "mean": float(r.mean()),
        "median": float(np.median(r)),
        "stderr": float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0,
    }


def collect_probe_states(env: Env, n: int, rng: np.random.Generator) -> np.ndarray:
    """States visited by a uniform-random policy, frozen for diversity metrics."""
    states = []
    obs = env.reset()
    while len(states) < n:
        states.append(obs)
        tr = env.step(int(rng.integers(env.spec.action_space.n)))
        obs = env.reset() if tr.done else tr.next_state
    return np.asarray(states)


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


__all__ = [
    "AdvantageTable", "Discrete", "Segment", "Trainer", "TrajectoryBatch", "average_distribution",
    "collect_probe_states", "ppo_loss", "rollout", "schedule_heads", "select_action_test",
    "select_active_head", "uncertainty_masks",
]
