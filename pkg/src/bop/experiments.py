"""Scaled-down comparative experiments (ensemble benefit, diversity collapse, compute)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .agent import Trainer
from .config import RunConfig
from .metrics import marginal_head_cost

# Desk-scale settings for the comparative experiments.  The annealed 2.5e-4
# learning rate and 0.1 clip range need far more than 2e5 steps, and a
# curiosity scale of 0.05 lets the clipped bonus (up to 1 per step) swamp
# DeepSea's single reward of 0.99 per episode.
DESK_OVERRIDES = dict(lr_start=1e-3, lr_end=1e-3, clip_start=0.2, clip_end=0.2,
                      curiosity_beta=0.005)


def desk_config(env: str, **changes) -> RunConfig:
    return RunConfig(env=env, **{**DESK_OVERRIDES, **changes})


def steps_to_threshold(cfg: RunConfig, threshold: float = 0.9, budget: int = 200_000,
                       on_iteration=None) -> int | None:
    """Env steps until the greedy ensemble policy scores ``threshold``; None if never.

    The test policy is evaluated after every iteration.
    """
    cfg = cfg.replace(eval_every=1, total_env_steps=budget)
    trainer = Trainer(cfg)
    while trainer.env_steps < budget:
        m = trainer.train_iteration()
        if on_iteration is not None:
            on_iteration(m)
        if m["eval_return"] is not None and m["eval_return"] >= threshold:
            return trainer.env_steps
    return None


@dataclass
class EnsembleBenefit:
    steps: dict[int, list[int | None]]
    medians: dict[int, float]
    p_value: float


def ensemble_benefit(base: RunConfig, seeds, ks=(1, 3), threshold: float = 0.9,
                     budget: int = 200_000) -> EnsembleBenefit:
    """Compare steps-to-threshold between head counts with a one-sided Mann-Whitney test.

    Runs that never reach the threshold count as ``budget + 1`` steps.
    """
    steps = {k: [steps_to_threshold(base.replace(heads=k, seed=s), threshold, budget)
                 for s in seeds] for k in ks}
    filled = {k: np.array([budget + 1 if v is None else v for v in steps[k]], dtype=float)
              for k in ks}
    small, big = ks
    p = stats.mannwhitneyu(filled[big], filled[small], alternative="less").pvalue
    return EnsembleBenefit(steps, {k: float(np.median(filled[k])) for k in ks}, float(p))


def final_diversity(cfg: RunConfig, env_steps: int) -> float:
    trainer = Trainer(cfg.replace(total_env_steps=env_steps, eval_every=0))
    m = {"diversity_l1": 0.0}
    while trainer.env_steps < env_steps:
        m = trainer.train_iteration()
    return m["diversity_l1"]


def diversity_collapse(base: RunConfig, seeds, env_steps: int = 50_000) -> dict:
    individual = [final_diversity(base.replace(seed=s, shared_targets=False), env_steps)
                  for s in seeds]
    shared = [final_diversity(base.replace(seed=s, shared_targets=True), env_steps)
              for s in seeds]
    return {
        "individual": individual,
        "shared": shared,
        "median_individual": float(np.median(individual)),
        "median_shared": float(np.median(shared)),
    }


def iteration_ops(cfg: RunConfig, iterations: int = 2) -> int:
    """Scalar multiply-adds of the last of ``iterations`` training iterations."""
    trainer = Trainer(cfg)
    m = {}
    for _ in range(iterations):
        m = trainer.train_iteration()
    return m["ops_iteration"]


def compute_linearity(base: RunConfig, ks=(1, 2, 3, 5), iterations: int = 2):
    totals = [iteration_ops(base.replace(heads=k), iterations) for k in ks]
    return totals, marginal_head_cost(ks, totals)
