"""Ensemble diversity and compute-cost instrumentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError


@dataclass
class DiversityReport:
    l1: np.ndarray       # [K, K] mean over probe states of sum_a |pi^i(a|s) - pi^j(a|s)|
    cosine: np.ndarray   # [K, K] mean cosine similarity of the probability vectors

    @property
    def mean_l1(self) -> float:
        return _off_diagonal_mean(self.l1, 0.0)

    @property
    def mean_cosine(self) -> float:
        return _off_diagonal_mean(self.cosine, 1.0)


def _off_diagonal_mean(m: np.ndarray, single: float) -> float:
    K = m.shape[0]
    if K < 2:
        return single
    return float(m[~np.eye(K, dtype=bool)].mean())


def diversity_from_probs(probs: np.ndarray) -> DiversityReport:
    """``probs`` is [K, S, A]: each head's action distribution on each probe state."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] == 0:
        raise ContractError("probe set is empty")
    l1 = np.abs(probs[:, None] - probs[None, :]).sum(axis=-1).mean(axis=-1)
    norms = np.linalg.norm(probs, axis=-1)
    cos = (np.einsum("isa,jsa->ijs", probs, probs) / (norms[:, None] * norms[None, :])).mean(-1)
    np.fill_diagonal(l1, 0.0)
    np.fill_diagonal(cos, 1.0)
    return DiversityReport(l1, cos)


def policy_diversity(heads, probe_states: np.ndarray) -> DiversityReport:
    if len(probe_states) == 0:
        raise ContractError("probe set is empty")
    return diversity_from_probs(np.stack([h.policy.probs(probe_states) for h in heads]))


@dataclass
class MarginalCost:
    slope: float
    intercept: float
    residuals: np.ndarray
    increments: np.ndarray      # per-head cost between consecutive K values
    max_rel_deviation: float    # max |increment - slope| / slope


def marginal_head_cost(ks, totals) -> MarginalCost:
    """Least-squares affine fit of op totals against head count."""
    ks = np.asarray(ks, dtype=np.float64)
    totals = np.asarray(totals, dtype=np.float64)
    if len(ks) < 2 or len(ks) != len(totals):
        raise ContractError("need at least two (K, total) pairs")
    order = np.argsort(ks)
    ks, totals = ks[order], totals[order]
    design = np.stack([ks, np.ones_like(ks)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(design, totals, rcond=None)
    residuals = totals - design @ np.array([slope, intercept])
    increments = np.diff(totals) / np.diff(ks)
    dev = float(np.max(np.abs(increments - slope)) / abs(slope)) if slope != 0 else float("inf")
    return MarginalCost(float(slope), float(intercept), residuals, increments, dev)
