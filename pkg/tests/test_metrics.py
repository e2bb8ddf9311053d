import numpy as np
import pytest

from bop.diffcore import ContractError
from bop.metrics import diversity_from_probs, marginal_head_cost


def test_identical_heads_have_zero_diversity():
    p = np.tile([[0.3, 0.7], [0.5, 0.5]], (3, 1, 1))
    rep = diversity_from_probs(p)
    assert rep.mean_l1 == 0.0
    assert rep.mean_cosine == pytest.approx(1.0)


def test_opposite_deterministic_heads():
    p = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    rep = diversity_from_probs(p)
    assert rep.mean_l1 == 2.0
    assert rep.mean_cosine == 0.0


def test_hand_computed_l1():
    p = np.array([[[0.6, 0.4], [0.5, 0.5]], [[0.2, 0.8], [0.5, 0.5]], [[0.6, 0.4], [1.0, 0.0]]])
    rep = diversity_from_probs(p)
    assert rep.l1[0, 1] == pytest.approx((0.8 + 0.0) / 2)
    assert rep.l1[0, 2] == pytest.approx((0.0 + 1.0) / 2)
    assert rep.l1[1, 2] == pytest.approx((0.8 + 1.0) / 2)
    assert rep.mean_l1 == pytest.approx((0.4 + 0.5 + 0.9) / 3)


def test_single_head_and_empty_probe():
    assert diversity_from_probs(np.ones((1, 3, 2)) / 2).mean_l1 == 0.0
    with pytest.raises(ContractError):
        diversity_from_probs(np.zeros((2, 0, 2)))


def test_marginal_cost_exact_affine():
    mc = marginal_head_cost([1, 2, 3, 5], [1000 + 300 * k for k in (1, 2, 3, 5)])
    assert mc.slope == pytest.approx(300)
    assert mc.intercept == pytest.approx(1000)
    assert mc.max_rel_deviation == pytest.approx(0, abs=1e-12)


def test_marginal_cost_detects_nonlinearity():
    mc = marginal_head_cost([1, 2, 3, 5], [k * k * 100 for k in (1, 2, 3, 5)])
    assert mc.max_rel_deviation > 0.1
