import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bop.advantage import AdvantageInputs
from bop.curiosity import augment, curiosity_bonus, gaussian_kl, information_gain
from bop.diffcore import ContractError
from bop.retdist import SharedVae, encode
from oracles import kl_by_quadrature


def test_kl_identical_is_zero():
    mu, s = np.array([0.3, -1.0]), np.array([0.5, 2.0])
    assert gaussian_kl(mu, s, mu, s) == 0.0


def test_kl_unit_shift():
    assert kl_by_quadrature(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.5, abs=1e-6)
    assert gaussian_kl([1.0], [1.0], [0.0], [1.0]) == pytest.approx(0.5, abs=1e-12)


def test_kl_scale_change():
    expected = np.log(1 / 2) + 4 / 2 - 0.5
    assert kl_by_quadrature(0.0, 2.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-6)
    assert gaussian_kl([0.0], [2.0], [0.0], [1.0]) == pytest.approx(expected, abs=1e-12)


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(ContractError):
        gaussian_kl([0.0], [0.0], [0.0], [1.0])


@pytest.mark.parametrize("seed", range(10))
def test_kl_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    mu1, mu2 = rng.normal(size=2)
    s1, s2 = rng.uniform(0.3, 3.0, size=2)
    assert gaussian_kl([mu1], [s1], [mu2], [s2]) == pytest.approx(
        kl_by_quadrature(mu1, s1, mu2, s2), abs=1e-6)


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 5), st.floats(-5, 5),
                          st.floats(0.05, 5)), min_size=1, max_size=6))
@settings(max_examples=200, deadline=None)
def test_kl_nonnegative_and_zero_iff_equal(dims):
    mu1, s1, mu2, s2 = (np.array(c) for c in zip(*dims))
    kl = gaussian_kl(mu1, s1, mu2, s2)
    assert kl >= 0
    if np.array_equal(mu1, mu2) and np.array_equal(s1, s2):
        assert kl == 0
    assert gaussian_kl(mu1, s1, mu1, s1) == 0


@pytest.fixture
def shared():
    return SharedVae.create(obs_dim=5, latent_dim=3, width=16, seed=4)


def test_information_gain_zero_when_target_equals_sample(shared):
    s = np.eye(5)[[0, 2, 4]]
    x = np.array([0.2, -0.4, 1.0])
    np.testing.assert_array_equal(information_gain(shared, x, x, s), np.zeros(3))


def test_information_gain_composes_encoder_and_kl(shared):
    rng = np.random.default_rng(0)
    s = np.eye(5)[rng.integers(0, 5, size=6)]
    x, g = rng.normal(size=6), rng.normal(size=6)
    mu1, s1 = encode(shared, x, s)
    mu2, s2 = encode(shared, g, s)
    ig = information_gain(shared, x, g, s)
    np.testing.assert_allclose(ig, gaussian_kl(mu1, s1, mu2, s2), rtol=0, atol=1e-12)
    assert np.all(ig >= 0)


def test_information_gain_records_no_gradient(shared):
    s = np.eye(5)[:2]
    information_gain(shared, np.array([0.1, 0.2]), np.array([0.3, -0.2]), s)
    assert all(p.grad is None for p in shared.encoder.parameters())


def _inputs(T=6, seed=0, on_policy=True):
    rng = np.random.default_rng(seed)
    dones = np.zeros(T, bool)
    dones[-1] = True
    return AdvantageInputs(rng.normal(size=T), rng.normal(size=T + 1), dones, 0.99, 0.95,
                           on_policy=on_policy, behaviour_logp=np.log(rng.uniform(0.2, 1, T)),
                           target_logp=np.log(rng.uniform(0.2, 1, T)))


@pytest.mark.parametrize("on_policy", [True, False])
def test_augment_beta_zero_is_identity(on_policy):
    inp = _inputs(on_policy=on_policy)
    kl = np.random.default_rng(1).uniform(0, 3, size=6)
    assert np.array_equal(augment(inp, kl, 0.0), inp.compute())


def test_augment_zero_kl_is_identity():
    inp = _inputs()
    assert np.array_equal(augment(inp, np.zeros(6), 0.05), inp.compute())


def test_augment_single_step_shift_is_beta_kl():
    inp = AdvantageInputs(np.array([0.3]), np.array([0.5, 2.0]), np.array([True]), 0.99, 0.95)
    for kl in (0.0, 0.4, 3.0, 10.0):
        diff = augment(inp, np.array([kl]), 0.05, clip=None) - inp.compute()
        assert diff[0] == pytest.approx(0.05 * kl, abs=1e-15)


def test_bonus_is_clipped():
    np.testing.assert_array_equal(curiosity_bonus([0.0, 10.0, 100.0], 0.05, 1.0), [0.0, 0.5, 1.0])
