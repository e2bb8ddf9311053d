import numpy as np
import pytest
from scipy import integrate

from bop import diffcore as dc
from bop.diffcore import Tensor
from bop.policy import CategoricalPolicy
from bop.retdist import (LOGIT_CLAMP, AdversarialBatch, Head, SharedVae, discriminator_loss,
                         discriminator_prob, encode, encoder_prior_loss, generator_loss,
                         make_adversaries, prior_params, sample_return, sample_returns_all,
                         sync_targets)

OBS, L, W = 4, 1, 8


@pytest.fixture
def shared():
    return SharedVae.create(OBS, L, W, seed=1)


def make_head(i=0, latent=L):
    pol = CategoricalPolicy(OBS, 2, W, rng=np.random.default_rng(i))
    return Head.create(i, OBS, pol, latent, W, seed=3)


def groups(shared, heads):
    g = {"discriminator": shared.discriminator.parameters(),
         "encoder": shared.encoder.parameters(), "prior": shared.prior.parameters()}
    for h in heads:
        g[f"generator{h.index}"] = h.generator.parameters()
        g[f"target{h.index}"] = h.target.parameters()
        g[f"policy{h.index}"] = h.policy.parameters()
    return g


def touched(shared, heads):
    return {n for n, ps in groups(shared, heads).items()
            if any(p.grad is not None and np.any(p.grad != 0) for p in ps)}


def clear(shared, heads):
    for ps in groups(shared, heads).values():
        for p in ps:
            p.grad = None


def test_sample_mean_matches_quadrature(shared):
    """With L = 1 the expected return E_z[G(z, s)] is a 1-D integral."""
    head = make_head()
    s = np.eye(OBS)[[2]]
    mu, sigma = prior_params(shared, s)
    mu, sigma = mu[0, 0], sigma[0, 0]

    def integrand(z):
        out = head.generator.apply(np.array([[z, *s[0]]]))[0, 0]
        return out * np.exp(-0.5 * ((z - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))

    expected, _ = integrate.quad(integrand, mu - 12 * sigma, mu + 12 * sigma, limit=200)
    rng = np.random.default_rng(0)
    draws = sample_return(head, shared, np.repeat(s, 40000, axis=0), rng).value
    se = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - expected) < 4 * se + 1e-9


def test_shared_latent_feeds_every_head(shared):
    heads = [make_head(i) for i in range(3)]
    s = np.eye(OBS)
    g, z = sample_returns_all(heads, shared, s, np.random.default_rng(2))
    assert g.shape == (3, OBS) and z.shape == (OBS, L)
    for i, h in enumerate(heads):
        np.testing.assert_array_equal(g[i], sample_return(h, shared, s, None, z=z).value)


def _zero_net(net):
    for p in net.params:
        p.data = np.zeros_like(p.data)


def test_zero_discriminator_is_half(shared):
    _zero_net(shared.discriminator)
    rng = np.random.default_rng(0)
    p = discriminator_prob(shared, rng.normal(size=5), rng.normal(size=(5, L)),
                           rng.normal(size=(5, OBS)))
    np.testing.assert_array_equal(p, np.full(5, 0.5))
    batch = AdversarialBatch(*(Tensor(a) for a in (rng.normal(size=5), rng.normal(size=(5, L)),
                                                    rng.normal(size=5), rng.normal(size=(5, L)),
                                                    rng.normal(size=(5, OBS)))))
    assert discriminator_loss(shared, batch).item() == pytest.approx(2 * np.log(0.5), abs=1e-15)
    assert encoder_prior_loss(shared, batch).item() == pytest.approx(2 * np.log(0.5), abs=1e-15)


def test_logit_is_clamped(shared):
    shared.discriminator.params[-1].data = np.array([1e4])
    p = discriminator_prob(shared, np.zeros(2), np.zeros((2, L)), np.zeros((2, OBS)))
    np.testing.assert_allclose(p, 1 / (1 + np.exp(-LOGIT_CLAMP)), rtol=1e-15)


def test_discriminator_loss_matches_hand_computation(shared):
    rng = np.random.default_rng(3)
    x, zb, xb, z, s = (rng.normal(size=6), rng.normal(size=(6, L)), rng.normal(size=6),
                       rng.normal(size=(6, L)), rng.normal(size=(6, OBS)))
    batch = AdversarialBatch(*(Tensor(a) for a in (x, zb, xb, z, s)))
    d_fake = discriminator_prob(shared, xb, z, s)
    d_real = discriminator_prob(shared, x, zb, s)
    want = np.mean(np.log(d_fake) + np.log(1 - d_real))
    assert discriminator_loss(shared, batch).item() == pytest.approx(want, abs=1e-12)
    flipped = np.mean(np.log(1 - d_fake) + np.log(d_real))
    assert encoder_prior_loss(shared, batch).item() == pytest.approx(flipped, abs=1e-12)


def test_gradient_isolation_per_objective(shared):
    heads = [make_head(i) for i in range(2)]
    rng = np.random.default_rng(4)
    B = 5
    s = rng.normal(size=(B, OBS))
    targets = rng.normal(size=(2, B))
    adv = make_adversaries(heads, shared, targets, s, rng.standard_normal((2, B, L)),
                           rng.standard_normal((B, L)))
    batch = AdversarialBatch(Tensor(targets[0]), adv.z_bar, adv.x_bar, adv.z, Tensor(s))

    clear(shared, heads)
    dc.backward(-discriminator_loss(shared, batch))
    assert touched(shared, heads) == {"discriminator"}

    clear(shared, heads)
    dc.backward(-encoder_prior_loss(shared, batch))
    assert touched(shared, heads) == {"encoder", "prior"}

    for i, h in enumerate(heads):
        clear(shared, heads)
        dc.backward(generator_loss(h, adv.z_tilde[i], targets[i], s))
        assert touched(shared, heads) == {f"generator{i}"}


def test_generator_loss_hand_value():
    head = make_head()
    rng = np.random.default_rng(5)
    z, s, x = rng.normal(size=(4, L)), rng.normal(size=(4, OBS)), rng.normal(size=4)
    pred = head.generator.apply(np.concatenate([z, s], axis=1))[:, 0]
    assert generator_loss(head, z, x, s).item() == pytest.approx(np.mean((pred - x) ** 2))
    mask = np.array([1, 0, 1, 0])
    masked = generator_loss(head, z, x, s, mask).item()
    assert masked == pytest.approx(np.mean(((pred - x) ** 2)[[0, 2]]))


def test_target_sync():
    head = make_head()
    for a, b in zip(head.generator.arrays(), head.target.arrays()):
        np.testing.assert_array_equal(a, b)
    head.generator.params[0].data = head.generator.params[0].data + 1.0
    assert not np.array_equal(head.generator.params[0].data, head.target.params[0].data)
    sync_targets([head])
    for a, b in zip(head.generator.arrays(), head.target.arrays()):
        np.testing.assert_array_equal(a, b)
    # a copy, not an alias
    head.generator.params[0].data += 1.0
    assert not np.array_equal(head.generator.params[0].data, head.target.params[0].data)


def test_encode_sigma_positive(shared):
    mu, sigma = encode(shared, np.linspace(-100, 100, 7), np.zeros((7, OBS)))
    assert mu.shape == (7, L) and np.all(sigma > 0)
