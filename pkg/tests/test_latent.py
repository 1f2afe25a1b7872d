import numpy as np
import pytest
from hypothesis import given, strategies as st

from ogdiff.latent import (LinearMap, block_map, decode, encode, map_losses, pca_map, pushforward_gmm,
                           train_linear_map)
from ogdiff.scenario import SceneSpec, make_scene
from ogdiff.stats import random_mixture


@pytest.fixture(scope="module")
def trained():
    """Map with Z=4 trained on single-agent trajectories (X=24) plus held-out data."""
    scene = make_scene(SceneSpec(1), 0)
    rng = np.random.default_rng(7)
    train, held = scene.sample(1000, rng), scene.sample(1000, rng)
    return train_linear_map(train, 4, seed=0), train, held


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_encode_decode_are_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    m = LinearMap(rng.normal(size=(6, 3)), rng.normal(size=(3, 6)))
    x, y = rng.normal(size=6), rng.normal(size=6)
    np.testing.assert_allclose(encode(m, a * x + b * y), a * encode(m, x) + b * encode(m, y), atol=1e-12)
    zx, zy = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(decode(m, a * zx + b * zy), a * decode(m, zx) + b * decode(m, zy), atol=1e-12)
    assert np.all(encode(m, np.zeros(6)) == 0) and np.all(decode(m, np.zeros(3)) == 0)


def test_map_validation():
    with pytest.raises(ValueError):
        LinearMap(np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        LinearMap(np.full((2, 2), np.nan), np.zeros((2, 2)))


def test_identity_map_losses(rng):
    x = rng.normal(size=(200, 5))
    (l_rec, l_reg, l_var), *_ = map_losses(np.eye(5), np.eye(5), 1.0, x)
    assert l_rec == 0.0 and l_reg == 0.0
    assert l_var == pytest.approx(np.sum((x.std(axis=0) - 1.0) ** 2))
    m = LinearMap.identity(5)
    np.testing.assert_array_equal(decode(m, encode(m, x)), x)


def test_map_loss_gradients_match_finite_differences(rng):
    x = rng.normal(size=(50, 5)) + 1.0
    U, V, eta = rng.normal(size=(5, 2)), rng.normal(size=(2, 5)), 0.7

    def total(U, V, eta):
        return sum(map_losses(U, V, eta, x)[0])

    _, gz, gV, g_eta = map_losses(U, V, eta, x)
    gU = x.T @ sum(gz)
    h = 1e-6
    for arr, grad in ((U, gU), (V, gV)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = total(U, V, eta)
            arr[idx] = old - h
            down = total(U, V, eta)
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-6)
    assert g_eta == pytest.approx((total(U, V, eta + h) - total(U, V, eta - h)) / (2 * h), rel=1e-5)


def test_exact_low_rank_data_is_recovered(rng):
    basis = rng.normal(size=(3, 12))
    x = rng.normal(size=(400, 3)) @ basis
    res = train_linear_map(x, 3, seed=1)
    second_moment = np.mean(np.sum(x**2, axis=1))
    assert res.losses["rec"][-1] * res.scale**2 < 1e-6 * second_moment
    assert res.losses["total"][-1] <= res.losses["total"][0]


def test_training_is_deterministic_in_seed(rng):
    x = rng.normal(size=(100, 6)) @ rng.normal(size=(6, 6))
    a = train_linear_map(x, 2, steps=200, seed=3).map
    b = train_linear_map(x, 2, steps=200, seed=3).map
    np.testing.assert_array_equal(a.U, b.U)
    np.testing.assert_array_equal(a.V, b.V)


def test_momentum_optimizer_decreases_loss(rng):
    x = rng.normal(size=(100, 6)) @ rng.normal(size=(6, 6))
    res = train_linear_map(x, 2, steps=500, optimizer="momentum", lr=0.01)
    assert res.losses["total"][-1] < 0.1 * res.losses["total"][0]


def test_training_preconditions(rng):
    x = rng.normal(size=(100, 6))
    with pytest.raises(ValueError):
        train_linear_map(x, 6)
    with pytest.raises(ValueError):
        train_linear_map(x[:50], 2)
    with pytest.raises(ValueError):
        train_linear_map(x, 2, optimizer="adam")
    with pytest.raises(RuntimeError, match="training diverged"):
        train_linear_map(x, 2, steps=200, optimizer="momentum", lr=100.0)


def test_trained_map_equalizes_latent_spread(trained):
    res, train, _ = trained
    std = encode(res.map, train).std(axis=0)
    assert std.max() / std.min() < 1.5
    assert std.max() / std.min() < 1.2  # desk-scale version of "consistent latent variances"
    assert res.map.eta == pytest.approx(std.mean(), rel=1e-3)


def test_trained_map_preserves_distance_on_held_out(trained):
    res, _, held = trained
    norm2 = np.sum(held**2, axis=1)
    rel = np.abs(norm2 - np.sum(encode(res.map, held) ** 2, axis=1)) / norm2
    assert np.mean(rel < 0.1) >= 0.95


def test_trained_map_round_trip(trained):
    res, train, held = trained
    for x in (train, held):
        err = np.linalg.norm(decode(res.map, encode(res.map, x)) - x) / np.linalg.norm(x)
        assert err < 0.05


def test_trained_decoder_rows_are_orthogonal(trained):
    V = trained[0].map.V
    Vn = V / np.linalg.norm(V, axis=1, keepdims=True)
    off = Vn @ Vn.T - np.eye(len(V))
    assert np.abs(off).max() < 0.05


def test_pca_map_is_orthonormal_projection(rng):
    x = rng.normal(size=(300, 8)) * np.arange(1, 9)
    m = pca_map(x, 3)
    np.testing.assert_allclose(m.U.T @ m.U, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(np.abs(m.U[[7, 6, 5]].diagonal()), 1.0, atol=0.1)


def test_pushforward_identity_is_unchanged(rng):
    gmm = random_mixture(4, 3, rng)
    out = pushforward_gmm(LinearMap.identity(4), gmm)
    np.testing.assert_array_equal(out.weights, gmm.weights)
    np.testing.assert_allclose(out.means, gmm.means, atol=0)
    np.testing.assert_allclose(out.covs, gmm.covs, atol=1e-15)


def test_pushforward_orthonormal_preserves_determinants(rng):
    gmm = random_mixture(5, 2, rng)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    out = pushforward_gmm(LinearMap(Q, Q.T), gmm)
    np.testing.assert_allclose(np.linalg.det(out.covs), np.linalg.det(gmm.covs), rtol=1e-10)


def test_pushforward_matches_monte_carlo(rng):
    joint = make_scene(SceneSpec(2, interaction_coupling=0.5), 3)
    m = block_map(LinearMap(*(lambda q: (q, q.T))(np.linalg.qr(rng.normal(size=(24, 4)))[0])), 2)
    latent = pushforward_gmm(m, joint)
    n = 20000
    z = encode(m, joint.sample(n, rng))
    w = latent.weights
    mean = w @ latent.means
    dev = latent.means - mean
    cov = np.einsum("m,mij->ij", w, latent.covs) + np.einsum("m,mi,mj->ij", w, dev, dev)
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(z.mean(axis=0) - mean) < 3 * se)
    var_se = np.sqrt(np.var((z - z.mean(axis=0)) ** 2, axis=0) / n)
    assert np.all(np.abs(z.var(axis=0) - np.diag(cov)) < 3.5 * var_se)


def test_linear_map_dict_round_trip(rng):
    m = LinearMap(rng.normal(size=(4, 2)), rng.normal(size=(2, 4)), 0.3)
    back = LinearMap.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.U, m.U)
    assert back.eta == m.eta


def test_latent_diffusion_is_within_twice_trajectory_space_quality():
    # default sampler configuration (DDIM stride 10) in both spaces
    from ogdiff.denoiser import OracleDenoiser
    from ogdiff.evaluate import sliced_wasserstein
    from ogdiff.prior import optimal_prior
    from ogdiff.sampler import OgdPrior, SamplerConfig, generate
    from ogdiff.schedule import make_vp_schedule
    from ogdiff.stats import gmm_moments

    scene = make_scene(SceneSpec(2, interaction_coupling=0.5), 4)
    rng = np.random.default_rng(21)
    per_agent = scene.sample(300, rng).reshape(-1, scene.spec.agent_dim)
    m = block_map(train_linear_map(per_agent, 4).map, 2)
    gt = scene.sample(1000, rng)
    sched = make_vp_schedule(100)

    def quality(mix, out):
        p = optimal_prior(gmm_moments(mix), sched.abar(40), T=40)
        res = generate(OracleDenoiser(mix, sched, p.kernel), OgdPrior(p), SamplerConfig(40, n_samples=1000, seed=1),
                       sched, p.kernel)
        return sliced_wasserstein(out(res.samples), gt, seed=0)

    trajectory = quality(scene.mixture, lambda x: x)
    latent = quality(pushforward_gmm(m, scene), lambda z: decode(m, z))
    assert latent <= 2.0 * trajectory
