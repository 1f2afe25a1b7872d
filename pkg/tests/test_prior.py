import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_spd
from ogdiff.prior import (VARIANTS, exponent_adjudication, fit_gaussian_family, normalized_kernel_cov,
                          optimal_prior, optimal_prior_blockdiag, optimal_prior_general, validate_optimality,
                          vp_kernel, GeneralKernel)
from ogdiff.schedule import make_vp_schedule, perturbed_gmm
from ogdiff.stats import DataStats, Gaussian, GaussianMixture, gmm_moments, kl_gaussian, random_mixture


@given(st.floats(0.01, 0.99))
def test_identity_fixed_point(ab):
    p = optimal_prior(DataStats(np.zeros(3), np.eye(3)), ab)
    np.testing.assert_allclose(p.sigma_p_star, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(p.sigma_star, np.eye(3), atol=1e-15)
    np.testing.assert_array_equal(p.mu_star, 0.0)


def test_root_normalization_by_hand():
    p = optimal_prior(DataStats(np.zeros(2), np.diag([4.0, 1.0])), 0.3)
    np.testing.assert_allclose(p.sigma_p_star, np.diag([2.0, 0.5]), rtol=1e-15)
    np.testing.assert_allclose(p.sigma_star, 0.3 * np.diag([4.0, 1.0]) + 0.7 * np.diag([2.0, 0.5]), rtol=1e-15)


def test_literal_normalization_breaks_unit_determinant():
    lit = normalized_kernel_cov(np.diag([4.0, 1.0]), "literal")
    np.testing.assert_allclose(lit, np.diag([1.0, 0.25]))
    assert not np.isclose(np.linalg.det(lit), 1.0)
    with pytest.raises(ValueError):
        normalized_kernel_cov(np.eye(2), "other")
    with pytest.raises(ValueError, match="degenerate"):
        optimal_prior(DataStats(np.zeros(2), np.zeros((2, 2))), 0.5)


@given(st.integers(0, 100_000), st.integers(1, 8), st.floats(0.01, 0.99))
def test_kernel_has_unit_determinant(seed, d, ab):
    rng = np.random.default_rng(seed)
    cov = random_spd(rng, d) * rng.uniform(0.01, 100)
    p = optimal_prior(DataStats(rng.standard_normal(d), cov), ab)
    assert abs(np.linalg.slogdet(p.sigma_p_star)[1]) < 1e-6
    p.kernel  # constructible


def test_blockdiag_single_agent_reduces(rng):
    s = DataStats(rng.standard_normal(3), random_spd(rng, 3))
    a, b = optimal_prior_blockdiag([s], 0.4), optimal_prior(s, 0.4)
    np.testing.assert_allclose(a.sigma_p_star, b.sigma_p_star, rtol=1e-14)
    np.testing.assert_allclose(a.sigma_star, b.sigma_star, rtol=1e-14)
    np.testing.assert_array_equal(a.mu_star, b.mu_star)


def test_blockdiag_identity_blocks():
    p = optimal_prior_blockdiag([DataStats(np.zeros(2), np.eye(2))] * 3, 0.2)
    np.testing.assert_allclose(p.sigma_p_star, np.eye(6), atol=1e-15)


def test_blockdiag_hand_normalization():
    p = optimal_prior_blockdiag([DataStats(np.zeros(2), np.diag([4.0, 1.0])),
                                 DataStats(np.ones(2), np.diag([2.0, 2.0]))], 0.5)
    # (4 * 4)^(-1/4) = 1/2
    np.testing.assert_allclose(p.sigma_p_star, np.diag([2.0, 0.5, 1.0, 1.0]), atol=1e-12)
    with pytest.raises(ValueError):
        optimal_prior_blockdiag([], 0.5)


def test_blockdiag_equals_full_for_block_diagonal_joint(rng):
    from scipy.linalg import block_diag

    a, b = random_spd(rng, 2), random_spd(rng, 3)
    m = rng.standard_normal(5)
    full = optimal_prior(DataStats(m, block_diag(a, b)), 0.6)
    blk = optimal_prior_blockdiag([DataStats(m[:2], a), DataStats(m[2:], b)], 0.6)
    np.testing.assert_allclose(full.sigma_p_star, blk.sigma_p_star, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(full.sigma_star, blk.sigma_star, rtol=1e-12, atol=1e-15)


def test_general_kernel_reduces_to_variance_preserving(rng):
    s = DataStats(rng.standard_normal(3), random_spd(rng, 3))
    p = optimal_prior(s, 0.35)
    g = optimal_prior_general(s, vp_kernel(0.35), p.sigma_p_star)
    np.testing.assert_allclose(g.mean, p.mu_star, rtol=1e-14)
    np.testing.assert_allclose(g.cov, p.sigma_star, rtol=1e-13)
    with pytest.raises(ValueError):
        GeneralKernel(1.0, 0.0, 0.0)


def test_prior_matches_noised_moments(rng):
    mix = random_mixture(3, 3, rng)
    s = make_vp_schedule(100)
    p = optimal_prior(gmm_moments(mix), s.abar(40), T=40)
    pt = gmm_moments(perturbed_gmm(mix, 40, s, p.kernel))
    np.testing.assert_allclose(p.mu_star, pt.mean, atol=1e-12)
    np.testing.assert_allclose(p.sigma_star, pt.cov, atol=1e-10)


def test_exponent_adjudication_on_gaussian_data(rng):
    s = DataStats(rng.standard_normal(3), random_spd(rng, 3) * 3)
    for ab in (0.1, 0.5, 0.9):
        kl = exponent_adjudication(s, ab)
        assert set(kl) == set(VARIANTS)
        assert kl["consistent"] <= 1e-12
        assert kl["squared"] > 0 and kl["mixed"] > 0


def test_validation_on_single_gaussian_is_exact(rng):
    mix = GaussianMixture([1.0], rng.standard_normal((1, 2)), random_spd(rng, 2)[None])
    rep = validate_optimality(mix, make_vp_schedule(100), 20, n_candidates=20, n_draws=2000)
    assert abs(rep.closed.kl) < 1e-12
    assert rep.best_variant == "consistent"
    assert rep.variants["consistent"].kl < rep.variants["squared"].kl


@pytest.mark.parametrize("T", [10, 40, 100])
def test_validation_random_mixture(T):
    mix = random_mixture(2, 3, np.random.default_rng(T))
    rep = validate_optimality(mix, make_vp_schedule(100), T, n_candidates=200, seed=T)
    assert rep.attains_optimum
    assert rep.candidates_beaten == rep.n_candidates == 200
    assert rep.closed.kl <= rep.standard.kl
    assert set(rep.kernel_logdet) == {"root", "literal"}
    assert abs(rep.kernel_logdet["root"]) < 1e-10
    d = rep.to_dict()
    assert d["T"] == T and "families" in d and rep.to_json().startswith("{")


def test_standard_prior_worse_at_small_T(rng):
    mix = random_mixture(3, 3, rng, spread=3.0)
    rep = validate_optimality(mix, make_vp_schedule(100), 10, n_candidates=5, n_draws=5000)
    assert rep.closed.kl < rep.standard.kl - 3 * rep.standard.diff_stderr


def test_kl_shrinks_as_components_collapse(rng):
    base = random_mixture(2, 3, rng)
    s = make_vp_schedule(100)
    kls = []
    for lam in (1.0, 0.5, 0.1, 0.0):
        mix = GaussianMixture(base.weights, lam * base.means, np.stack([base.covs[0]] * 3))
        rep = validate_optimality(mix, s, 10, n_candidates=1, n_draws=20_000, seed=1)
        kls.append(rep.closed.kl)
    assert all(a > b for a, b in zip(kls, kls[1:]))
    assert abs(kls[-1]) < 1e-12


def test_family_fit_recovers_gaussian(rng):
    g = Gaussian(np.array([1.0, -1.0]), np.array([[2.0, 0.4], [0.4, 0.5]]))
    x = g.sample(20_000, rng)
    fit = fit_gaussian_family(x, "full")
    assert kl_gaussian(g, fit) < 1e-3
    scaled = fit_gaussian_family(x, "scaled", base_cov=g.cov)
    assert kl_gaussian(g, scaled) < 1e-3
    diag = fit_gaussian_family(x, "diagonal")
    np.testing.assert_allclose(np.diag(diag.cov), np.diag(g.cov), rtol=0.05)
