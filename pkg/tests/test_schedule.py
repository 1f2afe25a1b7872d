import numpy as np
import pytest
from scipy.stats import chi2
from hypothesis import given, strategies as st

from ogdiff.schedule import PerturbationKernel, make_vp_schedule, perturb, perturbed_gmm
from ogdiff.stats import Gaussian, GaussianMixture, kl_gmm_vs_gaussian, random_mixture


def test_linear_schedule_endpoints():
    s = make_vp_schedule(100, 1e-4, 0.05)
    assert s.betas[0] == 1e-4
    assert np.isclose(s.betas[99], 0.05, rtol=1e-15)


def test_single_step_schedule():
    s = make_vp_schedule(1, 1e-4, 0.05)
    assert s.alpha_bars[0] == 0.9999
    assert s.abar(0) == 1.0 and s.abar(1) == 0.9999


def test_alpha_bar_matches_extended_precision_product():
    from fractions import Fraction

    s = make_vp_schedule(100)
    exact = Fraction(1)
    for b in s.betas:
        exact *= 1 - Fraction(float(b))
    assert abs(s.alpha_bars[-1] - float(exact)) <= 1e-12 * float(exact)


@given(st.integers(1, 1000))
def test_alpha_bar_strictly_decreasing_in_unit_interval(T):
    s = make_vp_schedule(T)
    abars = np.array([s.abar(t) for t in range(T + 1)])
    assert np.all(np.diff(abars) < 0)
    assert np.all((abars > 0) & (abars <= 1))


def test_invalid_inputs():
    with pytest.raises(ValueError, match="invalid schedule"):
        make_vp_schedule(0)
    with pytest.raises(ValueError, match="invalid schedule"):
        make_vp_schedule(10, 0.1, 0.05)
    s = make_vp_schedule(10)
    for bad in (-1, 11, 2.5):
        with pytest.raises(ValueError, match="invalid step index"):
            s.abar(bad)
    with pytest.raises(ValueError, match="invalid step index"):
        s.beta(0)


def test_kernel_requires_unit_determinant():
    with pytest.raises(ValueError, match="unit determinant"):
        PerturbationKernel(np.diag([2.0, 1.0]))
    k = PerturbationKernel.normalized(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(k.sigma_p, np.diag([2.0, 0.5]))
    with pytest.raises(ValueError):
        PerturbationKernel.normalized(np.zeros((2, 2)))


def test_kernel_whiten_inverts_color(rng):
    k = PerturbationKernel.normalized(np.array([[2.0, 0.5], [0.5, 1.0]]))
    z = rng.standard_normal((7, 2))
    np.testing.assert_allclose(k.whiten(k.color(z)), z, atol=1e-13)


def test_perturb_zero_noise():
    s = make_vp_schedule(100)
    x0 = np.array([1.0, -2.0])
    np.testing.assert_array_equal(perturb(x0, 40, s, PerturbationKernel.identity(2), np.zeros(2)),
                                  np.sqrt(s.abar(40)) * x0)


def test_perturb_moments(rng):
    s = make_vp_schedule(100)
    kern = PerturbationKernel.identity(2)
    x0 = np.array([3.0, -1.0])
    n = 100_000
    x = perturb(x0, 30, s, kern, rng.standard_normal((n, 2)))
    z = (x.mean(0) - np.sqrt(s.abar(30)) * x0) / np.sqrt((1 - s.abar(30)) / n)
    assert z @ z < chi2.ppf(0.999, 2)
    x = perturb(np.zeros(2), 30, s, kern, rng.standard_normal((n, 2)))
    np.testing.assert_allclose(np.cov(x.T), (1 - s.abar(30)) * np.eye(2), rtol=0.05, atol=0.05 * (1 - s.abar(30)))


def test_perturbed_gmm_near_identity_at_start(rng):
    mix = random_mixture(3, 2, rng)
    out = perturbed_gmm(mix, 0, make_vp_schedule(100), PerturbationKernel.identity(3))
    np.testing.assert_allclose(out.means, mix.means, rtol=1e-3)
    out = perturbed_gmm(mix, 1, make_vp_schedule(100), PerturbationKernel.identity(3))
    np.testing.assert_allclose(out.means, mix.means, rtol=1e-3)


@given(st.integers(0, 100))
def test_variance_preserving_fixed_point(t):
    mix = GaussianMixture([1.0], np.zeros((1, 2)), np.eye(2)[None])
    out = perturbed_gmm(mix, t, make_vp_schedule(100), PerturbationKernel.identity(2))
    np.testing.assert_array_equal(out.means, 0.0)
    np.testing.assert_allclose(out.covs[0], np.eye(2), atol=1e-15)


def test_perturbed_density_matches_monte_carlo(rng):
    s = make_vp_schedule(100)
    kern = PerturbationKernel.normalized(np.array([[2.0, 0.3], [0.3, 0.7]]))
    mix = random_mixture(2, 3, rng)
    pt = perturbed_gmm(mix, 50, s, kern)
    x0 = mix.sample(200_000, rng)
    xt = perturb(x0, 50, s, kern, rng.standard_normal(x0.shape))
    # probability of a box from draws versus from the exact density
    lo, hi = np.array([-0.5, -0.5]), np.array([0.5, 0.5])
    inside = np.all((xt > lo) & (xt < hi), axis=1)
    grid = np.stack(np.meshgrid(np.linspace(-0.5, 0.5, 201), np.linspace(-0.5, 0.5, 201)), -1).reshape(-1, 2)
    prob = np.exp(pt.logpdf(grid)).mean() * 1.0
    se = np.sqrt(prob * (1 - prob) / len(xt))
    assert abs(inside.mean() - prob) < 4 * se + 1e-4


def test_kl_to_kernel_decreases_with_T(rng):
    mix = random_mixture(2, 3, rng)
    kern = PerturbationKernel.identity(2)
    kls = []
    for T in (10, 30, 100, 300):
        s = make_vp_schedule(T)
        kls.append(kl_gmm_vs_gaussian(perturbed_gmm(mix, T, s, kern), Gaussian(np.zeros(2), np.eye(2)), 20_000, 0).value)
    assert all(a > b for a, b in zip(kls, kls[1:]))
