"""Gaussian and Gaussian-mixture primitives.

Dense covariances, Cholesky-factored on construction. Every mixture
computation runs in log space so that responsibilities survive at large
diffusion times where individual component densities underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("singular covariance") from None


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal with a dense covariance.

    Raises ``ValueError("singular covariance")`` when the covariance is not
    symmetric positive definite.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = _frozen(np.atleast_1d(self.mean))
        cov = _frozen(np.atleast_2d(self.cov))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("covariance not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", _frozen(_cholesky(cov)))

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def precision(self) -> np.ndarray:
        return cho_solve((self.chol, True), np.eye(self.dim))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        diff = np.atleast_2d(x) - self.mean
        y = solve_triangular(self.chol, diff.T, lower=True)
        out = -0.5 * (np.sum(y * y, axis=0) + self.logdet + self.dim * LOG_2PI)
        return out if x.ndim > 1 else out[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T


class DataStats(NamedTuple):
    """First two moments of a data distribution."""

    mean: np.ndarray
    cov: np.ndarray


def check_stats(stats: DataStats, tol: float = 1e-10) -> None:
    cov = np.asarray(stats.cov)
    scale = max(1.0, float(np.max(np.abs(cov))))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=tol * scale):
        raise ValueError("covariance not symmetric")
    if np.linalg.eigvalsh(cov).min() < -tol * scale:
        raise ValueError("covariance not positive semi-definite")


class GaussianMixture:
    """Finite mixture of full-covariance Gaussians sharing one dimension.

    Components are stored stacked (``means`` is ``(M, D)``, ``covs`` is
    ``(M, D, D)``) so score and density evaluation vectorise over both the
    batch and the component axis.
    """

    def __init__(self, weights: Sequence[float], means, covs):
        weights = _frozen(weights)
        means = _frozen(np.atleast_2d(means))
        covs = _frozen(np.asarray(covs, dtype=float).reshape(len(weights), means.shape[1], means.shape[1]))
        if weights.ndim != 1 or means.shape[0] != weights.size:
            raise ValueError("one mean per weight required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        self.weights = weights
        self.means = means
        self.covs = covs
        self.chols = _frozen(np.stack([_cholesky(c) for c in covs]))

    @classmethod
    def from_components(cls, weights, components: Sequence[Gaussian]) -> "GaussianMixture":
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")
        return cls(weights, np.stack([c.mean for c in components]), np.stack([c.cov for c in components]))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def components(self) -> list[Gaussian]:
        return [Gaussian(m, c) for m, c in zip(self.means, self.covs)]

    def __repr__(self) -> str:
        return f"GaussianMixture(M={self.n_components}, D={self.dim})"

    @cached_property
    def precisions(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.stack([cho_solve((L, True), eye) for L in self.chols])

    @cached_property
    def _log_norm(self) -> np.ndarray:
        logdets = 2.0 * np.sum(np.log(np.diagonal(self.chols, axis1=1, axis2=2)), axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - 0.5 * (logdets + self.dim * LOG_2PI)

    def _component_terms(self, x: np.ndarray):
        # diff: (M, N, D); s: per-component scores P_m (mu_m - x)
        diff = self.means[:, None, :] - x[None, :, :]
        s = np.matmul(diff, self.precisions)
        logp = self._log_norm[:, None] - 0.5 * np.sum(diff * s, axis=2)
        return s, logp

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, logp = self._component_terms(np.atleast_2d(x))
        out = logsumexp(logp, axis=0)
        return out if x.ndim > 1 else out[0]

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        _, logp = self._component_terms(np.atleast_2d(np.asarray(x, dtype=float)))
        return np.exp(logp - logsumexp(logp, axis=0))

    def score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the log density at each row of ``x``."""
        x = np.asarray(x, dtype=float)
        s, logp = self._component_terms(np.atleast_2d(x))
        r = np.exp(logp - logsumexp(logp, axis=0))
        out = np.einsum("mn,mnd->nd", r, s)
        return out if x.ndim > 1 else out[0]

    def score_hvp(self, x: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Score and Hessian-of-log-density times ``v``, row by row.

        With per-component scores s_m and the mixture score s,
        H v = sum_m r_m (-P_m v + s_m (s_m . v)) - s (s . v).
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x, v = np.atleast_2d(x), np.atleast_2d(np.asarray(v, dtype=float))
        s, logp = self._component_terms(x)
        r = np.exp(logp - logsumexp(logp, axis=0))
        score = np.einsum("mn,mnd->nd", r, s)
        pv = np.matmul(v[None, :, :], self.precisions)
        sv = np.sum(s * v[None], axis=2)
        hv = np.einsum("mn,mnd->nd", r, s * sv[:, :, None] - pv)
        hv -= score * np.sum(score * v, axis=1, keepdims=True)
        if single:
            return score[0], hv[0]
        return score, hv

    def sample(self, n: int, rng: np.random.Generator, return_labels: bool = False):
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        x = self.means[labels] + np.einsum("nij,nj->ni", self.chols[labels], z)
        return (x, labels) if return_labels else x


def gmm_moments(gmm: GaussianMixture) -> DataStats:
    w = gmm.weights
    mean = w @ gmm.means
    second = np.einsum("m,mij->ij", w, gmm.covs + np.einsum("mi,mj->mij", gmm.means, gmm.means))
    cov = second - np.outer(mean, mean)
    cov = 0.5 * (cov + cov.T)
    return DataStats(mean, cov)


def gmm_score(gmm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    return gmm.score(x)


def kl_gaussian(p: Gaussian, q: Gaussian) -> float:
    """Closed-form KL(p || q)."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    d = p.dim
    a = solve_triangular(q.chol, p.chol, lower=True)
    dm = solve_triangular(q.chol, q.mean - p.mean, lower=True)
    kl = 0.5 * (np.sum(a * a) + dm @ dm - d + q.logdet - p.logdet)
    return max(float(kl), 0.0)


class McEstimate(NamedTuple):
    value: float
    stderr: float


def mc_kl(p_logpdf, q_logpdf, draws: np.ndarray) -> McEstimate:
    """Monte Carlo KL(p || q) from draws of p."""
    diff = p_logpdf(draws) - q_logpdf(draws)
    return McEstimate(float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(diff.size)))


def kl_gmm_vs_gaussian(p: GaussianMixture, q: Gaussian, n_draws: int, seed) -> McEstimate:
    """Unbiased Monte Carlo KL(p || q) with its standard error."""
    if n_draws < 1000:
        raise ValueError("n_draws must be at least 1000")
    draws = p.sample(n_draws, np.random.default_rng(seed))
    return mc_kl(p.logpdf, q.logpdf, draws)


def random_mixture(dim: int, n_components: int, rng: np.random.Generator, spread: float = 2.0) -> GaussianMixture:
    """Mixture with Dirichlet weights, spread-out means and Wishart-like covariances."""
    if dim < 1 or n_components < 1:
        raise ValueError("need dim >= 1 and n_components >= 1")
    weights = rng.dirichlet(np.full(n_components, 2.0))
    means = spread * rng.standard_normal((n_components, dim))
    A = rng.standard_normal((n_components, dim, dim)) / np.sqrt(dim)
    covs = np.einsum("mij,mkj->mik", A, A) + 0.1 * np.eye(dim)
    return GaussianMixture(weights, means, covs)
