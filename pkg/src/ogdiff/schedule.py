"""Variance-preserving noise schedule and perturbation kernel.

Diffusion *time* ``t`` counts applied noising steps: ``t = 0`` is clean data
and ``t = T`` is the most corrupted level. The arrays ``betas`` and
``alpha_bars`` are indexed ``0..T-1`` so that time ``t >= 1`` reads entry
``t - 1``; :meth:`DiffusionSchedule.abar` hides the offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stats import GaussianMixture, _cholesky, _frozen

BETA0 = 1e-4
BETA_T = 0.05


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = _frozen(self.betas)
        if betas.shape != (self.T,) or np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("invalid schedule")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", _frozen(1.0 - betas))
        object.__setattr__(self, "alpha_bars", _frozen(np.cumprod(1.0 - betas)))

    def check_time(self, t: int) -> int:
        if not (0 <= int(t) <= self.T) or int(t) != t:
            raise ValueError("invalid step index")
        return int(t)

    def abar(self, t: int) -> float:
        t = self.check_time(t)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        t = self.check_time(t)
        if t == 0:
            raise ValueError("invalid step index")
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta0": float(self.betas[0]), "betaT": float(self.betas[-1]), "kind": "linear"}


def make_vp_schedule(T: int, beta0: float = BETA0, betaT: float = BETA_T) -> DiffusionSchedule:
    """Linear beta schedule from ``beta0`` to ``betaT`` over ``T`` steps."""
    if T < 1 or not (0 < beta0 <= betaT < 1):
        raise ValueError("invalid schedule")
    if T == 1:
        betas = np.array([beta0])
    else:
        betas = beta0 + np.arange(T) * (betaT - beta0) / (T - 1)
    return DiffusionSchedule(T, betas)


@dataclass(frozen=True, eq=False)
class PerturbationKernel:
    """Noise covariance ``sigma_p`` with unit determinant."""

    sigma_p: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = _frozen(self.sigma_p)
        chol = _cholesky(cov)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        if abs(np.expm1(logdet)) > 1e-6:
            raise ValueError("perturbation kernel must have unit determinant")
        object.__setattr__(self, "sigma_p", cov)
        object.__setattr__(self, "chol", _frozen(chol))

    @classmethod
    def identity(cls, dim: int) -> "PerturbationKernel":
        return cls(np.eye(dim))

    @classmethod
    def normalized(cls, cov: np.ndarray) -> "PerturbationKernel":
        """Rescale ``cov`` by the D-th root of its determinant."""
        cov = np.asarray(cov, dtype=float)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise ValueError("degenerate data covariance")
        return cls(cov * np.exp(-logdet / cov.shape[0]))

    @property
    def dim(self) -> int:
        return self.sigma_p.shape[0]

    @property
    def sigma_diag(self) -> np.ndarray:
        """Elementwise square root of diag(sigma_p)."""
        return np.sqrt(np.diag(self.sigma_p))

    def color(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.chol.T

    def whiten(self, x: np.ndarray) -> np.ndarray:
        from scipy.linalg import solve_triangular

        x = np.asarray(x, dtype=float)
        return solve_triangular(self.chol, np.atleast_2d(x).T, lower=True).T.reshape(x.shape)


def perturb(x0, t: int, sched: DiffusionSchedule, kernel: PerturbationKernel, noise) -> np.ndarray:
    """Forward-noise ``x0`` to time ``t`` using a whitened draw ``noise``."""
    ab = sched.abar(t)
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * kernel.color(noise)


def perturbed_gmm(gmm, t: int, sched: DiffusionSchedule, kernel: PerturbationKernel) -> GaussianMixture:
    """Exact marginal of the noised data at time ``t`` for mixture data."""
    mixture = getattr(gmm, "mixture", gmm)
    ab = sched.abar(t)
    covs = ab * mixture.covs + (1.0 - ab) * kernel.sigma_p[None]
    return GaussianMixture(mixture.weights, np.sqrt(ab) * mixture.means, covs)
