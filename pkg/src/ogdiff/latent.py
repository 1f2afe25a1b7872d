"""Linear latent map for trajectories.

Encode z = x U, decode x = z V, trained on three losses:

    L_rec = mean ||z V - x||^2                 reconstruction
    L_reg = mean (||x||^2 - ||z||^2)^2         distance preservation
    L_var = sum_j (std_j(z) - eta)^2           equal per-dimension spread

Training runs on data rescaled to unit RMS norm for step-size robustness.
The losses are invariant to that rescaling apart from eta, so the trained
U and V act on raw trajectories directly and eta is reported in raw units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import minimize

from .stats import GaussianMixture


@dataclass(frozen=True, eq=False)
class LinearMap:
    U: np.ndarray  # (X, Z)
    V: np.ndarray  # (Z, X)
    eta: float = 1.0

    def __post_init__(self):
        U, V = np.asarray(self.U, dtype=float), np.asarray(self.V, dtype=float)
        if U.ndim != 2 or V.shape != U.shape[::-1]:
            raise ValueError("U must be (X, Z) and V must be (Z, X)")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise ValueError("non-finite map entries")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def X(self) -> int:
        return self.U.shape[0]

    @property
    def Z(self) -> int:
        return self.U.shape[1]

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(np.eye(dim), np.eye(dim))

    def to_dict(self) -> dict:
        return {"U": self.U, "V": self.V, "eta": float(self.eta)}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearMap":
        return cls(np.asarray(d["U"], dtype=float), np.asarray(d["V"], dtype=float), float(d["eta"]))


def encode(m: LinearMap, x: np.ndarray) -> np.ndarray:
    return np.asarray(x) @ m.U


def decode(m: LinearMap, z: np.ndarray) -> np.ndarray:
    return np.asarray(z) @ m.V


def block_map(m: LinearMap, n: int) -> LinearMap:
    """Apply the same per-agent map to each of ``n`` agent blocks."""
    return LinearMap(block_diag(*[m.U] * n), block_diag(*[m.V] * n), m.eta)


def pushforward_gmm(m: LinearMap, gmm) -> GaussianMixture:
    """Exact latent mixture: means mu U, covariances U^T Sigma U."""
    mix = getattr(gmm, "mixture", gmm)
    covs = np.einsum("ji,mjk,kl->mil", m.U, mix.covs, m.U)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return GaussianMixture(mix.weights, mix.means @ m.U, covs)


def map_losses(U, V, eta, x):
    """Loss values and gradients for (U, V, eta) on normalized data ``x``."""
    N = x.shape[0]
    z = x @ U
    R = z @ V - x
    l_rec = np.sum(R * R) / N
    e = np.sum(x * x, axis=1) - np.sum(z * z, axis=1)
    l_reg = np.sum(e * e) / N
    dev = z - z.mean(axis=0)
    std = np.sqrt(np.mean(dev * dev, axis=0))
    safe = np.maximum(std, 1e-12)
    l_var = np.sum((std - eta) ** 2)

    g_V_rec = 2.0 / N * z.T @ R
    g_z_rec = 2.0 / N * R @ V.T
    g_z_reg = -4.0 / N * e[:, None] * z
    g_z_var = 2.0 * (std - eta) / (N * safe) * dev
    g_eta = -2.0 * np.sum(std - eta)
    return (l_rec, l_reg, l_var), (g_z_rec, g_z_reg, g_z_var), g_V_rec, g_eta


@dataclass
class MapTrainResult:
    map: LinearMap
    losses: dict = field(default_factory=dict)  # name -> (steps,) curve
    scale: float = 1.0


def train_linear_map(trajectories: np.ndarray, Z: int, weights=(1.0, 1.0, 1.0), steps: int = 20000,
                     lr: float = 0.05, seed=0, momentum: float = 0.9, optimizer: str = "lbfgs") -> MapTrainResult:
    """Minimize w_rec L_rec + w_reg L_reg + w_var L_var over (U, V, eta).

    Args:
        trajectories: (N, X) training trajectories with N >= 10 X.
        Z: latent width, 1 <= Z < X.
        weights: (w_rec, w_reg, w_var).
        steps: iteration budget.
        lr: step size for the momentum optimizer.
        seed: seed of the random orthonormal initialization.
        momentum: momentum coefficient for the momentum optimizer.
        optimizer: "lbfgs" (quasi-Newton, default) or "momentum" (plain
            full-batch heavy-ball descent). The loss has a nearly flat valley
            of sheared solutions around the orthogonal optimum which heavy-ball
            descent crosses very slowly; L-BFGS resolves it.

    Returns:
        The trained map in raw units and per-iteration loss curves.
    """
    x_raw = np.asarray(trajectories, dtype=float)
    N, X = x_raw.shape
    if not 1 <= Z < X:
        raise ValueError("need 1 <= Z < X")
    if N < 10 * X:
        raise ValueError("need at least 10 * X trajectories")
    if optimizer not in ("lbfgs", "momentum"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    w_rec, w_reg, w_var = weights
    scale = float(np.sqrt(np.mean(np.sum(x_raw**2, axis=1))))
    if not scale > 0:
        raise ValueError("degenerate data covariance")
    x = x_raw / scale

    rng = np.random.default_rng(seed)
    U0, _ = np.linalg.qr(rng.standard_normal((X, Z)))
    history = {k: [] for k in ("total", "rec", "reg", "var")}

    def unpack(p):
        return p[:X * Z].reshape(X, Z), p[X * Z:2 * X * Z].reshape(Z, X), p[-1]

    def objective(p, record):
        U, V, eta = unpack(p)
        with np.errstate(over="ignore", invalid="ignore"):
            (l_rec, l_reg, l_var), (gz_rec, gz_reg, gz_var), gV, g_eta = map_losses(U, V, eta, x)
            total = w_rec * l_rec + w_reg * l_reg + w_var * l_var
        if not np.isfinite(total):
            raise RuntimeError("training diverged")
        if record:
            for k, val in zip(history, (total, l_rec, l_reg, l_var)):
                history[k].append(val)
        gz = w_rec * gz_rec + w_reg * gz_reg + w_var * gz_var
        grad = np.concatenate([(x.T @ gz).ravel(), (w_rec * gV).ravel(), [w_var * g_eta]])
        return total, grad

    p = np.concatenate([U0.ravel(), U0.T.ravel(), [1.0]])
    if optimizer == "lbfgs":
        res = minimize(objective, p, args=(False,), jac=True, method="L-BFGS-B",
                       callback=lambda xk: objective(xk, True),
                       options={"maxiter": steps, "ftol": 0.0, "gtol": 1e-14, "maxcor": 30})
        p = res.x
        if not np.all(np.isfinite(p)):
            raise RuntimeError("training diverged")
    else:
        vel = np.zeros_like(p)
        for _ in range(steps):
            _, grad = objective(p, True)
            vel = momentum * vel + grad
            p = p - lr * vel
    U, V, eta = unpack(p)
    curves = {k: np.asarray(v) for k, v in history.items()}
    return MapTrainResult(LinearMap(U.copy(), V.copy(), float(eta) * scale), curves, scale)


def pca_map(trajectories: np.ndarray, Z: int) -> LinearMap:
    """Comparator: top-Z principal directions of the (uncentered) second moment."""
    x = np.asarray(trajectories, dtype=float)
    w, v = np.linalg.eigh(x.T @ x / len(x))
    top = v[:, ::-1][:, :Z]
    return LinearMap(top, top.T.copy())
