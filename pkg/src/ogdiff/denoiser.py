"""Noise predictors: the exact mixture oracle and a small trainable MLP.

Both expose ``eps(x_t, t)`` on batches ``(N, D)`` and a vector-Jacobian
product ``vjp(x_t, t, cotangent)``. The predicted noise is *colored*: it is
an estimate of the draw from N(0, sigma_p) used in the forward process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .schedule import DiffusionSchedule, PerturbationKernel, perturbed_gmm
from .stats import GaussianMixture


class Denoiser(Protocol):
    def eps(self, x: np.ndarray, t: int) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, t: int, cotangent: np.ndarray) -> np.ndarray: ...


def fd_vjp(denoiser, x: np.ndarray, t: int, cotangent: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference vector-Jacobian product; costs 2 D forward passes."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cot = np.atleast_2d(np.asarray(cotangent, dtype=float))
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        col = (denoiser.eps(xp, t) - denoiser.eps(xm, t)) / (2.0 * h)
        out[:, j] = np.sum(cot * col, axis=1)
    return out


def tweedie(x_t: np.ndarray, eps: np.ndarray, abar: float) -> np.ndarray:
    """Posterior-mean reconstruction of clean data from a noise estimate."""
    return (x_t - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)


class OracleDenoiser:
    """Exact noise predictor for mixture data.

    eps*(x_t, t) = -sqrt(1 - abar_t) * sigma_p @ grad log p_t(x_t), where p_t
    is the mixture pushed through the forward kernel. Per-time mixtures are
    cached, so repeated calls at the same ``t`` only pay for the batch work.
    """

    def __init__(self, data, sched: DiffusionSchedule, kernel: PerturbationKernel):
        self.mixture: GaussianMixture = getattr(data, "mixture", data)
        self.sched = sched
        self.kernel = kernel
        self._levels: dict[int, GaussianMixture] = {}

    @property
    def dim(self) -> int:
        return self.mixture.dim

    def level(self, t: int) -> GaussianMixture:
        t = self.sched.check_time(t)
        mix = self._levels.get(t)
        if mix is None:
            mix = perturbed_gmm(self.mixture, t, self.sched, self.kernel)
            mix.precisions  # factor once per level
            self._levels[t] = mix
        return mix

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return self.level(t).score(x)

    def eps(self, x: np.ndarray, t: int) -> np.ndarray:
        c = np.sqrt(1.0 - self.sched.abar(t))
        return -c * (self.level(t).score(x) @ self.kernel.sigma_p)

    def vjp(self, x: np.ndarray, t: int, cotangent: np.ndarray) -> np.ndarray:
        return self.eps_and_vjp(x, t, cotangent)[1]

    def eps_and_vjp(self, x, t, cotangent):
        # J_eps = -c sigma_p H with H symmetric, so cot^T J = -c (H sigma_p cot)^T
        c = np.sqrt(1.0 - self.sched.abar(t))
        v = np.asarray(cotangent) @ self.kernel.sigma_p
        score, hv = self.level(t).score_hvp(x, v)
        return -c * (score @ self.kernel.sigma_p), -c * hv


def _silu(a):
    s = 1.0 / (1.0 + np.exp(-a))
    return a * s, s * (1.0 + a * (1.0 - s))


PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(eq=False)
class MlpDenoiser:
    """Three-layer SiLU network on [normalized x_t, time embedding, context]."""

    dim: int
    hidden: int = 128
    time_dim: int = 16
    cond_dim: int = 0
    T: int = 100
    params: dict = field(default_factory=dict)
    x_shift: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    out_scale: np.ndarray | None = None
    context: np.ndarray | None = None

    def __post_init__(self):
        D = self.dim
        self.x_shift = np.zeros(D) if self.x_shift is None else np.asarray(self.x_shift, dtype=float)
        self.x_scale = np.ones(D) if self.x_scale is None else np.asarray(self.x_scale, dtype=float)
        self.out_scale = np.ones(D) if self.out_scale is None else np.asarray(self.out_scale, dtype=float)
        if self.cond_dim:
            self.context = np.zeros(self.cond_dim) if self.context is None else np.asarray(self.context, dtype=float)
        if not self.params:
            self.params = {k: np.zeros(s) for k, s in self.shapes().items()}

    @classmethod
    def init(cls, dim: int, seed: int = 0, **kw) -> "MlpDenoiser":
        model = cls(dim, **kw)
        rng = np.random.default_rng(seed)
        for k, shape in model.shapes().items():
            if k.startswith("W"):
                gain = 0.1 if k == "W3" else 1.0
                model.params[k] = gain * rng.standard_normal(shape) / np.sqrt(shape[0])
        return model

    def shapes(self) -> dict:
        n_in = self.dim + self.time_dim + self.cond_dim
        H = self.hidden
        return {"W1": (n_in, H), "b1": (H,), "W2": (H, H), "b2": (H,), "W3": (H, self.dim), "b3": (self.dim,)}

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def with_flat_params(self, flat: np.ndarray) -> "MlpDenoiser":
        params, i = {}, 0
        for k in PARAM_NAMES:
            shape = self.shapes()[k]
            size = int(np.prod(shape))
            params[k] = np.array(flat[i : i + size]).reshape(shape)
            i += size
        return MlpDenoiser(
            self.dim, self.hidden, self.time_dim, self.cond_dim, self.T, params,
            self.x_shift.copy(), self.x_scale.copy(), self.out_scale.copy(),
            None if self.context is None else self.context.copy(),
        )

    def time_embedding(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        half = self.time_dim // 2
        freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half, 1))
        ang = (t / self.T)[:, None] * freqs[None, :] * np.pi * 50.0
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def _forward(self, params, x, t):
        N = x.shape[0]
        emb = self.time_embedding(t)
        if emb.shape[0] == 1:
            emb = np.repeat(emb, N, axis=0)
        parts = [(x - self.x_shift) / self.x_scale, emb]
        if self.cond_dim:
            parts.append(np.broadcast_to(self.context, (N, self.cond_dim)))
        inp = np.concatenate(parts, axis=1)
        a1 = inp @ params["W1"] + params["b1"]
        h1, d1 = _silu(a1)
        a2 = h1 @ params["W2"] + params["b2"]
        h2, d2 = _silu(a2)
        out = (h2 @ params["W3"] + params["b3"]) * self.out_scale
        return out, (inp, h1, d1, h2, d2)

    def _backward(self, params, cache, g_out):
        inp, h1, d1, h2, d2 = cache
        g_o = g_out * self.out_scale
        grads = {"W3": h2.T @ g_o, "b3": g_o.sum(0)}
        g_a2 = (g_o @ params["W3"].T) * d2
        grads["W2"], grads["b2"] = h1.T @ g_a2, g_a2.sum(0)
        g_a1 = (g_a2 @ params["W2"].T) * d1
        grads["W1"], grads["b1"] = inp.T @ g_a1, g_a1.sum(0)
        g_x = (g_a1 @ params["W1"][: self.dim].T) / self.x_scale
        return grads, g_x

    def eps(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out, _ = self._forward(self.params, np.atleast_2d(x), t)
        return out if x.ndim > 1 else out[0]

    def vjp(self, x: np.ndarray, t, cotangent: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        _, cache = self._forward(self.params, np.atleast_2d(x), t)
        _, g_x = self._backward(self.params, cache, np.atleast_2d(cotangent))
        return g_x if x.ndim > 1 else g_x[0]

    def eps_and_vjp(self, x, t, cotangent):
        out, cache = self._forward(self.params, np.atleast_2d(x), t)
        _, g_x = self._backward(self.params, cache, np.atleast_2d(cotangent))
        return out, g_x

    def loss_and_grads(self, x_t: np.ndarray, t, eps: np.ndarray, weight=None):
        """Batch-mean weighted squared error sum_j w_j (eps - eps_theta)_j^2 and its parameter gradients."""
        pred, cache = self._forward(self.params, x_t, t)
        resid = pred - eps
        w = np.ones(self.dim) if weight is None else np.asarray(weight, dtype=float)
        loss = float(np.mean(np.sum(w * resid**2, axis=1)))
        grads, _ = self._backward(self.params, cache, 2.0 * w * resid / x_t.shape[0])
        return loss, grads

    def to_dict(self) -> dict:
        return {
            "arch": {"dim": self.dim, "hidden": self.hidden, "time_dim": self.time_dim,
                     "cond_dim": self.cond_dim, "T": self.T},
            "params": self.flat_params(),
            "x_shift": self.x_shift, "x_scale": self.x_scale, "out_scale": self.out_scale,
            "context": self.context,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpDenoiser":
        base = cls(**d["arch"], x_shift=d["x_shift"], x_scale=d["x_scale"], out_scale=d["out_scale"],
                   context=d.get("context"))
        return base.with_flat_params(np.asarray(d["params"], dtype=float))


@dataclass
class TrainResult:
    model: MlpDenoiser
    losses: np.ndarray


def ddpm_batch(data: GaussianMixture, sched, kernel, batch: int, rng: np.random.Generator):
    """Draw (x_t, t, eps) for the denoising objective, t uniform over 1..T."""
    x0 = data.sample(batch, rng)
    t = rng.integers(1, sched.T + 1, size=batch)
    eps = kernel.color(rng.standard_normal((batch, data.dim)))
    ab = sched.alpha_bars[t - 1][:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, t, eps


def train_ddpm(model: MlpDenoiser, data, sched: DiffusionSchedule, kernel: PerturbationKernel,
               steps: int, batch: int, lr: float, seed: int, momentum: float = 0.9) -> TrainResult:
    """Momentum SGD on the denoising loss; returns a new model and the loss curve.

    Residuals are whitened per dimension by the kernel variance, so the loss
    has the same scale under any perturbation kernel (identity: plain MSE).
    """
    if steps < 0 or batch < 1 or lr < 0:
        raise ValueError("invalid training hyperparameters")
    mixture = getattr(data, "mixture", data)
    rng = np.random.default_rng(seed)
    work = model.with_flat_params(model.flat_params())
    velocity = {k: np.zeros_like(v) for k, v in work.params.items()}
    losses = np.empty(steps)
    weight = 1.0 / np.diag(kernel.sigma_p)
    for step in range(steps):
        x_t, t, eps = ddpm_batch(mixture, sched, kernel, batch, rng)
        loss, grads = work.loss_and_grads(x_t, t, eps, weight)
        if not np.isfinite(loss):
            raise RuntimeError("training diverged")
        for k in PARAM_NAMES:
            velocity[k] = momentum * velocity[k] + grads[k]
            work.params[k] = work.params[k] - lr * velocity[k]
        losses[step] = loss
    return TrainResult(work, losses)


def data_normalizer(data, kernel: PerturbationKernel) -> dict:
    """Input shift/scale and output scale suited to ``data`` under ``kernel``."""
    mixture = getattr(data, "mixture", data)
    from .stats import gmm_moments

    stats = gmm_moments(mixture)
    return {
        "x_shift": stats.mean,
        "x_scale": np.sqrt(np.diag(stats.cov) + np.diag(kernel.sigma_p)),
        "out_scale": kernel.sigma_diag,
    }
