"""Reverse diffusion: DDPM ancestral steps and deterministic DDIM steps.

Chains start at ``start_T`` from either the standard prior N(0, sigma_p)
(vanilla diffusion) or the optimal Gaussian prior, and always use the
schedule's true alpha-bar values, so an OGD chain started at ``start_T`` is
simply the tail of a longer chain.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import tweedie
from .prior import OptimalPrior
from .schedule import DiffusionSchedule, PerturbationKernel


@dataclass(frozen=True)
class SamplerConfig:
    start_T: int
    ddim_stride: int = 10
    method: str = "ddim"
    n_samples: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler method {self.method!r}")
        if self.ddim_stride < 1 or self.start_T < 1 or self.n_samples < 0:
            raise ValueError("invalid sampler configuration")
        if self.method == "ddpm" and self.ddim_stride != 1:
            raise ValueError("ddpm requires stride 1")
        if self.start_T % self.ddim_stride:
            raise ValueError("stride must divide start_T so the chain lands on t=0")

    def times(self) -> list[int]:
        """Visited times, from ``start_T`` down to 0 inclusive."""
        return list(range(self.start_T, -1, -self.ddim_stride))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class StandardPrior:
    kernel: PerturbationKernel

    @property
    def kind(self) -> str:
        return "standard"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.kernel.color(rng.standard_normal((n, self.kernel.dim)))


@dataclass(frozen=True, eq=False)
class OgdPrior:
    prior: OptimalPrior

    @property
    def kind(self) -> str:
        return "ogd"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.prior.gaussian.sample(n, rng)


def sample_prior(prior, n: int, seed) -> np.ndarray:
    return prior.sample(n, np.random.default_rng(seed))


def ddpm_step(x_t, t: int, denoiser, sched: DiffusionSchedule, kernel: PerturbationKernel, noise=None,
              eps=None) -> np.ndarray:
    """One ancestral step t -> t-1; ``noise`` is a whitened draw, ignored at t=1."""
    if sched.check_time(t) < 1:
        raise ValueError("invalid step index")
    if eps is None:
        eps = denoiser.eps(x_t, t)
    beta, ab = sched.beta(t), sched.abar(t)
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(1.0 - beta)
    if t == 1 or noise is None:
        return mean
    return mean + np.sqrt(beta) * kernel.color(noise)


def ddim_step(x_t, t: int, t_prev: int, denoiser, sched: DiffusionSchedule, kernel=None, eps=None) -> np.ndarray:
    """Deterministic (eta = 0) jump from ``t`` to ``t_prev``."""
    sched.check_time(t_prev)
    if t_prev > t:
        raise ValueError("invalid step index")
    if t_prev == t:
        return np.array(x_t, dtype=float)
    if eps is None:
        eps = denoiser.eps(x_t, t)
    ab_prev = sched.abar(t_prev)
    x0 = tweedie(x_t, eps, sched.abar(t))
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps


@dataclass
class GenerateResult:
    samples: np.ndarray
    step_times: list = field(default_factory=list)
    times: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.step_times)


def generate(denoiser, prior, cfg: SamplerConfig, sched: DiffusionSchedule, kernel: PerturbationKernel,
             x_start: np.ndarray | None = None) -> GenerateResult:
    """Run the reverse chain; returns samples and per-step wall-clock seconds."""
    sched.check_time(cfg.start_T)
    times = cfg.times()
    rng = np.random.default_rng(cfg.seed)
    x = prior.sample(cfg.n_samples, rng) if x_start is None else np.array(x_start, dtype=float)
    if cfg.n_samples == 0 or len(x) == 0:
        return GenerateResult(np.zeros((0, kernel.dim)), [], times)
    step_times = []
    for t, t_prev in zip(times[:-1], times[1:]):
        start = time.perf_counter()
        if cfg.method == "ddpm":
            noise = rng.standard_normal(x.shape) if t_prev > 0 else None
            x = ddpm_step(x, t, denoiser, sched, kernel, noise)
        else:
            x = ddim_step(x, t, t_prev, denoiser, sched, kernel)
        step_times.append(time.perf_counter() - start)
    return GenerateResult(x, step_times, times)
