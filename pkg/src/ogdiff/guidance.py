"""Goal-point guidance and four guided samplers.

NNM and SF guide a DDIM chain (one network call and one guidance step per
DDIM step). ECM and ECMR instead iterate on the clean sample: inject noise
at t_k, project back with Tweedie's formula, optionally swap in the cheapest
combination of reference trajectories, and take one gradient step on the
goal cost.

Time indices ``tau_d`` and ``tau_g`` are 1-based positions along the horizon.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import tweedie
from .sampler import ddim_step
from .scenario import JointGmm, MarginalSamples, positions
from .schedule import DiffusionSchedule, PerturbationKernel

METHODS = ("none", "NNM", "SF", "ECM", "ECMR")
SPEED_OFFSET = 2  # steps between tau_d and tau_g for the A and D settings
CANDIDATE_CAP = 4096


@dataclass(frozen=True, eq=False)
class RouteTask:
    route_set_kind: str
    speed_setting: str
    routes: np.ndarray  # (n, H, 2)
    tau_d: int
    tau_g: int

    def __post_init__(self):
        H = self.routes.shape[1]
        if self.route_set_kind not in ("GT", "U") or self.speed_setting not in ("N", "A", "D"):
            raise ValueError("unknown route set or speed setting")
        if not (1 <= self.tau_d <= H and 1 <= self.tau_g <= H):
            raise ValueError("tau out of range")
        ok = {"N": self.tau_d == self.tau_g == H, "A": self.tau_d < self.tau_g, "D": self.tau_g < self.tau_d}
        if not ok[self.speed_setting]:
            raise ValueError(f"tau_d/tau_g inconsistent with speed setting {self.speed_setting}")

    @property
    def n_agents(self) -> int:
        return self.routes.shape[0]

    @property
    def horizon(self) -> int:
        return self.routes.shape[1]

    @property
    def goals(self) -> np.ndarray:
        return self.routes[:, self.tau_g - 1]


def speed_taus(setting: str, horizon: int) -> tuple[int, int]:
    """(tau_d, tau_g) for a speed setting."""
    return {
        "N": (horizon, horizon),
        "A": (horizon - SPEED_OFFSET, horizon),
        "D": (horizon, horizon - SPEED_OFFSET),
    }[setting]


def make_task(joint: JointGmm, references, kind: str, speed: str, rng: np.random.Generator) -> RouteTask:
    """GT routes are one fresh joint draw; U routes pick a reference per agent uniformly."""
    n, H = joint.spec.n_agents, joint.spec.horizon
    if kind == "GT":
        routes = positions(joint.sample(1, rng)[0], n)
    elif kind == "U":
        routes = np.stack([
            ref.samples[rng.integers(len(ref.samples))].reshape(H, 2) for ref in references
        ])
    else:
        raise ValueError(f"unknown route set {kind!r}")
    return RouteTask(kind, speed, routes, *speed_taus(speed, H))


def goal_cost(x0: np.ndarray, task: RouteTask) -> np.ndarray:
    pos = positions(x0, task.n_agents)[..., task.tau_d - 1, :]
    return np.sum((pos - task.goals) ** 2, axis=(-2, -1)) / task.n_agents


def goal_cost_grad(x0: np.ndarray, task: RouteTask) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    g = positions(grad, task.n_agents)  # view into grad
    pos = positions(x0, task.n_agents)[..., task.tau_d - 1, :]
    g[..., task.tau_d - 1, :] = 2.0 / task.n_agents * (pos - task.goals)
    return grad


def agent_costs(x0: np.ndarray, task: RouteTask) -> np.ndarray:
    """Per-agent share of the goal cost, shape ``(..., n)``."""
    pos = positions(x0, task.n_agents)[..., task.tau_d - 1, :]
    return np.sum((pos - task.goals) ** 2, axis=-1) / task.n_agents


@dataclass(frozen=True)
class GuidanceConfig:
    method: str = "ECMR"
    zeta: float = 1.0
    start_T: int = 100
    stride: int = 10
    noise_mode: str = "deterministic"
    clip_enabled: bool = True
    init: str = "ogd"  # ECM/ECMR start: "ogd" prior sample or "literal" N(0, sigma_p)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown guidance method {self.method!r}")
        if self.noise_mode not in ("deterministic", "stochastic") or self.init not in ("ogd", "literal"):
            raise ValueError("invalid noise mode or init")
        if self.stride < 1 or self.start_T < self.stride or self.start_T % self.stride:
            raise ValueError("stride must divide start_T")

    @property
    def K(self) -> int:
        return self.start_T // self.stride

    @property
    def t_schedule(self) -> list[int]:
        """t_k for k = 0..K-1, i.e. stride * (k + 1)."""
        return [self.stride * (k + 1) for k in range(self.K)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["K"], d["t_schedule"] = self.K, self.t_schedule
        return d


def _clip(delta: np.ndarray, bound: np.ndarray, enabled: bool) -> np.ndarray:
    return np.clip(delta, -bound, bound) if enabled else delta


def nnm_guided_step(x_t, t: int, t_prev: int, denoiser, sched: DiffusionSchedule, kernel: PerturbationKernel,
                    cfg: GuidanceConfig, task: RouteTask, eps=None) -> np.ndarray:
    m = ddim_step(x_t, t, t_prev, denoiser, sched, kernel, eps=eps)
    bound = np.sqrt(1.0 - sched.abar(t) / sched.abar(t_prev)) * kernel.sigma_diag
    return m - _clip(cfg.zeta * goal_cost_grad(m, task), bound, cfg.clip_enabled)


def sf_gradient(x_t, t: int, denoiser, sched: DiffusionSchedule, task: RouteTask, vjp=None):
    """Returns (eps, x0_hat, d J(x0_hat) / d x_t) through the Tweedie map."""
    ab = sched.abar(t)
    eps = denoiser.eps(x_t, t)
    x0 = tweedie(x_t, eps, ab)
    g0 = goal_cost_grad(x0, task)
    jt = denoiser.vjp(x_t, t, g0) if vjp is None else vjp(denoiser, x_t, t, g0)
    return eps, x0, (g0 - np.sqrt(1.0 - ab) * jt) / np.sqrt(ab)


def sf_guided_step(x_t, t: int, t_prev: int, denoiser, sched: DiffusionSchedule, kernel: PerturbationKernel,
                   cfg: GuidanceConfig, task: RouteTask, vjp=None) -> np.ndarray:
    # the noise estimate moves *with* the gradient so that x0_hat descends J
    eps, _, g = sf_gradient(x_t, t, denoiser, sched, task, vjp)
    shift = _clip(cfg.zeta * np.sqrt(1.0 - sched.abar(t)) * g, kernel.sigma_diag, cfg.clip_enabled)
    return ddim_step(x_t, t, t_prev, denoiser, sched, kernel, eps=eps + shift)


def ecmr_reference_swap(x0_hat: np.ndarray, references, task: RouteTask, cost_fn=None,
                        cap: int = CANDIDATE_CAP) -> np.ndarray:
    """Cheapest member of the product set R_i ∪ {x0_hat_i} per sample.

    With the default (separable) goal cost this is an independent argmin per
    agent. A custom ``cost_fn`` on joint vectors triggers exhaustive search,
    bounded by ``cap`` combinations. Ties keep the current estimate.
    """
    x0_hat = np.asarray(x0_hat, dtype=float)
    single = x0_hat.ndim == 1
    x = np.atleast_2d(x0_hat)
    n = task.n_agents
    X = x.shape[1] // n
    # options[i]: (N, L_i + 1, X) with the current estimate first
    options = [
        np.concatenate([x[:, None, i * X:(i + 1) * X],
                        np.broadcast_to(ref.samples[None], (len(x),) + ref.samples.shape)], axis=1)
        for i, ref in enumerate(references)
    ]
    if cost_fn is None:
        out = x.copy()
        for i, opt in enumerate(options):
            pos = opt.reshape(opt.shape[:2] + (-1, 2))[:, :, task.tau_d - 1]
            cost = np.sum((pos - task.goals[i]) ** 2, axis=-1) / n
            pick = np.argmin(cost, axis=1)
            out[:, i * X:(i + 1) * X] = opt[np.arange(len(x)), pick]
    else:
        out = exhaustive_swap(x, options, cost_fn, cap)
    return out[0] if single else out


def exhaustive_swap(x: np.ndarray, options, cost_fn, cap: int = CANDIDATE_CAP) -> np.ndarray:
    sizes = [opt.shape[1] for opt in options]
    if int(np.prod(sizes)) > cap:
        raise ValueError("candidate explosion")
    out = x.copy()
    for s in range(len(x)):
        best, best_cost = None, np.inf
        for combo in itertools.product(*[range(k) for k in sizes]):
            w = np.concatenate([opt[s, c] for opt, c in zip(options, combo)])
            c = float(cost_fn(w))
            if c < best_cost:
                best, best_cost = w, c
        out[s] = best
    return out


@dataclass
class GuidedResult:
    samples: np.ndarray
    step_times: list = field(default_factory=list)
    network_steps: int = 0
    guidance_steps: int = 0
    costs: list = field(default_factory=list)  # mean goal cost after each iteration (ECM/ECMR)

    @property
    def per_step_time(self) -> float:
        return float(np.sum(self.step_times) / max(self.network_steps, 1))


def ecm_iterate(x_init: np.ndarray, denoiser, sched: DiffusionSchedule, kernel: PerturbationKernel,
                cfg: GuidanceConfig, task: RouteTask, rng: np.random.Generator, references=None) -> GuidedResult:
    """Estimated-clean-manifold iterations k = K-1, ..., 0 at times t_k.

    With ``cfg.init == "ogd"``, ``x_init`` is a prior draw at t_{K-1} and is
    used as the first noisy iterate directly. With ``"literal"`` it is the
    initial clean iterate x0(K). Deterministic noise reuses the previous
    network prediction; the first injection in literal mode is random.
    """
    swap = cfg.method == "ECMR"
    if swap and references is None:
        raise ValueError("ECMR needs reference trajectories")
    ts = cfg.t_schedule
    x0 = np.array(x_init, dtype=float)
    eps_prev = None
    res = GuidedResult(x0)
    for k in range(cfg.K - 1, -1, -1):
        start = time.perf_counter()
        t = ts[k]
        ab = sched.abar(t)
        if k == cfg.K - 1 and cfg.init == "ogd":
            x_t = x0
        else:
            if cfg.noise_mode == "deterministic" and eps_prev is not None:
                noise = eps_prev
            else:
                noise = kernel.color(rng.standard_normal(x0.shape))
            x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
        eps_prev = denoiser.eps(x_t, t)
        x_hat = tweedie(x_t, eps_prev, ab)
        if swap:
            x_hat = ecmr_reference_swap(x_hat, references, task)
        x0 = x_hat - cfg.zeta * goal_cost_grad(x_hat, task)
        res.step_times.append(time.perf_counter() - start)
        res.costs.append(float(np.mean(goal_cost(x0, task))))
    res.samples = x0
    res.network_steps = res.guidance_steps = cfg.K
    return res


def guided_generate(denoiser, prior, sched: DiffusionSchedule, kernel: PerturbationKernel, cfg: GuidanceConfig,
                    task: RouteTask, n_samples: int, seed, references=None, vjp=None) -> GuidedResult:
    """Draw ``n_samples`` guided joint trajectories; ``method="none"`` is plain DDIM."""
    rng = np.random.default_rng(seed)
    if cfg.method in ("ECM", "ECMR"):
        if cfg.init == "ogd":
            x_init = prior.sample(n_samples, rng)
        else:
            x_init = kernel.color(rng.standard_normal((n_samples, kernel.dim)))
        return ecm_iterate(x_init, denoiser, sched, kernel, cfg, task, rng, references)

    x = prior.sample(n_samples, rng)
    times = list(range(cfg.start_T, -1, -cfg.stride))
    res = GuidedResult(x)
    for t, t_prev in zip(times[:-1], times[1:]):
        start = time.perf_counter()
        if cfg.method == "NNM":
            x = nnm_guided_step(x, t, t_prev, denoiser, sched, kernel, cfg, task)
        elif cfg.method == "SF":
            x = sf_guided_step(x, t, t_prev, denoiser, sched, kernel, cfg, task, vjp)
        else:
            x = ddim_step(x, t, t_prev, denoiser, sched, kernel)
        res.step_times.append(time.perf_counter() - start)
    res.samples = x
    res.network_steps = len(times) - 1
    res.guidance_steps = 0 if cfg.method == "none" else res.network_steps
    return res
