"""Synthetic multi-agent scenes with Gaussian-mixture ground truth.

Agents approach a four-way intersection along right-hand lanes. Each agent
has a handful of maneuver prototypes; a joint mixture component is one
maneuver per agent, with the combination down-weighted whenever two agents'
prototypes pass within ``CONFLICT_DISTANCE`` of each other at the same step.
Trajectories are flattened agent-major as ``[x1, y1, ..., xH, yH]`` per agent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .stats import DataStats, GaussianMixture

MANEUVERS = ("straight", "left", "right", "decelerate")
APPROACH_HEADINGS = (np.pi / 2, 0.0, np.pi, -np.pi / 2)
LANE_OFFSET = 1.75
CONFLICT_DISTANCE = 3.0
TURN_DURATION = 3.0

# per-component noise model (metres, metres per second)
SPEED_STD = 0.4
LATERAL_DRIFT_STD = 0.6
LATERAL_OFFSET_STD = 0.15
JITTER_STD = 0.05


@dataclass(frozen=True)
class SceneSpec:
    n_agents: int
    horizon: int = 12
    dt: float = 0.5
    modes_per_agent: int = 3
    interaction_coupling: float = 0.0

    def __post_init__(self):
        if self.n_agents < 1 or self.horizon < 2:
            raise ValueError("need n_agents >= 1 and horizon >= 2")
        if not 1 <= self.modes_per_agent <= len(MANEUVERS):
            raise ValueError(f"modes_per_agent must be in 1..{len(MANEUVERS)}")
        if not 0.0 <= self.interaction_coupling <= 1.0:
            raise ValueError("interaction_coupling must lie in [0, 1]")

    @property
    def agent_dim(self) -> int:
        return 2 * self.horizon

    @property
    def dim(self) -> int:
        return self.n_agents * self.agent_dim


@dataclass(frozen=True, eq=False)
class JointGmm:
    spec: SceneSpec
    seed: int
    mixture: GaussianMixture
    labels: np.ndarray  # (M, n_agents) maneuver index per agent

    @property
    def dim(self) -> int:
        return self.mixture.dim

    def agent_slice(self, agent: int) -> slice:
        X = self.spec.agent_dim
        return slice(agent * X, (agent + 1) * X)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mixture.sample(n, rng)


@dataclass(frozen=True, eq=False)
class MarginalSamples:
    """One agent's marginal predictions: trajectories, scores, per-mode covariances."""

    samples: np.ndarray  # (L, X)
    probs: np.ndarray  # (L,)
    covs: np.ndarray  # (L, X, X)

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("need at least one marginal sample")
        if np.any(self.probs < 0) or abs(np.sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("scores must be nonnegative and sum to 1")


def positions(x: np.ndarray, n_agents: int) -> np.ndarray:
    """Reshape flat joint trajectories ``(..., D)`` to ``(..., n, H, 2)``."""
    x = np.asarray(x)
    return x.reshape(x.shape[:-1] + (n_agents, -1, 2))


def _rollout(maneuver: str, start, heading: float, speed: float, t_turn: float, horizon: int, dt: float):
    substeps = 20
    h = dt / substeps
    total = horizon * dt
    pos = np.array(start, dtype=float)
    psi = heading
    out_pos, out_psi = [], []
    for k in range(1, horizon * substeps + 1):
        t = (k - 0.5) * h
        v = speed * max(0.3, 1.0 - 0.7 * t / total) if maneuver == "decelerate" else speed
        rate = 0.0
        if maneuver in ("left", "right") and t_turn <= t < t_turn + TURN_DURATION:
            rate = (np.pi / 2) / TURN_DURATION * (1.0 if maneuver == "left" else -1.0)
        psi_mid = psi + 0.5 * rate * h
        pos = pos + v * h * np.array([np.cos(psi_mid), np.sin(psi_mid)])
        psi = psi + rate * h
        if k % substeps == 0:
            out_pos.append(pos.copy())
            out_psi.append(psi)
    return np.array(out_pos), np.array(out_psi)


def _factor_columns(headings: np.ndarray, dt: float) -> np.ndarray:
    """Noise loadings (X, 3): speed, growing lateral drift, constant lateral offset."""
    H = headings.size
    tangent = np.stack([np.cos(headings), np.sin(headings)], axis=1)
    normal = np.stack([-np.sin(headings), np.cos(headings)], axis=1)
    times = dt * np.arange(1, H + 1)
    speed = SPEED_STD * times[:, None] * tangent
    drift = LATERAL_DRIFT_STD * (np.arange(1, H + 1) / H)[:, None] ** 2 * normal
    offset = LATERAL_OFFSET_STD * normal
    return np.stack([speed.ravel(), drift.ravel(), offset.ravel()], axis=1)


def make_scene(spec: SceneSpec, seed: int) -> JointGmm:
    """Build the ground-truth joint mixture for ``spec``; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    n, H, X = spec.n_agents, spec.horizon, spec.agent_dim
    modes = MANEUVERS[: spec.modes_per_agent]

    protos, loadings, mode_probs = [], [], []
    for i in range(n):
        heading = APPROACH_HEADINGS[i % 4]
        speed = rng.uniform(4.0, 8.0)
        t_arrive = rng.uniform(1.5, 3.5)
        u = np.array([np.cos(heading), np.sin(heading)])
        right = np.array([u[1], -u[0]])
        start = -speed * t_arrive * u + LANE_OFFSET * right
        t_turn = max(0.0, t_arrive - 1.0)
        agent_protos, agent_loads = [], []
        for m in modes:
            pos, psi = _rollout(m, start, heading, speed, t_turn, H, spec.dt)
            agent_protos.append(pos)
            agent_loads.append(_factor_columns(psi, spec.dt))
        protos.append(agent_protos)
        loadings.append(agent_loads)
        mode_probs.append(rng.dirichlet(3.0 * np.ones(len(modes))))

    rho = 0.5 * spec.interaction_coupling
    f_cov = np.eye(3 * n)
    speed_idx = 3 * np.arange(n)
    f_cov[np.ix_(speed_idx, speed_idx)] = rho + (1.0 - rho) * np.eye(n)

    combos = list(itertools.product(range(len(modes)), repeat=n))
    weights, means, covs = [], [], []
    for combo in combos:
        w = np.prod([mode_probs[i][m] for i, m in enumerate(combo)])
        for i, j in itertools.combinations(range(n), 2):
            gap = np.linalg.norm(protos[i][combo[i]] - protos[j][combo[j]], axis=1).min()
            if gap < CONFLICT_DISTANCE:
                w *= 1.0 - spec.interaction_coupling
        B = np.zeros((n * X, 3 * n))
        for i, m in enumerate(combo):
            B[i * X : (i + 1) * X, 3 * i : 3 * i + 3] = loadings[i][m]
        weights.append(w)
        means.append(np.concatenate([protos[i][m].ravel() for i, m in enumerate(combo)]))
        covs.append(B @ f_cov @ B.T + JITTER_STD**2 * np.eye(n * X))
    weights = np.array(weights)
    weights /= weights.sum()
    mixture = GaussianMixture(weights, np.array(means), np.array(covs))
    return JointGmm(spec, seed, mixture, np.array(combos, dtype=int).reshape(len(combos), n))


def marginalize(joint: JointGmm, agent: int) -> GaussianMixture:
    """Exact marginal mixture of one agent: same weights, sliced parameters."""
    if not 0 <= agent < joint.spec.n_agents:
        raise ValueError("agent index out of range")
    sl = joint.agent_slice(agent)
    mix = joint.mixture
    return GaussianMixture(mix.weights, mix.means[:, sl], mix.covs[:, sl, sl])


def marginal_predictor(joint: JointGmm, agent: int, L: int) -> MarginalSamples:
    """Idealised marginal forecaster: the ``L`` heaviest distinct marginal modes.

    Joint components that share this agent's maneuver have identical marginal
    parameters and are merged by summing their weights first. When fewer
    than ``L`` distinct modes exist, all of them are returned.
    """
    if L < 1:
        raise ValueError("L must be positive")
    marg = marginalize(joint, agent)
    keys = joint.labels[:, agent]
    uniq = np.unique(keys)
    merged_w = np.array([marg.weights[keys == k].sum() for k in uniq])
    first = np.array([np.flatnonzero(keys == k)[0] for k in uniq])
    order = np.argsort(-merged_w, kind="stable")[:L]
    idx = first[order]
    probs = merged_w[order] / merged_w[order].sum()
    return MarginalSamples(marg.means[idx].copy(), probs, marg.covs[idx].copy())


def marginal_sets(joint: JointGmm, L: int = 6) -> tuple[MarginalSamples, ...]:
    return tuple(marginal_predictor(joint, i, L) for i in range(joint.spec.n_agents))


def estimate_marginal_stats(entry: MarginalSamples, jitter: float = 1e-8) -> DataStats:
    p = entry.probs
    mean = p @ entry.samples
    dev = entry.samples - mean
    cov = np.einsum("l,li,lj->ij", p, dev, dev) + np.einsum("l,lij->ij", p, entry.covs)
    cov = 0.5 * (cov + cov.T) + jitter * np.eye(mean.size)
    return DataStats(mean, cov)
