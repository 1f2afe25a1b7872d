"""Sample clustering and metrics for joint prediction and controllable generation.

Distances are in position units (metres for the synthetic scenes).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from .scenario import positions

MISS_THRESHOLD = 2.0
AGENT_RADIUS = 0.5
MERGE_THRESHOLD = 2.5


def sliced_wasserstein(a: np.ndarray, b: np.ndarray, n_projections: int = 100, seed=0) -> float:
    """Average 1-D Wasserstein-1 distance over random unit projections."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("no samples")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a @ dirs.T, b @ dirs.T
    if len(a) == len(b):
        return float(np.mean(np.abs(np.sort(pa, axis=0) - np.sort(pb, axis=0))))
    return float(np.mean([wasserstein_distance(pa[:, j], pb[:, j]) for j in range(n_projections)]))


# ---------------------------------------------------------------------------
# clustering


@dataclass
class ClusterResult:
    representatives: np.ndarray  # (G, D) member means
    probabilities: np.ndarray  # (G,)
    member_counts: np.ndarray  # (G,)
    centers: list = field(default_factory=list)  # reference index combination per group
    members: list = field(default_factory=list)  # sample indices per group


def _endpoints(references) -> list[np.ndarray]:
    return [ref.samples.reshape(len(ref.samples), -1, 2)[:, -1] for ref in references]


def cluster_samples(samples: np.ndarray, references, merge_threshold: float = MERGE_THRESHOLD) -> ClusterResult:
    """Group joint samples by their nearest reference combination, then merge close groups.

    Groups are visited largest first (ties by center key). Whenever two
    groups' center combinations deviate by less than ``merge_threshold`` at
    every agent's endpoint, the earlier (larger) group absorbs the later one
    and the scan restarts, until no pair qualifies.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("no samples")
    if merge_threshold <= 0:
        raise ValueError("merge threshold must be positive")
    n = len(references)
    ends = _endpoints(references)
    sample_ends = positions(samples, n)[:, :, -1]  # (N, n, 2)
    keys = np.stack([
        np.argmin(np.linalg.norm(sample_ends[:, i, None, :] - ends[i][None], axis=-1), axis=1)
        for i in range(n)
    ], axis=1)

    groups: dict[tuple, list[int]] = {}
    for s, key in enumerate(map(tuple, keys.tolist())):
        groups.setdefault(key, []).append(s)
    order = [[k, v] for k, v in groups.items()]

    def deviation(ka, kb):
        return max(np.linalg.norm(ends[i][ka[i]] - ends[i][kb[i]]) for i in range(n))

    merged = True
    while merged:
        merged = False
        order.sort(key=lambda g: (-len(g[1]), g[0]))
        for a in range(len(order)):
            for b in range(a + 1, len(order)):
                if deviation(order[a][0], order[b][0]) < merge_threshold:
                    order[a][1] = order[a][1] + order[b][1]
                    del order[b]
                    merged = True
                    break
            if merged:
                break

    counts = np.array([len(m) for _, m in order])
    reps = np.stack([samples[sorted(m)].mean(axis=0) for _, m in order])
    return ClusterResult(reps, counts / counts.sum(), counts, [k for k, _ in order], [sorted(m) for _, m in order])


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    avgMinADE: float | None = None
    avgMinFDE: float | None = None
    actorMR: float | None = None
    actorCR: float | None = None
    avgBrierMinFDE: float | None = None
    avgBrierMinFDE_mult: float | None = None
    minJFDE: float | None = None
    meanJFDE: float | None = None
    minJFDE_end: float | None = None
    meanJFDE_end: float | None = None
    minJRDE: float | None = None
    meanJRDE: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def joint_prediction_metrics(samples: np.ndarray, probs: np.ndarray, gt: np.ndarray, n_agents: int,
                             miss_threshold: float = MISS_THRESHOLD, agent_radius: float = AGENT_RADIUS) -> MetricsReport:
    """Prediction metrics of K joint samples against one ground-truth joint trajectory."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    probs = np.asarray(probs, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if len(samples) < 1:
        raise ValueError("no samples")
    if samples.shape[1] != gt.size or probs.shape != (len(samples),):
        raise ValueError("dimension mismatch")
    pred = positions(samples, n_agents)  # (K, n, H, 2)
    disp = np.linalg.norm(pred - positions(gt, n_agents)[None], axis=-1)  # (K, n, H)
    fde = disp[:, :, -1].mean(axis=1)
    ade = disp.mean(axis=(1, 2))
    best = int(np.argmin(fde))
    min_fde = float(fde[best])

    p = pred[best]  # (n, H, 2)
    gaps = np.linalg.norm(p[:, None] - p[None], axis=-1)  # (n, n, H)
    gaps[np.arange(n_agents), np.arange(n_agents)] = np.inf
    collided = np.any(gaps < 2.0 * agent_radius, axis=(1, 2))

    miss = 1.0 - probs[best]
    return MetricsReport(
        avgMinADE=float(ade.min()),
        avgMinFDE=min_fde,
        actorMR=float(np.mean(disp[best, :, -1] > miss_threshold)),
        actorCR=float(np.mean(collided)),
        avgBrierMinFDE=min_fde + miss**2,
        avgBrierMinFDE_mult=min_fde * (1.0 + miss**2),
    )


def point_polyline_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point ``(..., 2)`` to a polyline ``(P, 2)`` by segment projection."""
    points = np.asarray(points, dtype=float)
    a, b = polyline[:-1], polyline[1:]
    if len(a) == 0:
        return np.linalg.norm(points - polyline[0], axis=-1)
    ab = b - a
    len2 = np.sum(ab * ab, axis=1)
    rel = points[..., None, :] - a  # (..., S, 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(len2 > 0, np.sum(rel * ab, axis=-1) / len2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    proj = a + u[..., None] * ab
    return np.min(np.linalg.norm(points[..., None, :] - proj, axis=-1), axis=-1)


def controllable_metrics(samples: np.ndarray, task) -> MetricsReport:
    """JFDE at tau_d (and at the horizon end) and JRDE to the route polylines."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("no samples")
    n = task.n_agents
    pos = positions(samples, n)  # (N, n, H, 2)
    goals = task.goals
    jfde = np.linalg.norm(pos[:, :, task.tau_d - 1] - goals, axis=-1).mean(axis=1)
    jfde_end = np.linalg.norm(pos[:, :, -1] - goals, axis=-1).mean(axis=1)
    dev = np.stack([point_polyline_distance(pos[:, i], task.routes[i]) for i in range(n)], axis=1)
    jrde = dev.mean(axis=(1, 2))
    return MetricsReport(
        minJFDE=float(jfde.min()), meanJFDE=float(jfde.mean()),
        minJFDE_end=float(jfde_end.min()), meanJFDE_end=float(jfde_end.mean()),
        minJRDE=float(jrde.min()), meanJRDE=float(jrde.mean()),
    )
