"""Experiment orchestration: T-sweeps, guidance benchmarks, step-size grids, latency.

Every experiment runs over a fixed suite of scenes. Scene ``i`` has
``n_agents = (1, 2, 3)[i % 3]`` and coupling ``(0, 0.5, 0.9)[(i // 3) % 3]``
and is seeded with ``base_seed + i``. Step sizes are tuned on a disjoint
suite (``TUNING_BASE_SEED``) so the reported suite never sees the grid.

Worker processes are controlled by the ``OGD_WORKERS`` environment variable;
rows are assembled in a fixed order, so results do not depend on it.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .denoiser import OracleDenoiser
from .evaluate import cluster_samples, controllable_metrics, joint_prediction_metrics, sliced_wasserstein
from .guidance import GuidanceConfig, guided_generate, make_task
from .persistence import manifest_hash
from .prior import OptimalPrior, optimal_prior_blockdiag
from .sampler import OgdPrior, SamplerConfig, StandardPrior, generate
from .scenario import JointGmm, SceneSpec, estimate_marginal_stats, make_scene, marginal_sets
from .schedule import DiffusionSchedule, PerturbationKernel, make_vp_schedule

CODE_VERSION = "0.1.0"
SUITE_SIZE = 20
TUNING_BASE_SEED = 1000
N_AGENTS = (1, 2, 3)
COUPLINGS = (0.0, 0.5, 0.9)
REFERENCE_L = 6
T_TRAIN = 100
T_VANILLA = 500
DDIM_STRIDE = 10
N_GUIDED = 128

# coarse grids for learned latent-scale costs; raw trajectory costs need the finer desk grids
WIDE_GRIDS = {
    "NNM": (1, 5, 7, 10, 15, 30, 60, 100),
    "ECM": (1, 5, 7, 10, 15, 30, 60, 100),
    "ECMR": (1, 5, 7, 10, 15, 30, 60, 100),
    "SF": (10, 500, 1000, 2000, 3000, 5000),
}
DESK_GRIDS = {
    "NNM": (0.001, 0.003, 0.01, 0.03, 0.1, 1, 10, 100),
    "ECM": (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0),
    "ECMR": (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0),
    "SF": (0.1, 1, 10, 100, 500, 1000, 2000, 5000),
}
# lowest suite-mean minJFDE on the tuning suite, route set U + deceleration
DEFAULT_ZETA = {"NNM": 0.003, "SF": 500.0, "ECM": 0.05, "ECMR": 0.5, "none": 0.0}

# which model and chain length each guided row uses
BENCH_METHODS = {
    "none@VD500": ("none", "vd"),
    "NNM": ("NNM", "vd"),
    "SF": ("SF", "vd"),
    "none@OGD": ("none", "ogd"),
    "ECM": ("ECM", "ogd"),
    "ECMR": ("ECMR", "ogd"),
}
_KIND_CODE = {"GT": 1, "U": 2}
_SPEED_CODE = {"N": 1, "A": 2, "D": 3}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("OGD_WORKERS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items: list) -> list:
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# suite and models


def suite_spec(i: int) -> SceneSpec:
    return SceneSpec(N_AGENTS[i % 3], interaction_coupling=COUPLINGS[(i // 3) % 3])


@dataclass(frozen=True, eq=False)
class SceneCase:
    index: int
    seed: int
    scene: JointGmm
    references: tuple

    @property
    def n_agents(self) -> int:
        return self.scene.spec.n_agents

    def agent_stats(self):
        return [estimate_marginal_stats(r) for r in self.references]

    def rng(self, *tags: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *tags])


def make_case(i: int, base_seed: int = 0) -> SceneCase:
    scene = make_scene(suite_spec(i), base_seed + i)
    return SceneCase(i, base_seed + i, scene, marginal_sets(scene, REFERENCE_L))


def suite(n_scenes: int = SUITE_SIZE, base_seed: int = 0) -> list[SceneCase]:
    return [make_case(i, base_seed) for i in range(n_scenes)]


@dataclass(frozen=True, eq=False)
class Model:
    name: str
    denoiser: object
    prior: object
    sched: DiffusionSchedule
    kernel: PerturbationKernel


def vd_model(scene: JointGmm, T: int = T_VANILLA) -> Model:
    """Vanilla diffusion: identity kernel, standard prior."""
    sched = make_vp_schedule(T)
    kernel = PerturbationKernel.identity(scene.dim)
    return Model(f"VD{T}", OracleDenoiser(scene, sched, kernel), StandardPrior(kernel), sched, kernel)


def ogd_prior(case: SceneCase, sched: DiffusionSchedule, start_T: int) -> OptimalPrior:
    return optimal_prior_blockdiag(case.agent_stats(), sched.abar(start_T), T=start_T)


def ogd_model(case: SceneCase, start_T: int = T_TRAIN, T: int = T_TRAIN) -> Model:
    """Optimal Gaussian diffusion with the block-diagonal kernel from marginal-predictor statistics."""
    sched = make_vp_schedule(T)
    prior = ogd_prior(case, sched, start_T)
    kernel = prior.kernel
    return Model("OGD", OracleDenoiser(case.scene, sched, kernel), OgdPrior(prior), sched, kernel)


# ---------------------------------------------------------------------------
# T sweep


@dataclass(frozen=True)
class SweepConfig:
    T_values: tuple = tuple(range(10, 101, 10))
    vanilla_T: int = T_VANILLA
    n_samples: int = 1000
    n_ground_truth: int = 1000
    n_eval: int = 20
    stride: int = 1  # T counts network steps in the sweep; guided runs use DDIM_STRIDE


def prediction_summary(samples: np.ndarray, case: SceneCase, gts: np.ndarray) -> dict:
    """avgMin metrics over all samples (uniform scores) and over the top-6 clusters."""
    n = case.n_agents
    k_all = len(samples)
    clusters = cluster_samples(samples, case.references)
    top = np.argsort(-clusters.probabilities, kind="stable")[:6]
    reps, probs = clusters.representatives[top], clusters.probabilities[top] / clusters.probabilities[top].sum()
    out: dict[str, list] = {}
    for gt in gts:
        full = joint_prediction_metrics(samples, np.full(k_all, 1.0 / k_all), gt, n)
        six = joint_prediction_metrics(reps, probs, gt, n)
        for key, val in (("avgMinFDE_all", full.avgMinFDE), ("avgMinADE_all", full.avgMinADE),
                         ("avgMinFDE_6", six.avgMinFDE), ("avgMinADE_6", six.avgMinADE),
                         ("actorMR_6", six.actorMR), ("actorCR_6", six.actorCR),
                         ("avgBrierMinFDE_6", six.avgBrierMinFDE), ("avgBrierMinFDE_mult_6", six.avgBrierMinFDE_mult)):
            out.setdefault(key, []).append(val)
    summary = {k: float(np.mean(v)) for k, v in out.items()}
    summary["n_clusters"] = int(len(clusters.probabilities))
    return summary


def _sweep_case(args) -> tuple[list, dict]:
    case, cfg = args
    gt_rng = case.rng(7)
    gt = case.scene.sample(cfg.n_ground_truth, gt_rng)
    gts = case.scene.sample(cfg.n_eval, gt_rng)
    rows, timings = [], {}

    def record(prior_kind, T, model, res):
        row = {"scene": case.index, "seed": case.seed, "n_agents": case.n_agents,
               "coupling": case.scene.spec.interaction_coupling, "prior": prior_kind, "model": model,
               "T": T, "steps": res.n_steps,
               "sw": sliced_wasserstein(res.samples, gt, seed=case.seed)}
        row.update(prediction_summary(res.samples[: N_GUIDED], case, gts))
        rows.append(row)
        timings[f"{case.index}/{model}/{T}"] = float(np.sum(res.step_times))

    ogd = ogd_model(case)
    vd100 = vd_model(case.scene, T_TRAIN)
    for T in cfg.T_values:
        sc = SamplerConfig(T, cfg.stride, n_samples=cfg.n_samples, seed=case.seed)
        prior = OgdPrior(ogd_prior(case, ogd.sched, T))
        record("ogd", T, "OGD", generate(ogd.denoiser, prior, sc, ogd.sched, ogd.kernel))
        record("standard", T, f"VD{T_TRAIN}", generate(vd100.denoiser, vd100.prior, sc, vd100.sched, vd100.kernel))
    if cfg.vanilla_T:
        vd = vd_model(case.scene, cfg.vanilla_T)
        sc = SamplerConfig(cfg.vanilla_T, cfg.stride, n_samples=cfg.n_samples, seed=case.seed)
        record("standard", cfg.vanilla_T, f"VD{cfg.vanilla_T}", generate(vd.denoiser, vd.prior, sc, vd.sched, vd.kernel))
    return rows, timings


def run_t_sweep(cases: list[SceneCase], cfg: SweepConfig = SweepConfig()) -> tuple[list, dict]:
    """Rows per (scene, model, T); returns (rows, timings)."""
    results = parallel_map(_sweep_case, [(c, cfg) for c in cases])
    h = manifest_hash(asdict(cfg))
    rows, timings = [], {}
    for r, t in results:
        for row in r:
            row["config_hash"] = h
        rows.extend(r)
        timings.update(t)
    return rows, timings


def sweep_summary(rows: list) -> dict:
    """Suite-mean sliced Wasserstein per (model, T)."""
    acc: dict = {}
    for row in rows:
        acc.setdefault((row["model"], row["T"]), []).append(row["sw"])
    return {f"{m}@{T}": float(np.mean(v)) for (m, T), v in sorted(acc.items())}


# ---------------------------------------------------------------------------
# guidance benchmark


@dataclass(frozen=True)
class BenchConfig:
    route_set: str = "U"
    speed: str = "D"
    n_samples: int = N_GUIDED
    zeta: tuple = tuple(sorted(DEFAULT_ZETA.items()))
    noise_mode: str = "deterministic"
    vanilla_T: int = T_VANILLA
    ogd_T: int = T_TRAIN
    stride: int = DDIM_STRIDE
    init: str = "ogd"

    def zeta_for(self, method: str) -> float:
        return dict(self.zeta)[method]


def guidance_config(method: str, model_kind: str, cfg: BenchConfig, zeta: float | None = None) -> GuidanceConfig:
    start = cfg.vanilla_T if model_kind == "vd" else cfg.ogd_T
    return GuidanceConfig(method, cfg.zeta_for(method) if zeta is None else zeta, start_T=start,
                          stride=cfg.stride, noise_mode=cfg.noise_mode, init=cfg.init)


def case_task(case: SceneCase, route_set: str, speed: str):
    return make_task(case.scene, case.references, route_set, speed,
                     case.rng(11, _KIND_CODE[route_set], _SPEED_CODE[speed]))


def _bench_case(args) -> tuple[list, dict]:
    case, cfg, labels, zetas = args
    task = case_task(case, cfg.route_set, cfg.speed)
    models = {}
    rows, timings = [], {}
    for label in labels:
        method, kind = BENCH_METHODS.get(label, (label, "ogd" if label in ("ECM", "ECMR") else "vd"))
        if kind not in models:
            models[kind] = vd_model(case.scene, cfg.vanilla_T) if kind == "vd" else ogd_model(case, cfg.ogd_T, cfg.ogd_T)
        model = models[kind]
        for zeta in zetas.get(label, [None]):
            gcfg = guidance_config(method, kind, cfg, zeta)
            res = guided_generate(model.denoiser, model.prior, model.sched, model.kernel, gcfg, task,
                                  cfg.n_samples, case.rng(13), references=case.references)
            row = {"scene": case.index, "seed": case.seed, "n_agents": case.n_agents,
                   "coupling": case.scene.spec.interaction_coupling, "method": label, "model": model.name,
                   "zeta": gcfg.zeta, "network_steps": res.network_steps, "guidance_steps": res.guidance_steps,
                   "route_set": cfg.route_set, "speed": cfg.speed, "noise_mode": cfg.noise_mode}
            row.update(controllable_metrics(res.samples, task).to_dict())
            rows.append(row)
            timings[f"{case.index}/{label}/{gcfg.zeta}"] = {"total": float(np.sum(res.step_times)),
                                                             "per_step": res.per_step_time}
    return rows, timings


def run_guidance_bench(cases: list[SceneCase], methods, cfg: BenchConfig = BenchConfig(),
                       zeta_grid: dict | None = None) -> tuple[list, dict]:
    """Table-4-shaped rows per (scene, method[, zeta]); returns (rows, timings)."""
    labels = list(methods)
    if not labels:
        return [], {}
    zetas = {k: list(v) for k, v in (zeta_grid or {}).items()}
    results = parallel_map(_bench_case, [(c, cfg, labels, zetas) for c in cases])
    h = manifest_hash(asdict(cfg))
    rows, timings = [], {}
    for r, t in results:
        for row in r:
            row["config_hash"] = h
        rows.extend(r)
        timings.update(t)
    return rows, timings


def bench_summary(rows: list, keys=("minJFDE", "meanJFDE", "minJRDE", "meanJRDE")) -> dict:
    """Suite means per method (and zeta when several were run)."""
    acc: dict = {}
    for row in rows:
        acc.setdefault((row["method"], row["zeta"]), []).append(row)
    return {
        (m if len({z for (mm, z) in acc if mm == m}) == 1 else f"{m}@{z}"): {k: float(np.mean([r[k] for r in rs])) for k in keys}
        for (m, z), rs in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1]))
    }


def run_step_size_grid(cases: list[SceneCase], method: str, grid, cfg: BenchConfig = BenchConfig()) -> tuple[float, list]:
    """Lowest suite-mean minJFDE over ``grid``; returns (best zeta, [(zeta, minJFDE), ...])."""
    grid = [float(z) for z in grid]
    if not grid:
        raise ValueError("step-size grid is empty")
    rows, _ = run_guidance_bench(cases, [method], cfg, zeta_grid={method: grid})
    curve = []
    for z in grid:
        vals = [r["minJFDE"] for r in rows if r["zeta"] == z]
        curve.append((z, float(np.mean(vals))))
    best = min(curve, key=lambda p: (p[1], p[0]))[0]
    return best, curve


# ---------------------------------------------------------------------------
# latency


def measure_latency(cases: list[SceneCase], methods=("NNM", "SF", "ECM", "ECMR"), min_steps: int = 500,
                    cfg: BenchConfig = BenchConfig()) -> dict:
    """Per-network-step wall clock of each method on the same OGD model.

    Methods are interleaved scene by scene so that machine drift affects all
    of them alike; each keeps running until it has at least ``min_steps``.
    """
    totals = {m: 0.0 for m in methods}
    steps = {m: 0 for m in methods}
    models = [(c, ogd_model(c, cfg.ogd_T, cfg.ogd_T), case_task(c, cfg.route_set, cfg.speed)) for c in cases]
    rounds = 0
    while min(steps.values()) < min_steps:
        for case, model, task in models:
            for m in methods:
                gcfg = GuidanceConfig(m, cfg.zeta_for(m), start_T=cfg.ogd_T, stride=cfg.stride)
                start = time.perf_counter()
                res = guided_generate(model.denoiser, model.prior, model.sched, model.kernel, gcfg, task,
                                      cfg.n_samples, case.rng(17, rounds), references=case.references)
                totals[m] += time.perf_counter() - start
                steps[m] += res.network_steps
        rounds += 1
    return {m: {"per_step": totals[m] / steps[m], "steps": steps[m], "total": totals[m]} for m in methods}


def default_manifest(kind: str, config: dict, seeds) -> dict:
    return {"kind": kind, "config": config, "seeds": list(seeds), "code_version": CODE_VERSION,
            "schedule": {"beta0": 1e-4, "betaT": 0.05, "T_train": T_TRAIN, "T_vanilla": T_VANILLA}}
