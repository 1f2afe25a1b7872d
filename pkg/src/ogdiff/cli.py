"""Command-line entry point.

Every subcommand writes its outputs plus ``manifest.txt`` (configuration,
seeds, schedule and code version) into ``--out-dir``. Wall-clock timings
are the only non-deterministic quantity and go to a separate JSON file,
written only when ``--timings PATH`` is given, so output directories of
repeated runs are bit-identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from .denoiser import MlpDenoiser, OracleDenoiser, data_normalizer, train_ddpm
from .evaluate import controllable_metrics, sliced_wasserstein
from .guidance import METHODS, GuidanceConfig, guided_generate
from .persistence import load, manifest_hash, save, save_json
from .prior import exponent_adjudication, validate_optimality
from .sampler import OgdPrior, SamplerConfig, StandardPrior, generate
from .scenario import JointGmm, SceneSpec, make_scene, marginal_sets
from .schedule import PerturbationKernel, make_vp_schedule
from .stats import gmm_moments, random_mixture


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _write_manifest(out: Path, kind: str, args: argparse.Namespace, seeds, extra: dict | None = None) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "timings", "out_dir")}
    manifest = H.default_manifest(kind, config, seeds)
    if extra:
        manifest.update(extra)
    manifest["hash"] = manifest_hash(manifest)
    save(out / "manifest.txt", manifest)


def _write_rows(out: Path, name: str, rows: list) -> None:
    """Metric rows as a typed artifact plus flat key=value lines."""
    save(out / f"{name}.txt", rows, tag="metrics")
    lines = [" ".join(f"{k}={row[k]!r}" for k in sorted(row)) for row in rows]
    (out / f"{name}.kv").write_text("\n".join(lines) + "\n")


def _write_series(out: Path, name: str, pairs) -> None:
    """Two-column plot-ready series."""
    (out / f"{name}.dat").write_text("".join(f"{x!r} {y!r}\n" for x, y in pairs))


def _timings(args, data) -> None:
    if getattr(args, "timings", None):
        save_json(args.timings, data)


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# model construction from a scene file


def _kernel(scene: JointGmm, prior: str, sched, start_T: int):
    if prior == "standard":
        kernel = PerturbationKernel.identity(scene.dim)
        return kernel, StandardPrior(kernel)
    case = H.SceneCase(0, scene.seed, scene, marginal_sets(scene, H.REFERENCE_L))
    p = H.ogd_prior(case, sched, start_T)
    return p.kernel, OgdPrior(p)


def _denoiser(args, scene, sched, kernel):
    if args.model == "oracle":
        return OracleDenoiser(scene, sched, kernel)
    model = load(args.model)
    if not isinstance(model, MlpDenoiser):
        raise ValueError(f"{args.model} is not a checkpoint")
    if model.T != sched.T or model.dim != scene.dim:
        raise ValueError("checkpoint does not match the scene or schedule")
    return model


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_scene(args) -> None:
    out = _out(args)
    spec = SceneSpec(args.n_agents, args.horizon, args.dt, args.modes, args.coupling)
    save(out / "scene.txt", make_scene(spec, args.seed), binary=False)
    _write_manifest(out, "gen-scene", args, [args.seed])


def cmd_train(args) -> None:
    out = _out(args)
    scene = load(args.scene)
    sched = make_vp_schedule(args.T)
    kernel, _ = _kernel(scene, args.prior, sched, args.T)
    model = MlpDenoiser.init(scene.dim, args.seed, hidden=args.hidden, T=args.T, **data_normalizer(scene, kernel))
    res = train_ddpm(model, scene, sched, kernel, args.steps, args.batch, args.lr, args.seed)
    save(out / "checkpoint.txt", res.model)
    _write_series(out, "loss", enumerate(res.losses.tolist()))
    _write_manifest(out, "train", args, [args.seed], {"schedule_full": sched.to_dict()})


def cmd_sample(args) -> None:
    out = _out(args)
    scene = load(args.scene)
    sched = make_vp_schedule(args.T)
    kernel, prior = _kernel(scene, args.prior, sched, args.start_T)
    cfg = SamplerConfig(args.start_T, args.stride, args.method, args.n, args.seed)
    res = generate(_denoiser(args, scene, sched, kernel), prior, cfg, sched, kernel)
    save(out / "samples.txt", res.samples)
    _write_manifest(out, "sample", args, [args.seed], {"sampler": cfg.to_dict(), "steps": res.n_steps})
    _timings(args, {"step_times": res.step_times})


def cmd_guide(args) -> None:
    out = _out(args)
    scene = load(args.scene)
    sched = make_vp_schedule(args.T)
    kernel, prior = _kernel(scene, args.prior, sched, args.start_T)
    refs = marginal_sets(scene, H.REFERENCE_L)
    case = H.SceneCase(0, scene.seed, scene, refs)
    task = H.case_task(case, args.route_set, args.speed)
    zeta = H.DEFAULT_ZETA[args.method] if args.zeta is None else args.zeta
    cfg = GuidanceConfig(args.method, zeta, args.start_T, args.stride, args.noise_mode, not args.no_clip, args.init)
    res = guided_generate(_denoiser(args, scene, sched, kernel), prior, sched, kernel, cfg, task, args.n,
                          args.seed, references=refs)
    save(out / "samples.txt", res.samples)
    row = {"method": args.method, "zeta": zeta, "seed": args.seed, "network_steps": res.network_steps,
           "guidance_steps": res.guidance_steps, **controllable_metrics(res.samples, task).to_dict()}
    _write_rows(out, "metrics", [row])
    _write_manifest(out, "guide", args, [args.seed], {"guidance": cfg.to_dict(), "steps": res.network_steps})
    _timings(args, {"step_times": res.step_times, "per_step": res.per_step_time})


def _cases(args):
    return H.suite(args.n_scenes, args.base_seed)


def cmd_bench_t_sweep(args) -> None:
    out = _out(args)
    cfg = H.SweepConfig(tuple(args.T_values), args.vanilla_T, args.n_samples, args.n_ground_truth,
                        args.n_eval, args.stride)
    cases = _cases(args)
    rows, timings = H.run_t_sweep(cases, cfg)
    _write_rows(out, "t_sweep", rows)
    summary = H.sweep_summary(rows)
    series: dict = {}
    for key, value in summary.items():
        model, T = key.split("@")
        series.setdefault(model, []).append((int(T), value))
    for model, pairs in sorted(series.items()):
        _write_series(out, f"sw_{model}", sorted(pairs))
    _write_manifest(out, "bench-t-sweep", args, [c.seed for c in cases], {"summary": summary})
    _timings(args, timings)


def _bench_cfg(args) -> H.BenchConfig:
    zeta = dict(H.DEFAULT_ZETA)
    for item in args.zeta or []:
        name, value = item.split("=")
        zeta[name] = float(value)
    return H.BenchConfig(args.route_set, args.speed, args.n, tuple(sorted(zeta.items())), args.noise_mode)


def cmd_bench_guidance(args) -> None:
    out = _out(args)
    cfg = _bench_cfg(args)
    cases = _cases(args)
    rows, timings = H.run_guidance_bench(cases, args.methods.split(",") if args.methods else [], cfg)
    _write_rows(out, "guidance", rows)
    _write_manifest(out, "bench-guidance", args, [c.seed for c in cases], {"summary": H.bench_summary(rows)})
    if args.latency_steps:
        timings = {"runs": timings, "latency": H.measure_latency(cases, min_steps=args.latency_steps, cfg=cfg)}
    _timings(args, timings)


def cmd_grid_zeta(args) -> None:
    out = _out(args)
    grid = args.grid if args.grid else H.DESK_GRIDS[args.method]
    cases = _cases(args)
    best, curve = H.run_step_size_grid(cases, args.method, grid, _bench_cfg(args))
    _write_series(out, f"grid_{args.method}", curve)
    _write_manifest(out, "grid-zeta", args, [c.seed for c in cases], {"best_zeta": best})


def cmd_validate_prior(args) -> None:
    out = _out(args)
    rng = np.random.default_rng(args.seed)
    reports = []
    for i in range(args.n_mixtures):
        dim = int(rng.integers(1, args.max_dim + 1))
        mix = random_mixture(dim, int(rng.integers(1, 4)), rng)
        for T in args.T_values:
            rep = validate_optimality(mix, make_vp_schedule(max(args.T_values)), T, args.n_candidates,
                                      seed=args.seed + i, n_draws=args.n_draws)
            reports.append({"mixture": i, "dim": dim, **rep.to_dict()})
    single = random_mixture(3, 1, rng)
    abar = make_vp_schedule(100).abar(args.T_values[0])
    adjudication = {"alpha_bar_T": abar, "kl": exponent_adjudication(gmm_moments(single), abar)}
    save(out / "report.txt", {"validation": reports, "exponent_adjudication": adjudication}, tag="report")
    _write_manifest(out, "validate-prior", args, [args.seed],
                    {"all_attain_optimum": all(r["attains_optimum"] for r in reports)})


def cmd_eval(args) -> None:
    out = _out(args)
    scene = load(args.scene)
    samples = load(args.samples)
    rng = np.random.default_rng(args.seed)
    refs = marginal_sets(scene, H.REFERENCE_L)
    case = H.SceneCase(0, scene.seed, scene, refs)
    gt = scene.sample(args.n_ground_truth, rng)
    row = {"sw": sliced_wasserstein(samples, gt, seed=args.seed), "n_samples": int(len(samples))}
    row.update(H.prediction_summary(samples, case, scene.sample(args.n_eval, rng)))
    if args.route_set:
        row.update(controllable_metrics(samples, H.case_task(case, args.route_set, args.speed)).to_dict())
    _write_rows(out, "metrics", [row])
    _write_manifest(out, "eval", args, [args.seed])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ogdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--timings", help="optional JSON file for wall-clock timings")
        p.set_defaults(func=func)
        return p

    def model_flags(p):
        p.add_argument("--scene", required=True)
        p.add_argument("--model", default="oracle", help="'oracle' or a checkpoint path")
        p.add_argument("--prior", choices=("standard", "ogd"), default="ogd")
        p.add_argument("--T", type=int, default=H.T_TRAIN)
        p.add_argument("--start-T", type=int, default=H.T_TRAIN)
        p.add_argument("--stride", type=int, default=H.DDIM_STRIDE)
        p.add_argument("--n", type=int, default=H.N_GUIDED)

    def suite_flags(p):
        p.add_argument("--n-scenes", type=int, default=H.SUITE_SIZE)
        p.add_argument("--base-seed", type=int, default=0)

    def task_flags(p, required=True):
        p.add_argument("--route-set", choices=("GT", "U"), default="U" if required else None)
        p.add_argument("--speed", choices=("N", "A", "D"), default="D")

    def bench_flags(p):
        suite_flags(p)
        task_flags(p)
        p.add_argument("--n", type=int, default=H.N_GUIDED)
        p.add_argument("--noise-mode", choices=("deterministic", "stochastic"), default="deterministic")
        p.add_argument("--zeta", action="append", help="METHOD=VALUE override, repeatable")

    p = add("gen-scene", cmd_gen_scene, "generate a synthetic scene")
    p.add_argument("--n-agents", type=int, default=2)
    p.add_argument("--horizon", type=int, default=12)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--modes", type=int, default=3)
    p.add_argument("--coupling", type=float, default=0.0)

    p = add("train", cmd_train, "train an MLP denoiser on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--prior", choices=("standard", "ogd"), default="ogd")
    p.add_argument("--T", type=int, default=H.T_TRAIN)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=128)

    p = add("sample", cmd_sample, "unguided sampling")
    model_flags(p)
    p.add_argument("--method", choices=("ddim", "ddpm"), default="ddim")

    p = add("guide", cmd_guide, "guided sampling on a route task")
    model_flags(p)
    task_flags(p)
    p.add_argument("--method", choices=METHODS, default="ECMR")
    p.add_argument("--zeta", type=float, default=None)
    p.add_argument("--noise-mode", choices=("deterministic", "stochastic"), default="deterministic")
    p.add_argument("--init", choices=("ogd", "literal"), default="ogd")
    p.add_argument("--no-clip", action="store_true")

    p = add("bench-t-sweep", cmd_bench_t_sweep, "quality versus number of diffusion steps")
    suite_flags(p)
    p.add_argument("--T-values", type=_int_list, default=list(range(10, 101, 10)))
    p.add_argument("--vanilla-T", type=int, default=H.T_VANILLA)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--n-ground-truth", type=int, default=1000)
    p.add_argument("--n-eval", type=int, default=20)
    p.add_argument("--stride", type=int, default=1)

    p = add("bench-guidance", cmd_bench_guidance, "guidance method comparison")
    bench_flags(p)
    p.add_argument("--methods", default=",".join(H.BENCH_METHODS))
    p.add_argument("--latency-steps", type=int, default=0, help="also measure per-step latency (timings file)")

    p = add("grid-zeta", cmd_grid_zeta, "step-size grid search")
    bench_flags(p)
    p.add_argument("--method", choices=("NNM", "SF", "ECM", "ECMR"), required=True)
    p.add_argument("--grid", type=_float_list, default=None)

    p = add("validate-prior", cmd_validate_prior, "check optimality of the closed-form prior")
    p.add_argument("--n-mixtures", type=int, default=10)
    p.add_argument("--max-dim", type=int, default=6)
    p.add_argument("--T-values", type=_int_list, default=[10, 40, 100])
    p.add_argument("--n-candidates", type=int, default=200)
    p.add_argument("--n-draws", type=int, default=10_000)

    p = add("eval", cmd_eval, "evaluate a sample file against its scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--n-ground-truth", type=int, default=1000)
    p.add_argument("--n-eval", type=int, default=20)
    task_flags(p, required=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValueError, RuntimeError, OSError, KeyError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
