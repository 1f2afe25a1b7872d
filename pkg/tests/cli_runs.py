"""A small chain of CLI invocations covering every subcommand."""

from pathlib import Path

from ogdiff.cli import main


def run_chain(root: Path) -> dict:
    """Run every subcommand once under ``root``; return {name: out_dir}."""
    root = Path(root)
    scene = root / "scene" / "scene.txt"
    ckpt = root / "train" / "checkpoint.txt"
    samples = root / "sample" / "samples.txt"
    steps = {
        "scene": ["gen-scene", "--n-agents", "2", "--coupling", "0.5", "--seed", "3"],
        "train": ["train", "--scene", str(scene), "--steps", "30", "--batch", "32", "--hidden", "16", "--T", "20"],
        "sample": ["sample", "--scene", str(scene), "--n", "40", "--start-T", "40", "--seed", "1"],
        "sample-ckpt": ["sample", "--scene", str(scene), "--model", str(ckpt), "--T", "20", "--start-T", "20",
                        "--n", "10", "--method", "ddpm", "--stride", "1"],
        "guide": ["guide", "--scene", str(scene), "--n", "16", "--method", "ECMR", "--seed", "2"],
        "eval": ["eval", "--scene", str(scene), "--samples", str(samples), "--n-ground-truth", "100",
                 "--n-eval", "3", "--route-set", "GT", "--speed", "N"],
        "sweep": ["bench-t-sweep", "--n-scenes", "2", "--T-values", "20,40", "--vanilla-T", "100",
                  "--n-samples", "60", "--n-ground-truth", "60", "--n-eval", "2"],
        "bench": ["bench-guidance", "--n-scenes", "2", "--n", "8", "--methods", "none@OGD,ECM,NNM",
                  "--zeta", "ECM=0.1"],
        "grid": ["grid-zeta", "--n-scenes", "2", "--n", "8", "--method", "ECM", "--grid", "0.05,0.5"],
        "prior": ["validate-prior", "--n-mixtures", "1", "--max-dim", "2", "--T-values", "10",
                  "--n-candidates", "5", "--n-draws", "500"],
    }
    dirs = {}
    for name, argv in steps.items():
        out = root / name
        code = main(argv + ["--out-dir", str(out), "--timings", str(root / f"{name}.timings.json")])
        if code != 0:
            raise AssertionError(f"{name} exited with {code}")
        dirs[name] = out
    return dirs


def snapshot(out_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())}
