"""OGD versus vanilla diffusion: sample quality as a function of diffusion steps.

Runs a reduced sweep on a few suite scenes and prints suite-mean sliced
Wasserstein distances to ground truth per (model, T).

    python3 demos/steps_sweep.py [n_scenes]
"""

import sys

from ogdiff import harness as H


def main(n_scenes: int = 3) -> None:
    cfg = H.SweepConfig(T_values=(10, 20, 40, 100), n_samples=500, n_ground_truth=500, n_eval=5)
    rows, _ = H.run_t_sweep(H.suite(n_scenes), cfg)
    summary = H.sweep_summary(rows)
    print(f"{'model':>8} {'T':>4} {'SW':>8}")
    for key, sw in summary.items():
        model, T = key.split("@")
        print(f"{model:>8} {T:>4} {sw:8.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
