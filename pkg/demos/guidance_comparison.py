"""Guided generation on random reference routes with deceleration.

Compares no guidance, NNM and SF on the vanilla model (50 steps) against
ECM and ECMR on the OGD model (10 steps).

    python3 demos/guidance_comparison.py [n_scenes]
"""

import sys

from ogdiff import harness as H


def main(n_scenes: int = 6) -> None:
    rows, timings = H.run_guidance_bench(H.suite(n_scenes), list(H.BENCH_METHODS), H.BenchConfig("U", "D"))
    summary = H.bench_summary(rows)
    print(f"{'method':>11} {'minJFDE':>9} {'meanJFDE':>9} {'meanJRDE':>9}")
    for method, m in sorted(summary.items(), key=lambda kv: kv[1]["minJFDE"]):
        print(f"{method:>11} {m['minJFDE']:9.3f} {m['meanJFDE']:9.3f} {m['meanJRDE']:9.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 6)
