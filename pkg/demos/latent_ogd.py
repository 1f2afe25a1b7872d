"""Diffusion in a learned linear latent space versus trajectory space.

Trains a per-agent linear map (Z=4 on 24-dim trajectories), pushes the scene
mixture forward into the latent space, and samples with OGD and with vanilla
diffusion in both spaces. Quality is the sliced Wasserstein distance of the
(decoded) samples to ground-truth draws.

    python3 demos/latent_ogd.py [scene_index]
"""

import sys

import numpy as np

from ogdiff import harness as H
from ogdiff.denoiser import OracleDenoiser
from ogdiff.evaluate import sliced_wasserstein
from ogdiff.latent import block_map, decode, encode, pca_map, pushforward_gmm, train_linear_map
from ogdiff.prior import optimal_prior
from ogdiff.sampler import OgdPrior, SamplerConfig, StandardPrior, generate
from ogdiff.schedule import PerturbationKernel, make_vp_schedule
from ogdiff.stats import gmm_moments


def quality(mixture, decode_fn, gt, prior_kind, start_T, stride):
    sched = make_vp_schedule(max(start_T, 100))
    if prior_kind == "ogd":
        p = optimal_prior(gmm_moments(mixture), sched.abar(start_T), T=start_T)
        kernel, prior = p.kernel, OgdPrior(p)
    else:
        kernel = PerturbationKernel.identity(mixture.dim)
        prior = StandardPrior(kernel)
    res = generate(OracleDenoiser(mixture, sched, kernel), prior, SamplerConfig(start_T, stride, n_samples=1000, seed=1),
                   sched, kernel)
    return sliced_wasserstein(decode_fn(res.samples), gt, seed=0)


def main(index: int = 4) -> None:
    case = H.make_case(index)
    scene, n = case.scene, case.n_agents
    rng = case.rng(21)
    per_agent = scene.sample(1000, rng).reshape(-1, scene.spec.agent_dim)
    trained = train_linear_map(per_agent, 4)
    lm = block_map(trained.map, n)
    pca = block_map(pca_map(per_agent, 4), n)
    gt = scene.sample(1000, rng)

    z = encode(trained.map, per_agent)
    zp = encode(pca_map(per_agent, 4), per_agent)
    print(f"scene {index}: {n} agent(s)")
    print("latent stds  LM :", np.round(z.std(axis=0), 2))
    print("latent stds  PCA:", np.round(zp.std(axis=0), 2))
    print(f"{'space':>10} {'prior':>8} {'T':>4} {'stride':>6} {'SW':>8}")
    spaces = {"trajectory": (scene.mixture, lambda x: x),
              "latent-LM": (pushforward_gmm(lm, scene), lambda v: decode(lm, v)),
              "latent-PCA": (pushforward_gmm(pca, scene), lambda v: decode(pca, v))}
    for name, (mix, dec) in spaces.items():
        for prior_kind, T, stride in (("ogd", 40, 10), ("ogd", 40, 1), ("standard", 500, 10)):
            sw = quality(mix, dec, gt, prior_kind, T, stride)
            print(f"{name:>10} {prior_kind:>8} {T:>4} {stride:>6} {sw:8.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 4)
