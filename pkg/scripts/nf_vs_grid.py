"""Neural-field versus grid-based reconstruction with the same weights.

    python3 scripts/nf_vs_grid.py --alpha 1e-3 --beta 1e-4 --gamma 1e-3
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from _common import simulate_preset
from dynct.grid_recon import GridWeights, alternate
from dynct.metrics import psnr
from dynct.nf_recon import train
from dynct.projector import SpacetimeProjector


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="desk", choices=("desk", "paper"))
    ap.add_argument("--phantom", default="two-square")
    ap.add_argument("--alpha", type=float, default=1e-3)
    ap.add_argument("--beta", type=float, default=1e-4)
    ap.add_argument("--gamma", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pre, grid, ta, sim = simulate_preset(args.preset, args.phantom, args.seed)
    w = GridWeights(args.alpha, args.beta, args.gamma)

    t0 = time.perf_counter()
    K = SpacetimeProjector(sim.sinogram.geometry, grid, sim.sinogram.angles)
    u0 = np.zeros((ta.n_frames, grid.n_pixels))
    res = alternate(u0, np.zeros(u0.shape + (2,)), K, sim.sinogram.data, w, grid, ta, pre.grid.rounds,
                    pre.grid.inner_iters, u_ratio=pre.grid.u_ratio, v_ratio=pre.grid.v_ratio,
                    callback=lambda k, u, v: print(f"  grid round {k}: PSNR {psnr(u, sim.ground_truth.values):.2f} dB",
                                                   flush=True))
    print(f"grid: {psnr(res.u, sim.ground_truth.values):.2f} dB in {time.perf_counter() - t0:.0f} s")

    t0 = time.perf_counter()
    cfg = replace(pre.nf, alpha=w.alpha, beta=w.beta, gamma=w.gamma)
    _, _, hist = train(cfg, sim.sinogram, grid, sim.ground_truth)
    print(f"neural field: best {hist.best_psnr():.2f} dB in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
