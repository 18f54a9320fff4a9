"""PSNR-vs-step curves for several optical-flow weights (gamma).

    python3 scripts/gamma_sweep.py --gammas 0,1e-3,1e-2,1 --out sweep.csv

Prints the best PSNR and the temporal standard deviation of each run and
writes the curves as CSV (one column per gamma).
"""

import argparse
import csv
import time
from dataclasses import replace

from _common import simulate_preset
from dynct.metrics import temporal_std
from dynct.nf_recon import render_field, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="desk", choices=("desk", "paper"))
    ap.add_argument("--phantom", default="two-square")
    ap.add_argument("--gammas", default="0,1e-2,1")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="psnr_vs_step.csv")
    args = ap.parse_args()

    pre, grid, ta, sim = simulate_preset(args.preset, args.phantom, args.seed)
    gammas = [float(g) for g in args.gammas.split(",")]
    curves = {}
    for g in gammas:
        cfg = replace(pre.nf, gamma=g, epochs=args.epochs or pre.nf.epochs)
        t0 = time.perf_counter()
        u, _, hist = train(cfg, sim.sinogram, grid, sim.ground_truth)
        curves[g] = hist
        std = temporal_std(render_field(u, grid, ta))
        print(f"gamma={g:g}: best PSNR {hist.best_psnr():.2f} dB, temporal std {std:.4f}, "
              f"{time.perf_counter() - t0:.0f} s", flush=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + [f"gamma={g:g}" for g in gammas])
        for i, step in enumerate(curves[gammas[0]].step):
            w.writerow([step] + [curves[g].psnr[i] for g in gammas])


if __name__ == "__main__":
    main()
