"""Sweep neural-field settings on the desk two-square instance.

Each trial trains with the desk preset except for the overridden fields and
prints the best PSNR. Example:

    python3 scripts/tune_desk.py --sigma-x 1,2 --lr 3e-3,1e-2 --gamma 0,1e-2
"""

import argparse
import itertools
import time
from dataclasses import replace

from _common import simulate_preset
from dynct.nf_recon import train


def _floats(s):
    return [float(x) for x in s.split(",")]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigma-x", type=_floats, default=[2.0])
    ap.add_argument("--sigma-t", type=_floats, default=[0.5])
    ap.add_argument("--lr", type=_floats, default=[1e-2])
    ap.add_argument("--gamma", type=_floats, default=[0.0, 1e-2])
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--epochs", type=int, default=2000)
    args = ap.parse_args()

    pre, grid, _, sim = simulate_preset("desk")
    for sx, st, lr, g in itertools.product(args.sigma_x, args.sigma_t, args.lr, args.gamma):
        arch = replace(pre.nf.u_arch, sigma_x=sx, sigma_t=st, width=args.width)
        cfg = replace(pre.nf, lr=lr, gamma=g, epochs=args.epochs, u_arch=arch, v_arch=replace(arch, d_out=2))
        t0 = time.perf_counter()
        _, _, hist = train(cfg, sim.sinogram, grid, sim.ground_truth)
        print(f"sigma_x={sx:g} sigma_t={st:g} lr={lr:g} gamma={g:g}: best {hist.best_psnr():.2f} dB "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
