"""Command-line entry point: ``dynct <subcommand> ...``.

Every subcommand writes ``manifest.ini`` into its output directory. The
manifest stores the resolved configuration, so ``dynct replay`` can rerun
the command and check that it reproduces the recorded output digests.
"""

from __future__ import annotations

import os

# Bit-identical replays need a fixed reduction order in BLAS.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .core import GEOMETRY_PRESETS, CasoratiImage, ImageGrid, SamplingSchedule, TimeAxis
from .field import write_checkpoint
from .grid_recon import GridWeights, alternate
from .metrics import frame_psnr, psnr, temporal_std
from .nf_recon import render_field, render_velocity, train
from .phantoms import PHANTOMS, simulate
from .presets import get_preset
from .projector import SpacetimeProjector

log = logging.getLogger("dynct")

# Keys that do not influence results and are left out of manifests.
_VOLATILE = {"out", "config", "command", "func", "verbose", "check"}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _window(text: str):
    vals = _floats(text)
    if len(vals) != 2 or not vals[1] > vals[0]:
        raise argparse.ArgumentTypeError("window must be 'lo,hi' with hi > lo")
    return tuple(vals)


def _time_axis(sino) -> TimeAxis:
    return TimeAxis(sino.n_frames, float(sino.times[-1]) if sino.n_frames > 1 else 1.0)


def _load_pair(args):
    sino = io.read_sinogram(args.sinogram)
    gt = io.read_volume(args.ground_truth) if getattr(args, "ground_truth", None) else None
    if gt is not None:
        if gt.time_axis.n_frames != sino.n_frames:
            raise UsageError(f"ground truth has {gt.time_axis.n_frames} frames, sinogram {sino.n_frames}")
        grid = gt.grid
    else:
        grid = ImageGrid.square(args.grid_n) if args.grid_n else None
    if grid is None:
        raise UsageError("give --ground-truth or --grid-n to fix the reconstruction grid")
    return sino, gt, grid


def _nf_config(args):
    base = get_preset(args.preset, args.phantom).nf
    arch = base.u_arch
    arch = replace(arch, **{k: v for k, v in (("width", args.width), ("sigma_x", args.sigma_x),
                                              ("sigma_t", args.sigma_t)) if v is not None})
    kw = {k: getattr(args, k) for k in ("alpha", "beta", "gamma", "epochs", "lr", "lr_final", "sampling_rate", "seed")
          if getattr(args, k) is not None}
    if args.batch_size is not None:
        kw["batch_size"] = None if args.batch_size == 0 else args.batch_size
    return replace(base, u_arch=arch, v_arch=replace(arch, d_out=2), psnr_peak=1.0 if args.peak_one else None,
                   adaptive_gamma=args.adaptive_gamma, **kw)


def _write_outputs(out: Path, files: list[str]) -> dict:
    return {name: io.file_digest(out / name) for name in files}


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> dict:
    pre = get_preset(args.preset, args.phantom).simulation
    phantom = PHANTOMS[args.phantom](args.edge_width)
    n_frames = args.n_frames or pre.n_frames
    grid_n = args.grid_n or pre.grid_n
    n_sensors = args.n_sensors or pre.n_sensors
    geometry = GEOMETRY_PRESETS[args.phantom].with_sensors(n_sensors)
    schedule = SamplingSchedule(args.sampling or pre.sampling, np.deg2rad(pre.delta_deg), seed=args.seed)
    noise = pre.noise_std if args.noise_std is None else args.noise_std
    time_axis = TimeAxis(n_frames, phantom.t_final)
    sim = simulate(phantom, geometry, schedule, time_axis, noise, seed=args.seed + 1,
                   hi_res=args.hi_res or pre.hi_res, recon_grid=ImageGrid.square(grid_n))
    io.write_sinogram(args.out / "sinogram.bin", sim.sinogram)
    io.write_volume(args.out / "ground_truth.vol", sim.ground_truth)
    log.info("wrote %d x %d sinogram and %d^2 x %d ground truth", n_sensors, n_frames, grid_n, n_frames)
    return _write_outputs(args.out, ["sinogram.bin", "ground_truth.vol"])


def cmd_recon_nf(args) -> dict:
    sino, gt, grid = _load_pair(args)
    cfg = _nf_config(args)
    u, v, history = train(cfg, sino, grid, gt)
    ta = _time_axis(sino)
    rec = render_field(u, grid, ta)
    io.write_volume(args.out / "recon.vol", rec)
    vel = render_velocity(v, grid, ta)
    io.write_volume(args.out / "velocity_x.vol", vel[0])
    io.write_volume(args.out / "velocity_y.vol", vel[1])
    write_checkpoint(args.out / "u.ckpt", u)
    write_checkpoint(args.out / "v.ckpt", v)
    history.write_csv(args.out / "history.csv", include_time=False)
    history.write_csv(args.out / "timing.csv", include_time=True)
    if gt is not None:
        print(f"best PSNR {history.best_psnr():.4f} dB")
    return _write_outputs(args.out, ["recon.vol", "velocity_x.vol", "velocity_y.vol", "u.ckpt", "v.ckpt",
                                     "history.csv"])


def cmd_recon_grid(args) -> dict:
    sino, gt, grid = _load_pair(args)
    pre = get_preset(args.preset, args.phantom).grid
    w = pre.weights
    weights = GridWeights(*(getattr(w, k) if getattr(args, k) is None else getattr(args, k)
                            for k in ("alpha", "beta", "gamma")))
    ta = _time_axis(sino)
    K = SpacetimeProjector(sino.geometry, grid, sino.angles)
    rounds = args.rounds or pre.rounds
    inner = args.inner_iters or pre.inner_iters
    peak = 1.0 if args.peak_one else None
    round_psnr = []
    track = (lambda k, u, v: round_psnr.append(psnr(u, gt, peak))) if gt is not None else None
    u0 = np.zeros((sino.n_frames, grid.n_pixels))
    res = alternate(u0, np.zeros(u0.shape + (2,)), K, sino.data, weights, grid, ta, rounds, inner, callback=track,
                    u_ratio=pre.u_ratio if args.step_ratio is None else args.step_ratio, v_ratio=pre.v_ratio)
    io.write_volume(args.out / "recon.vol", CasoratiImage(res.u, grid, ta))
    io.write_volume(args.out / "velocity_x.vol", CasoratiImage(res.v[..., 0], grid, ta))
    io.write_volume(args.out / "velocity_y.vol", CasoratiImage(res.v[..., 1], grid, ta))
    cols = ["round", "objective", "data", "reg_r", "reg_s", "reg_a"]
    with open(args.out / "objective.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols + (["psnr"] if gt is not None else []))
        for i, row in enumerate(res.rounds):
            extra = [repr(round_psnr[i])] if gt is not None else []
            wr.writerow([row["round"]] + [repr(float(row[c])) for c in cols[1:]] + extra)
    if gt is not None:
        print(f"PSNR {round_psnr[-1]:.4f} dB")
    return _write_outputs(args.out, ["recon.vol", "velocity_x.vol", "velocity_y.vol", "objective.csv"])


def cmd_eval(args) -> dict:
    rec, ref = io.read_volume(args.recon), io.read_volume(args.reference)
    if rec.values.shape != ref.values.shape:
        raise UsageError(f"shape mismatch {rec.values.shape} vs {ref.values.shape}")
    peak = 1.0 if args.peak_one else None
    value = psnr(rec, ref, peak, per_frame=args.per_frame)
    print(f"PSNR {value:.4f} dB" if math.isfinite(value) else "PSNR inf dB")
    with open(args.out / "metrics.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "frame", "value"])
        wr.writerow(["psnr", "", repr(value)])
        wr.writerow(["temporal_std", "", repr(temporal_std(rec))])
        for i, p in enumerate(frame_psnr(rec, ref, peak)):
            wr.writerow(["psnr", i, repr(float(p))])
    return _write_outputs(args.out, ["metrics.csv"])


def cmd_sweep_gamma(args) -> dict:
    sino, gt, grid = _load_pair(args)
    if gt is None:
        raise UsageError("sweep-gamma needs --ground-truth")
    curves = {}
    for g in args.gammas:
        _, _, history = train(_nf_config(argparse.Namespace(**{**vars(args), "gamma": g})), sino, grid, gt)
        curves[g] = history
        log.info("gamma %g: best PSNR %.3f", g, history.best_psnr())
    steps = curves[args.gammas[0]].step
    with open(args.out / "psnr_vs_step.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["step"] + [f"gamma={g:g}" for g in args.gammas])
        for i, s in enumerate(steps):
            wr.writerow([s] + [repr(float(curves[g].psnr[i])) for g in args.gammas])
    for g in args.gammas:
        print(f"gamma={g:g} best PSNR {curves[g].best_psnr():.4f} dB")
    return _write_outputs(args.out, ["psnr_vs_step.csv"])


def cmd_render(args) -> dict:
    vol = io.read_volume(args.volume)
    paths = io.export_frames(vol, args.out, args.window)
    return _write_outputs(args.out, [p.name for p in paths] + ["frames.csv"])


def cmd_replay(args) -> dict:
    command, config, recorded = io.read_manifest(args.manifest)
    argv = [command]
    for k, v in config.items():
        argv += [f"--{k.replace('_', '-')}", v] if v not in ("True", "False") else ([f"--{k.replace('_', '-')}"] if v == "True" else [])
    argv += ["--out", str(args.out)]
    code = main(argv)
    if code != 0:
        return {"__exit__": code}
    if args.check:
        _, _, fresh = io.read_manifest(Path(args.out) / "manifest.ini")
        diff = sorted(k for k in recorded if recorded[k] != fresh.get(k))
        if diff:
            print("replay differs in: " + ", ".join(diff), file=sys.stderr)
            return {"__exit__": 3}
        print("replay bit-identical")
    return {}


# --- parser ---------------------------------------------------------------------

def _common(p, recon: bool = False):
    p.add_argument("--config", type=Path, help="key=value config file (INI sections allowed)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--preset", choices=("paper", "desk"), default="desk")
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="two-square")
    p.add_argument("-v", "--verbose", action="store_true")
    if recon:
        p.add_argument("--sinogram", type=Path, required=True)
        p.add_argument("--ground-truth", type=Path)
        p.add_argument("--grid-n", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--peak-one", action="store_true", help="PSNR with peak 1 instead of max(ref)")


def _nf_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, help="frames per step; 0 = full batch")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-final", type=float, help="decay the step size geometrically to this value")
    p.add_argument("--sampling-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--sigma-x", type=float)
    p.add_argument("--sigma-t", type=float)
    p.add_argument("--adaptive-gamma", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynct", description="Dynamic CT reconstruction experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="phantom -> sinogram + ground-truth volume")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampling", choices=("random", "sequential"))
    p.add_argument("--n-frames", type=int)
    p.add_argument("--grid-n", type=int)
    p.add_argument("--n-sensors", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--hi-res", type=int)
    p.add_argument("--edge-width", type=float, default=0.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recon-nf", help="neural-field reconstruction")
    _common(p, recon=True)
    _nf_flags(p)
    p.set_defaults(func=cmd_recon_nf)

    p = sub.add_parser("recon-grid", help="grid-based alternating PDHG reconstruction")
    _common(p, recon=True)
    p.add_argument("--rounds", type=int)
    p.add_argument("--inner-iters", type=int)
    p.add_argument("--step-ratio", type=float, help="sigma/tau ratio for the u-subproblem")
    p.set_defaults(func=cmd_recon_grid)

    p = sub.add_parser("eval", help="PSNR of a reconstruction against a reference")
    _common(p)
    p.add_argument("--recon", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--peak-one", action="store_true")
    p.add_argument("--per-frame", action="store_true", help="mean of per-frame PSNRs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-gamma", help="PSNR-vs-step curves for several gamma values")
    _common(p, recon=True)
    _nf_flags(p)
    p.add_argument("--gammas", type=_floats, default=[0.0, 1e-2])
    p.set_defaults(func=cmd_sweep_gamma)

    p = sub.add_parser("render", help="volume -> 16-bit PGM frames")
    _common(p)
    p.add_argument("--volume", type=Path, required=True)
    p.add_argument("--window", type=_window)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("replay", help="rerun a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--check", action="store_true", help="compare output digests with the manifest")
    p.set_defaults(func=cmd_replay)
    return ap


def _apply_config(parser, argv):
    """Re-parse with values from --config as defaults; explicit flags win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    conf = io.read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, text in conf.items():
        dest = key.replace("-", "_")
        if dest not in known:
            parser.error(f"unknown config key {key!r}")
        action = known[dest]
        if isinstance(action, (argparse._StoreTrueAction,)):
            defaults[dest] = text.strip().lower() in ("1", "true", "yes")
        elif action.type is not None:
            defaults[dest] = action.type(text)
        else:
            defaults[dest] = text
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _manifest_config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _VOLATILE or v is None:
            continue
        if isinstance(v, list):
            v = ",".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        out[k] = v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        outputs = args.func(args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"dynct {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if "__exit__" in outputs:
        return outputs["__exit__"]
    if args.command != "replay":
        fp = io.write_manifest(args.out / "manifest.ini", args.command, _manifest_config(args), outputs)
        log.info("manifest fingerprint %s", fp)
    return 0


if __name__ == "__main__":
    sys.exit(main())
