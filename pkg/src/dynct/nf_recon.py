"""Neural-field solver for joint image and motion reconstruction.

Each iteration draws a batch of frames for the data term and a fresh Latin
hypercube of collocation points for the Monte Carlo estimate of the
regularizers, then takes one Adam step on both fields.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import autodiff as ad
from .core import CasoratiImage, ImageGrid, Sinogram, SpaceTimeDomain, TimeAxis, frame_points, pixel_centers
from .field import AdamState, FieldArch, NeuralField, RasterEmbedding, adam_step
from .metrics import psnr
from .projector import SpacetimeProjector

log = logging.getLogger(__name__)


@dataclass
class NfReconConfig:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 1e-2
    batch_size: int | None = None       # frames per iteration; None = all frames
    sampling_rate: float = 0.1
    epochs: int = 100
    lr: float = 1e-3
    lr_final: float | None = None       # exponential decay from lr to lr_final over the run
    seed: int = 0
    u_arch: FieldArch = field(default_factory=FieldArch)
    v_arch: FieldArch = field(default_factory=lambda: FieldArch(d_out=2))
    smoothing: float = 1e-6            # Charbonnier epsilon for |.| and ||.||
    spatial_reg: Literal["tv", "stv"] = "tv"
    log_every: int | None = None        # iterations; None = 100 full-batch, 1 epoch mini-batch
    psnr_peak: float | None = None
    adaptive_gamma: bool = False
    gamma_target: float = 1e-2
    adapt_window: int = 5
    adapt_trigger: float = 0.05

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("regularization weights must be non-negative")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError("sampling_rate must be in (0, 1]")
        if self.lr_final is not None and not 0 < self.lr_final:
            raise ValueError("lr_final must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.u_arch.d_out != 1 or self.v_arch.d_out != 2:
            raise ValueError("u must be scalar and v two-dimensional")


@dataclass
class TrainingHistory:
    step: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    data: list = field(default_factory=list)
    reg_r: list = field(default_factory=list)
    reg_s: list = field(default_factory=list)
    reg_a: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    gamma_switched_at: int | None = None

    COLUMNS = ("step", "epoch", "loss", "data", "reg_r", "reg_s", "reg_a", "gamma", "psnr", "seconds")

    def append(self, **row) -> None:
        if self.step and row["step"] <= self.step[-1]:
            raise ValueError("history steps must increase")
        for k in self.COLUMNS:
            getattr(self, k).append(row[k])

    def __len__(self):
        return len(self.step)

    def best_psnr(self) -> float:
        vals = [p for p in self.psnr if p is not None]
        return max(vals) if vals else float("nan")

    def write_csv(self, path, include_time: bool = True) -> None:
        cols = [c for c in self.COLUMNS if include_time or c != "seconds"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(len(self)):
                w.writerow([_fmt(getattr(self, c)[i]) for c in cols])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history, step):
        super().__init__(message)
        self.history = history
        self.step = step


# --- sampling ---------------------------------------------------------------

def lhs_sample(n_points: int, bounds, seed_or_rng=0) -> np.ndarray:
    """Latin hypercube sample: one point per stratum along every coordinate.

    ``bounds`` is a (d, 2) array of [lo, hi] rows.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(bounds)
    strata = np.stack([rng.permutation(n_points) for _ in range(d)], axis=1)
    u = (strata + rng.uniform(size=(n_points, d))) / n_points
    return lo + u * (hi - lo)


def n_collocation(sampling_rate: float, n_frames: int, n_pixels: int) -> int:
    return max(1, int(round(sampling_rate * n_frames * n_pixels)))


# --- loss pieces ------------------------------------------------------------

def _raster_points(xy: np.ndarray, times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    pts = np.empty((len(times) * len(xy), 3))
    pts[:, :2] = np.tile(xy, (len(times), 1))
    pts[:, 2] = np.repeat(times, len(xy))
    return pts


def data_term_node(u_field: NeuralField, projector: SpacetimeProjector, sinogram: Sinogram,
                   frame_indices, xy: np.ndarray, raster: RasterEmbedding | None = None) -> ad.Tensor:
    idx = list(frame_indices)
    if raster is not None:
        node = ad.field_node(u_field, None, embedded=raster(sinogram.times[idx]))
    else:
        node = ad.field_node(u_field, _raster_points(xy, sinogram.times[idx]))
    vals = ad.reshape(node, (len(idx), len(xy)))
    pred = ad.linear_map(vals, lambda x: projector.project(x, idx), lambda g: projector.backproject(g, idx))
    resid = pred - sinogram.data[:, idx]
    return ad.total(ad.square(resid)) * (0.5 / len(idx))


def data_fidelity_batch(u_field: NeuralField, sinogram: Sinogram, frame_indices, grid: ImageGrid,
                        projector: SpacetimeProjector | None = None) -> float:
    """Mean over the chosen frames of 0.5 * ||K_t u_t - f_t||^2."""
    idx = list(frame_indices)
    if len(set(idx)) != len(idx):
        raise ValueError("frame indices must be distinct")
    if projector is None:
        projector = SpacetimeProjector(sinogram.geometry, grid, sinogram.angles)
    pts = _raster_points(pixel_centers(grid), sinogram.times[idx])
    frames = u_field(pts)[:, 0].reshape(len(idx), -1)
    resid = projector.project(frames, idx) - sinogram.data[:, idx]
    return 0.5 * float(np.sum(resid ** 2)) / len(idx)


@dataclass
class RegTerms:
    r: ad.Tensor | None
    s: ad.Tensor | None
    a: ad.Tensor | None


def integrand_nodes(u_field, v_field, points, alpha, beta, gamma, eps, spatial_reg="tv") -> RegTerms:
    """Per-point integrands of the three regularizers (unweighted)."""
    r = s = a = None
    if alpha > 0 or gamma > 0:
        un = ad.field_node(u_field, points, (0, 1, 2))
        ux, uy, ut = un[:, 0, 1], un[:, 0, 2], un[:, 0, 3]
        if alpha > 0:
            sq = ad.square(ux) + ad.square(uy)
            if spatial_reg == "stv":
                sq = sq + ad.square(ut)
            r = ad.smooth_norm(sq, eps)
    if beta > 0 or gamma > 0:
        dirs = (0, 1) if beta > 0 else ()
        vn = ad.field_node(v_field, points, dirs)
        if beta > 0:
            s = (ad.smooth_norm(ad.square(vn[:, 0, 1]) + ad.square(vn[:, 0, 2]), eps)
                 + ad.smooth_norm(ad.square(vn[:, 1, 1]) + ad.square(vn[:, 1, 2]), eps))
        if gamma > 0:
            flow = ut + vn[:, 0, 0] * ux + vn[:, 1, 0] * uy
            a = ad.smooth_abs(flow, eps)
    return RegTerms(r, s, a)


def eta(u_field, v_field, points, alpha, beta, gamma, eps=0.0, spatial_reg="tv") -> np.ndarray:
    """alpha ||grad u|| + beta sum_j ||grad v_j|| + gamma |u_t + v . grad u| at each point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    terms = integrand_nodes(u_field, v_field, points, alpha, beta, gamma, eps, spatial_reg)
    out = np.zeros(len(points))
    for w, t in ((alpha, terms.r), (beta, terms.s), (gamma, terms.a)):
        if t is not None:
            out += w * t.value
    return out


def mc_regularizer(u_field, v_field, points, weights, volume: float, eps: float = 0.0,
                   spatial_reg: str = "tv") -> float:
    """(|Omega_T| / N_C) * sum_c eta(point_c); ``weights`` is (alpha, beta, gamma)."""
    alpha, beta, gamma = weights
    return volume * float(np.mean(eta(u_field, v_field, points, alpha, beta, gamma, eps, spatial_reg)))


def stv_regularizer(u_field, points, volume: float, eps: float = 0.0) -> float:
    """Monte Carlo estimate of the spatiotemporal TV integral."""
    return mc_regularizer(u_field, None, points, (1.0, 0.0, 0.0), volume, eps, spatial_reg="stv")


def render_field(u_field: NeuralField, grid: ImageGrid, time_axis: TimeAxis, chunk: int = 16) -> CasoratiImage:
    raster = RasterEmbedding(u_field.embedding, pixel_centers(grid))
    times = time_axis.times
    frames = []
    for start in range(0, len(times), chunk):
        ts = times[start:start + chunk]
        frames.append(u_field(None, raster(ts))[:, 0].reshape(len(ts), -1))
    return CasoratiImage(np.concatenate(frames), grid, time_axis)


def render_velocity(v_field: NeuralField, grid: ImageGrid, time_axis: TimeAxis) -> list[CasoratiImage]:
    """Rasterize the velocity field; one Casorati image per component."""
    vals = v_field(_raster_points(pixel_centers(grid), time_axis.times))
    vals = vals.reshape(time_axis.n_frames, grid.n_pixels, 2)
    return [CasoratiImage(vals[..., j], grid, time_axis) for j in range(2)]


def adaptive_gamma(history: TrainingHistory, config: NfReconConfig, gamma: float | None = None) -> float:
    """Raise gamma once to ``gamma_target`` when the flow residual starts growing.

    Compares the mean logged flow term over the latest ``adapt_window``
    entries with the window before it.
    """
    current = config.gamma if gamma is None else gamma
    if history.gamma_switched_at is not None or current >= config.gamma_target:
        return current
    w = config.adapt_window
    flow = [a for a in history.reg_a if a is not None]
    if len(flow) < 2 * w:
        return current
    prev, latest = np.mean(flow[-2 * w:-w]), np.mean(flow[-w:])
    if latest > prev * (1.0 + config.adapt_trigger):
        return config.gamma_target
    return current


# --- training ---------------------------------------------------------------

def _time_axis_of(sinogram: Sinogram) -> TimeAxis:
    return TimeAxis(sinogram.n_frames, float(sinogram.times[-1]) if sinogram.n_frames > 1 else 1.0)


def train(config: NfReconConfig, sinogram: Sinogram, grid: ImageGrid,
          ground_truth: CasoratiImage | None = None, callback=None):
    """Fit image and velocity fields to the sinogram.

    Returns ``(u_field, v_field, history)``. When ground truth is given the
    returned fields are the snapshot with the best logged PSNR; otherwise
    the final iterate.
    """
    n_t = sinogram.n_frames
    batch = n_t if config.batch_size is None else min(config.batch_size, n_t)
    full_batch = batch == n_t
    time_axis = _time_axis_of(sinogram)
    domain = SpaceTimeDomain(grid.extent, time_axis.t_final)
    volume = domain.volume
    n_c = n_collocation(config.sampling_rate, n_t, grid.n_pixels)
    batches_per_epoch = math.ceil(n_t / batch)
    log_every = config.log_every or (100 if full_batch else batches_per_epoch)

    u = NeuralField.create(config.u_arch, config.seed)
    v = NeuralField.create(config.v_arch, config.seed + 1)
    opt_u = AdamState.zeros_like(u.arrays(), lr=config.lr)
    opt_v = AdamState.zeros_like(v.arrays(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 2)
    projector = SpacetimeProjector(sinogram.geometry, grid, sinogram.angles)
    xy = pixel_centers(grid)
    raster = RasterEmbedding(u.embedding, xy)

    history = TrainingHistory()
    best = (-math.inf, u.copy(), v.copy())
    gamma = config.gamma
    alpha, beta = config.alpha, config.beta
    eps = config.smoothing
    use_v = beta > 0 or gamma > 0 or config.adaptive_gamma
    n_steps = config.epochs * batches_per_epoch
    decay = 1.0 if config.lr_final is None else (config.lr_final / config.lr) ** (1.0 / max(n_steps - 1, 1))
    start = time.perf_counter()
    step = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n_t) if not full_batch else np.arange(n_t)
        for b in range(batches_per_epoch):
            idx = np.sort(order[b * batch:(b + 1) * batch])
            data = data_term_node(u, projector, sinogram, idx, xy, raster)
            loss = data
            terms = RegTerms(None, None, None)
            if alpha > 0 or beta > 0 or gamma > 0:
                pts = lhs_sample(n_c, domain.bounds, rng)
                terms = integrand_nodes(u, v, pts, alpha, beta, gamma, eps, config.spatial_reg)
                reg = None
                for w, t in ((alpha, terms.r), (beta, terms.s), (gamma, terms.a)):
                    if t is not None:
                        piece = ad.total(t) * (w * volume / n_c)
                        reg = piece if reg is None else reg + piece
                loss = loss + reg
            if not math.isfinite(float(loss.value)):
                raise TrainingDiverged(f"non-finite loss at step {step}", history, step)
            grads_u, grads_v = ad.loss_param_grads(loss, [u, v])
            if config.lr_final is not None:
                lr = config.lr * decay ** step
                opt_u, opt_v = replace(opt_u, lr=lr), replace(opt_v, lr=lr)
            opt_u, new_u = adam_step(opt_u, u.arrays(), grads_u)
            u.set_arrays(new_u)
            if use_v:
                opt_v, new_v = adam_step(opt_v, v.arrays(), grads_v)
                v.set_arrays(new_v)
            step += 1

            if step % log_every == 0:
                mc = lambda t: volume * float(np.mean(t.value)) if t is not None else None
                p = None
                if ground_truth is not None:
                    p = psnr(render_field(u, grid, time_axis), ground_truth, config.psnr_peak)
                    if p > best[0]:
                        best = (p, u.copy(), v.copy())
                history.append(step=step, epoch=epoch + 1, loss=float(loss.value), data=float(data.value),
                               reg_r=mc(terms.r), reg_s=mc(terms.s), reg_a=mc(terms.a), gamma=gamma,
                               psnr=p, seconds=time.perf_counter() - start)
                if config.adaptive_gamma:
                    new_gamma = adaptive_gamma(history, config, gamma)
                    if new_gamma != gamma:
                        log.info("step %d: raising gamma %g -> %g", step, gamma, new_gamma)
                        history.gamma_switched_at = step
                        gamma = new_gamma
                if callback is not None:
                    callback(step, history)

    if ground_truth is not None and best[0] > -math.inf:
        return best[1], best[2], history
    return u, v, history
