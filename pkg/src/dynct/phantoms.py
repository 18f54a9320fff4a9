"""Analytic moving phantoms and measurement synthesis.

Both phantoms transport an initial frame ``u0`` along a known motion, so
``u(x, t) = u0(phi_t^{-1}(x))`` and the pair (u, d/dt phi) satisfies the
optical flow equation exactly wherever u is differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .core import (CasoratiImage, FanBeamGeometry, ImageGrid, SamplingSchedule, Sinogram,
                   TimeAxis, angle_schedule, pixel_centers)
from .projector import system_matrix


# --- indicator helpers -------------------------------------------------------

def _ramp(d, width):
    """C^1 step of the signed distance ``d``: 0 below -width, 1 above +width."""
    if width <= 0:
        return (d >= 0).astype(np.float64)
    s = np.clip(d / width, -1.0, 1.0)
    return 0.5 + 0.75 * s - 0.25 * s ** 3


def _ellipse_level(x, y, e: Ellipse):
    return np.hypot((x - e.center[0]) / e.semi_axes[0], (y - e.center[1]) / e.semi_axes[1])


def _ellipse_indicator(x, y, e: Ellipse, width):
    d = (1.0 - _ellipse_level(x, y, e)) * min(e.semi_axes)
    return _ramp(d, width)


def _square_indicator(x, y, sq: Square, width):
    half = 0.5 * sq.side
    d = np.minimum(half - np.abs(x - sq.center[0]), half - np.abs(y - sq.center[1]))
    return _ramp(d, width)


def _circle_indicator(x, y, c: Circle, width):
    d = c.radius - np.hypot(x - c.center[0], y - c.center[1])
    return _ramp(d, width)


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float] = (0.0, 0.0)
    semi_axes: tuple[float, float] = (0.85, 0.65)
    intensity: float = 0.3


@dataclass(frozen=True)
class Square:
    center: tuple[float, float]
    side: float
    intensity: float


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float
    intensity: float


@dataclass(frozen=True)
class SceneConfig:
    """Initial frame u0: a background ellipse with objects painted on top.

    ``edge_width`` is the half-width of the C^1 ramp used to smooth indicator
    edges (domain units); 0 gives hard edges.
    """

    kind: Literal["two-square", "cardiac"] = "two-square"
    background: Ellipse = Ellipse()
    squares: tuple[Square, ...] = (
        Square((-0.4, -0.1), 0.25, 1.0),
        Square((0.1, -0.55), 0.25, 0.7),
    )
    circles: tuple[Circle, ...] = ()
    edge_width: float = 0.0

    def __post_init__(self):
        objs = list(self.squares) + list(self.circles) + [self.background]
        for obj in objs:
            if not 0.0 <= obj.intensity <= 1.0:
                raise ValueError(f"intensity {obj.intensity} outside [0, 1]")
        for obj in list(self.squares) + list(self.circles):
            if _ellipse_level(np.array(obj.center[0]), np.array(obj.center[1]), self.background) >= 1.0:
                raise ValueError(f"object at {obj.center} starts outside the background")


def cardiac_scene(edge_width: float = 0.0) -> SceneConfig:
    return SceneConfig(
        kind="cardiac",
        background=Ellipse((0.0, 0.0), (0.55, 0.4), 0.4),
        squares=(),
        circles=(
            Circle((-0.25, 0.1), 0.1, 1.0),
            Circle((0.2, 0.15), 0.1, 0.8),
            Circle((0.0, -0.2), 0.1, 0.6),
        ),
        edge_width=edge_width,
    )


@dataclass(frozen=True)
class MotionLaw:
    """Motion of the phantom objects.

    For the cardiac kind the scale ``a(t)`` dips by ``amplitude`` once per
    regular period of length ``period``; the window ``[irregular_start,
    irregular_end]`` replaces one period with a faster, uneven double beat.
    """

    kind: Literal["two-square", "cardiac"] = "two-square"
    t_final: float = 1.0
    amplitude: float = 0.25
    period: float = 1.1
    irregular_start: float = 1.1
    irregular_end: float = 1.9
    min_scale: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ValueError("amplitude must be in [0, 1) to keep a(t) > 0")
        if not 0.0 < self.min_scale <= 1.0:
            raise ValueError("min_scale must be in (0, 1]")


@dataclass(frozen=True)
class Phantom:
    scene: SceneConfig = SceneConfig()
    motion: MotionLaw = MotionLaw()

    def intensity(self, x, y, t):
        if self.scene.kind == "two-square":
            return two_square_intensity(x, y, t, self.scene)
        return cardiac_intensity(x, y, t, self.scene, self.motion)

    def velocity(self, x, y, t):
        if self.scene.kind == "two-square":
            return two_square_velocity(x, y, t, self.scene)
        return cardiac_velocity(x, y, t, self.motion)

    @property
    def t_final(self) -> float:
        return self.motion.t_final


def two_square_phantom(edge_width: float = 0.0) -> Phantom:
    return Phantom(SceneConfig(edge_width=edge_width), MotionLaw("two-square", t_final=1.0))


def cardiac_phantom(edge_width: float = 0.0) -> Phantom:
    return Phantom(cardiac_scene(edge_width), MotionLaw("cardiac", t_final=3.0))


PHANTOMS = {"two-square": two_square_phantom, "cardiac": cardiac_phantom}


# --- two-square phantom ------------------------------------------------------

def two_square_inverse_maps(x, y, t):
    """Inverse motions of the spiralling square (1) and the drifting square (2)."""
    x, y, t = (np.asarray(a, dtype=np.float64) for a in (x, y, t))
    w = 2.0 * math.pi * t
    inv1 = (x - t / 5.0 * np.cos(w), y - 0.75 * t * np.sin(w))
    inv2 = (x - 0.3 * t, y - 0.8 * t)
    return inv1, inv2


def spiral_velocity(t):
    t = np.asarray(t, dtype=np.float64)
    w = 2.0 * math.pi * t
    vx = np.cos(w) / 5.0 - 2.0 * math.pi * t / 5.0 * np.sin(w)
    vy = 0.75 * np.sin(w) + 1.5 * math.pi * t * np.cos(w)
    return vx, vy


def _two_square_layers(x, y, t, scene: SceneConfig):
    inv1, inv2 = two_square_inverse_maps(x, y, t)
    w = scene.edge_width
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    bg = _ellipse_indicator(x, y, scene.background, w)
    sq1, sq2 = scene.squares
    s1 = np.broadcast_to(_square_indicator(*inv1, sq1, w), bg.shape)
    s2 = np.broadcast_to(_square_indicator(*inv2, sq2, w), bg.shape)
    return bg, s1, s2


def two_square_intensity(x, y, t, scene: SceneConfig = SceneConfig()):
    """Two squares over a static ellipse; square 1 is painted on top."""
    bg, s1, s2 = _two_square_layers(x, y, t, scene)
    sq1, sq2 = scene.squares
    u = scene.background.intensity * bg
    u = u * (1.0 - s2) + sq2.intensity * s2
    u = u * (1.0 - s1) + sq1.intensity * s1
    return u


def two_square_velocity(x, y, t, scene: SceneConfig = SceneConfig()):
    """Velocity of whichever square covers (x, y) at time t, zero elsewhere."""
    _, s1, s2 = _two_square_layers(x, y, t, scene)
    x, y, t = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (x, y, t)))
    v1x, v1y = spiral_velocity(t)
    in1, in2 = s1 > 0, (s2 > 0) & ~(s1 > 0)
    vx = np.where(in1, v1x, np.where(in2, 0.3, 0.0))
    vy = np.where(in1, v1y, np.where(in2, 0.8, 0.0))
    return vx, vy


# --- cardiac phantom ---------------------------------------------------------

def _scale_and_rate(t, motion: MotionLaw):
    t = np.asarray(t, dtype=np.float64)
    amp, period = motion.amplitude, motion.period
    start, end = motion.irregular_start, motion.irregular_end
    irregular = (t >= start) & (t < end)

    # regular beats restart at 0 and at the end of the irregular window
    tau = np.where(t < start, t, t - end)
    tau = np.mod(tau, period)
    w = math.pi / period
    a_reg = 1.0 - amp * np.sin(w * tau) ** 2
    da_reg = -amp * w * np.sin(2.0 * w * tau)

    length = end - start
    s = (t - start) / length
    w2 = 2.0 * math.pi
    core = np.sin(w2 * s) ** 2
    mod = 1.0 + 0.5 * np.sin(2.0 * w2 * s)
    a_irr = 1.0 - amp * core * mod
    da_irr = -amp * (w2 * np.sin(2.0 * w2 * s) * mod + core * w2 * np.cos(2.0 * w2 * s)) / length
    clipped = a_irr < motion.min_scale
    a_irr = np.where(clipped, motion.min_scale, a_irr)
    da_irr = np.where(clipped, 0.0, da_irr)

    return np.where(irregular, a_irr, a_reg), np.where(irregular, da_irr, da_reg)


def cardiac_scale(t, motion: MotionLaw = MotionLaw("cardiac", t_final=3.0)):
    """Radial scale a(t) of the beating phantom; a(0) = 1."""
    return _scale_and_rate(t, motion)[0]


def cardiac_scale_rate(t, motion: MotionLaw = MotionLaw("cardiac", t_final=3.0)):
    """Time derivative a'(t)."""
    return _scale_and_rate(t, motion)[1]


def cardiac_initial(x, y, scene: SceneConfig):
    w = scene.edge_width
    u = scene.background.intensity * _ellipse_indicator(x, y, scene.background, w)
    for c in scene.circles:
        s = _circle_indicator(x, y, c, w)
        u = u * (1.0 - s) + c.intensity * s
    return u


def cardiac_intensity(x, y, t, scene: SceneConfig | None = None,
                      motion: MotionLaw = MotionLaw("cardiac", t_final=3.0)):
    scene = cardiac_scene() if scene is None else scene
    a = cardiac_scale(t, motion)
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return cardiac_initial(x / a, y / a, scene)


def cardiac_velocity(x, y, t, motion: MotionLaw = MotionLaw("cardiac", t_final=3.0)):
    a, da = _scale_and_rate(t, motion)
    rate = da / a
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return rate * x, rate * y


# --- rasterization and synthesis ---------------------------------------------

def render_frame(phantom: Phantom, grid: ImageGrid, t: float) -> np.ndarray:
    """Point samples of the phantom at the pixel centers, flat row-major."""
    xy = pixel_centers(grid)
    return np.asarray(phantom.intensity(xy[:, 0], xy[:, 1], t), dtype=np.float64)


def render_ground_truth(phantom: Phantom, time_axis: TimeAxis, hi_res: int = 1024,
                        extent=(-1.0, 1.0, -1.0, 1.0)) -> CasoratiImage:
    grid = ImageGrid(hi_res, hi_res, extent)
    values = np.stack([render_frame(phantom, grid, t) for t in time_axis.times])
    return CasoratiImage(values, grid, time_axis)


def pool_average(image, factor: int):
    """Mean over non-overlapping ``factor x factor`` blocks of the last two axes.

    Accepts an array ``(..., ny, nx)`` or a CasoratiImage.
    """
    if isinstance(image, CasoratiImage):
        g = image.grid
        pooled = pool_average(image.frames, factor)
        grid = ImageGrid(g.nx // factor, g.ny // factor, g.extent)
        return CasoratiImage(pooled.reshape(len(pooled), -1), grid, image.time_axis)
    image = np.asarray(image, dtype=np.float64)
    ny, nx = image.shape[-2:]
    if factor < 1 or ny % factor or nx % factor:
        raise ValueError(f"image {ny}x{nx} not divisible by pooling factor {factor}")
    lead = image.shape[:-2]
    blocks = image.reshape(*lead, ny // factor, factor, nx // factor, factor)
    return blocks.mean(axis=(-3, -1))


@dataclass
class Simulation:
    sinogram: Sinogram
    ground_truth: CasoratiImage      # pooled to the reconstruction grid
    clean: np.ndarray = field(repr=False, default=None)


def simulate(phantom: Phantom, geometry: FanBeamGeometry, schedule: SamplingSchedule,
             time_axis: TimeAxis, noise_std: float, seed: int, hi_res: int = 1024,
             recon_grid: ImageGrid | None = None) -> Simulation:
    """Measure the phantom at ``hi_res`` and pool the truth down to ``recon_grid``.

    Each frame is rendered at the high resolution, projected at its source
    angle, then discarded, so memory stays at one high-resolution frame.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    hi_grid = ImageGrid.square(hi_res)
    if recon_grid is None:
        recon_grid = hi_grid
    factor = hi_res // recon_grid.nx
    if factor * recon_grid.nx != hi_res or recon_grid.nx != recon_grid.ny:
        raise ValueError("reconstruction grid must divide the high-resolution grid")

    angles = angle_schedule(schedule, time_axis.n_frames)
    clean = np.empty((geometry.n_sensors, time_axis.n_frames))
    truth = np.empty((time_axis.n_frames, recon_grid.n_pixels))
    for i, (t, a) in enumerate(zip(time_axis.times, angles)):
        frame = render_frame(phantom, hi_grid, t)
        clean[:, i] = system_matrix(geometry, hi_grid, a) @ frame
        truth[i] = pool_average(frame.reshape(hi_res, hi_res), factor).ravel()

    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, 1.0, size=clean.shape) * noise_std
    sino = Sinogram(noisy, angles, time_axis.times, geometry)
    return Simulation(sino, CasoratiImage(truth, recon_grid, time_axis), clean)


def synthesize_sinogram(phantom: Phantom, geometry: FanBeamGeometry, schedule: SamplingSchedule,
                        time_axis: TimeAxis, noise_std: float, seed: int,
                        hi_res: int = 1024) -> Sinogram:
    return simulate(phantom, geometry, schedule, time_axis, noise_std, seed, hi_res).sinogram
