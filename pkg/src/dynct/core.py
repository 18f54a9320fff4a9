"""Geometry, grids, time axes and measurement containers shared by every module."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np


@dataclass(frozen=True)
class FanBeamGeometry:
    """Flat-detector fan-beam scanner.

    Distances are in domain units. The source sits at ``dso * (cos a, sin a)``
    for a source angle ``a`` measured counterclockwise from the +x axis, and the
    detector line is perpendicular to the central ray at distance ``dsd`` from
    the source.
    """

    dso: float
    dsd: float
    detector_width: float
    n_sensors: int

    def __post_init__(self):
        if not self.dso > 0:
            raise ValueError(f"dso must be positive, got {self.dso}")
        if not self.dsd > self.dso:
            raise ValueError(f"dsd must exceed dso, got dsd={self.dsd}, dso={self.dso}")
        if not self.detector_width > 0:
            raise ValueError("detector_width must be positive")
        if self.n_sensors < 1:
            raise ValueError("n_sensors must be >= 1")

    def sensor_offsets(self) -> np.ndarray:
        """Signed offsets of the sensor centers along the detector line."""
        j = np.arange(1, self.n_sensors + 1, dtype=np.float64)
        return ((j - 0.5) / self.n_sensors - 0.5) * self.detector_width

    def source_position(self, angle: float) -> np.ndarray:
        return self.dso * np.array([math.cos(angle), math.sin(angle)])

    def sensor_positions(self, angle: float) -> np.ndarray:
        """(M, 2) array of sensor centers for a source at ``angle``."""
        c, s = math.cos(angle), math.sin(angle)
        center = (self.dso - self.dsd) * np.array([c, s])
        along = np.array([-s, c])
        return center[None, :] + self.sensor_offsets()[:, None] * along[None, :]

    def with_sensors(self, n_sensors: int) -> "FanBeamGeometry":
        return FanBeamGeometry(self.dso, self.dsd, self.detector_width, n_sensors)


# scanner presets (dso, dsd, detector width, sensors)
GEOMETRY_PRESETS = {
    "two-square": FanBeamGeometry(3.0, 5.0, 3.5, 64),
    "cardiac": FanBeamGeometry(3.0, 5.0, 3.5, 64),
    "stempo": FanBeamGeometry(9.88, 13.33, 2.69, 70),
    "xcat": FanBeamGeometry(6.0, 8.0, 3.5, 150),
}


@dataclass(frozen=True)
class ImageGrid:
    """Uniform pixel grid over an axis-aligned rectangle.

    Pixels are stored row-major: flat index ``iy * nx + ix``, with ``iy = 0``
    the row of smallest y.
    """

    nx: int
    ny: int
    extent: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one pixel per axis")
        xmin, xmax, ymin, ymax = self.extent
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"empty extent {self.extent}")
        if not math.isclose((xmax - xmin) / self.nx, (ymax - ymin) / self.ny, rel_tol=1e-12):
            raise ValueError("pixels must be square")

    @classmethod
    def square(cls, n: int, half_width: float = 1.0) -> "ImageGrid":
        return cls(n, n, (-half_width, half_width, -half_width, half_width))

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def pixel_size(self) -> float:
        return (self.extent[1] - self.extent[0]) / self.nx

    @property
    def area(self) -> float:
        xmin, xmax, ymin, ymax = self.extent
        return (xmax - xmin) * (ymax - ymin)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along x and y."""
        h = self.pixel_size
        xs = self.extent[0] + h * (np.arange(self.nx) + 0.5)
        ys = self.extent[2] + h * (np.arange(self.ny) + 0.5)
        return xs, ys

    def contains(self, point) -> bool:
        x, y = point
        xmin, xmax, ymin, ymax = self.extent
        return xmin <= x <= xmax and ymin <= y <= ymax


def pixel_centers(grid: ImageGrid) -> np.ndarray:
    """Row-major (nx*ny, 2) array of pixel-center coordinates."""
    xs, ys = grid.axes()
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


@dataclass(frozen=True)
class TimeAxis:
    """Uniform acquisition times ``t_i = i * T / (N_T - 1)``, i = 0..N_T-1."""

    n_frames: int
    t_final: float = 1.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if self.n_frames > 1 and not self.t_final > 0:
            raise ValueError("t_final must be positive")

    @property
    def times(self) -> np.ndarray:
        if self.n_frames == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.t_final, self.n_frames)

    @property
    def dt(self) -> float:
        return self.t_final / (self.n_frames - 1) if self.n_frames > 1 else 1.0


@dataclass
class Sinogram:
    """Line-integral measurements, one column per acquisition frame."""

    data: np.ndarray
    angles: np.ndarray
    times: np.ndarray
    geometry: FanBeamGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("sinogram data must be a matrix")
        m, n_t = self.data.shape
        if m != self.geometry.n_sensors:
            raise ValueError(f"{m} detector rows but geometry has {self.geometry.n_sensors} sensors")
        if self.angles.shape != (n_t,) or self.times.shape != (n_t,):
            raise ValueError("angles and times must have one entry per column")
        if not (np.all(np.isfinite(self.data)) and np.all(np.isfinite(self.angles))
                and np.all(np.isfinite(self.times))):
            raise ValueError("sinogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


@dataclass
class CasoratiImage:
    """Space-time image stored frame-major as an (N_T, N) matrix."""

    values: np.ndarray
    grid: ImageGrid
    time_axis: TimeAxis

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.time_axis.n_frames, self.grid.n_pixels)
        if self.values.shape != expected:
            if self.values.size == expected[0] * expected[1]:
                self.values = self.values.reshape(expected)
            else:
                raise ValueError(f"values shape {self.values.shape} does not match {expected}")

    @property
    def frames(self) -> np.ndarray:
        """(N_T, ny, nx) view of the values."""
        return self.values.reshape(self.time_axis.n_frames, self.grid.ny, self.grid.nx)


@dataclass(frozen=True)
class SamplingSchedule:
    kind: Literal["random", "sequential"] = "random"
    delta: float = math.radians(9.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "sequential"):
            raise ValueError(f"unknown sampling kind {self.kind!r}")
        if self.kind == "sequential" and self.delta == 0:
            raise ValueError("sequential sampling needs a non-zero angular increment")


def angle_schedule(schedule: SamplingSchedule, n_frames: int) -> np.ndarray:
    """Source angle (radians) for each of ``n_frames`` acquisitions."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if schedule.kind == "sequential":
        return np.arange(n_frames, dtype=np.float64) * schedule.delta
    rng = np.random.default_rng(schedule.seed)
    return rng.uniform(0.0, 2.0 * math.pi, size=n_frames)


@dataclass(frozen=True)
class SpaceTimeDomain:
    """The box grid.extent x [0, T] on which regularizers are integrated."""

    extent: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)
    t_final: float = 1.0

    @property
    def volume(self) -> float:
        xmin, xmax, ymin, ymax = self.extent
        return (xmax - xmin) * (ymax - ymin) * self.t_final

    @property
    def bounds(self) -> np.ndarray:
        xmin, xmax, ymin, ymax = self.extent
        return np.array([[xmin, xmax], [ymin, ymax], [0.0, self.t_final]])


def frame_points(grid: ImageGrid, t: float) -> np.ndarray:
    """(N, 3) space-time coordinates of all pixel centers at time ``t``."""
    xy = pixel_centers(grid)
    return np.column_stack([xy, np.full(len(xy), float(t))])
