"""Exact-length fan-beam projector (Siddon traversal) and its transpose."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .core import CasoratiImage, FanBeamGeometry, ImageGrid, Sinogram


@dataclass(frozen=True)
class RaySegment:
    cell_index: int
    length: float


def _segment_cells(p0, p1, grid: ImageGrid) -> tuple[np.ndarray, np.ndarray]:
    """Cells crossed by the segment p0 -> p1 and the intersection lengths.

    Parametric crossings with every grid line are merged and sorted; each
    interval between consecutive crossings lies in exactly one cell.
    """
    x0, y0 = float(p0[0]), float(p0[1])
    dx, dy = float(p1[0]) - x0, float(p1[1]) - y0
    seg_len = math.hypot(dx, dy)
    xmin, xmax, ymin, ymax = grid.extent
    h = grid.pixel_size
    empty = (np.empty(0, dtype=np.int64), np.empty(0))

    lo, hi = 0.0, 1.0
    for start, delta, a, b in ((x0, dx, xmin, xmax), (y0, dy, ymin, ymax)):
        if delta == 0.0:
            if not a <= start <= b:
                return empty
            continue
        t0, t1 = (a - start) / delta, (b - start) / delta
        if t0 > t1:
            t0, t1 = t1, t0
        lo, hi = max(lo, t0), min(hi, t1)
    if hi <= lo:
        return empty

    parts = [np.array([lo, hi])]
    if dx != 0.0:
        ax = (xmin + h * np.arange(grid.nx + 1) - x0) / dx
        parts.append(ax[(ax > lo) & (ax < hi)])
    if dy != 0.0:
        ay = (ymin + h * np.arange(grid.ny + 1) - y0) / dy
        parts.append(ay[(ay > lo) & (ay < hi)])
    alphas = np.sort(np.concatenate(parts))
    steps = np.diff(alphas)
    keep = steps > 1e-14
    mids = 0.5 * (alphas[:-1] + alphas[1:])[keep]
    ix = np.clip(np.floor((x0 + mids * dx - xmin) / h).astype(np.int64), 0, grid.nx - 1)
    iy = np.clip(np.floor((y0 + mids * dy - ymin) / h).astype(np.int64), 0, grid.ny - 1)
    return iy * grid.nx + ix, steps[keep] * seg_len


def _check_source(geometry: FanBeamGeometry, grid: ImageGrid, angle: float) -> None:
    if grid.contains(geometry.source_position(angle)):
        raise ValueError("source lies inside the image extent; enlarge dso or shrink the grid")


def ray_path(geometry: FanBeamGeometry, grid: ImageGrid, angle: float, sensor_index: int) -> list[RaySegment]:
    """Ordered segments of the ray from the source to sensor ``sensor_index`` (1-based)."""
    if not 1 <= sensor_index <= geometry.n_sensors:
        raise ValueError(f"sensor_index must be in [1, {geometry.n_sensors}]")
    _check_source(geometry, grid, angle)
    src = geometry.source_position(angle)
    det = geometry.sensor_positions(angle)[sensor_index - 1]
    cells, lengths = _segment_cells(src, det, grid)
    return [RaySegment(int(c), float(l)) for c, l in zip(cells, lengths)]


def system_matrix(geometry: FanBeamGeometry, grid: ImageGrid, angle: float) -> sp.csr_matrix:
    """Sparse (M, N) matrix of intersection lengths for one source angle."""
    _check_source(geometry, grid, angle)
    src = geometry.source_position(angle)
    rows, cols, vals = [], [], []
    for j, det in enumerate(geometry.sensor_positions(angle)):
        cells, lengths = _segment_cells(src, det, grid)
        rows.append(np.full(len(cells), j, dtype=np.int64))
        cols.append(cells)
        vals.append(lengths)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geometry.n_sensors, grid.n_pixels),
    )
    mat.sum_duplicates()
    return mat


def project_frame(image, geometry: FanBeamGeometry, grid: ImageGrid, angle: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64).ravel()
    return system_matrix(geometry, grid, angle) @ image


def backproject_frame(measurement, geometry: FanBeamGeometry, grid: ImageGrid, angle: float) -> np.ndarray:
    measurement = np.asarray(measurement, dtype=np.float64).ravel()
    return system_matrix(geometry, grid, angle).T @ measurement


class SpacetimeProjector:
    """Frame-wise projector K_t over a fixed list of source angles.

    Acts on (N_T, N) Casorati matrices and returns (M, N_T) sinogram data.
    The per-frame system matrices are built once and reused.
    """

    def __init__(self, geometry: FanBeamGeometry, grid: ImageGrid, angles: Sequence[float]):
        self.geometry = geometry
        self.grid = grid
        self.angles = np.asarray(angles, dtype=np.float64)
        self.matrices = [system_matrix(geometry, grid, a) for a in self.angles]

    @property
    def n_frames(self) -> int:
        return len(self.angles)

    @property
    def domain_shape(self) -> tuple[int, int]:
        return (self.n_frames, self.grid.n_pixels)

    def project(self, frames: np.ndarray, frame_indices=None) -> np.ndarray:
        """Project rows of ``frames``; row k is paired with frame_indices[k]."""
        frames = np.asarray(frames, dtype=np.float64)
        if frame_indices is None:
            frame_indices = range(self.n_frames)
        frames = frames.reshape(len(frame_indices), -1)
        return np.stack([self.matrices[i] @ f for i, f in zip(frame_indices, frames)], axis=1)

    def backproject(self, data: np.ndarray, frame_indices=None) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if frame_indices is None:
            frame_indices = range(self.n_frames)
        return np.stack([self.matrices[i].T @ data[:, k] for k, i in enumerate(frame_indices)])

    # linear-operator interface used by the solvers
    @property
    def block_matrix(self) -> sp.csr_matrix:
        """All frames as one block-diagonal matrix (frame-major input)."""
        if getattr(self, "_block", None) is None:
            self._block = sp.block_diag(self.matrices, format="csr")
            self._block_t = self._block.T.tocsr()
        return self._block

    def forward(self, u: np.ndarray) -> np.ndarray:
        y = self.block_matrix @ np.asarray(u, dtype=np.float64).ravel()
        return y.reshape(self.n_frames, -1).T

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        self.block_matrix
        x = self._block_t @ np.asarray(y, dtype=np.float64).T.ravel()
        return x.reshape(self.n_frames, -1)


def project_spacetime(u: CasoratiImage, template: Sinogram,
                      projector: SpacetimeProjector | None = None) -> Sinogram:
    """Sinogram of ``u`` acquired with the angles, times and geometry of ``template``."""
    if u.time_axis.n_frames != template.n_frames:
        raise ValueError(f"image has {u.time_axis.n_frames} frames, sinogram {template.n_frames}")
    if projector is None:
        projector = SpacetimeProjector(template.geometry, u.grid, template.angles)
    return Sinogram(projector.project(u.values), template.angles.copy(), template.times.copy(),
                    template.geometry)


class MatrixOperator:
    """Wrap a dense or sparse matrix in the forward/adjoint interface."""

    def __init__(self, matrix):
        self.matrix = matrix
        self.domain_shape = (matrix.shape[1],)

    def forward(self, x):
        return self.matrix @ x

    def adjoint(self, y):
        return self.matrix.T @ y


def operator_norm(op, n_iters: int = 100, seed: int = 0, return_history: bool = False):
    """Largest singular value of a linear operator by power iteration on A^T A.

    ``op`` needs ``forward``, ``adjoint`` and ``domain_shape``; a plain matrix
    is wrapped automatically.
    """
    if not hasattr(op, "forward"):
        op = MatrixOperator(op)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.domain_shape)
    x /= np.linalg.norm(x)
    history = []
    est = 0.0
    for _ in range(n_iters):
        y = op.forward(x)
        est = float(np.linalg.norm(y))
        history.append(est)
        z = op.adjoint(y)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            break
        x = z / nz
    if return_history:
        return est, history
    return est


def dense_matrix(forward: Callable[[np.ndarray], np.ndarray], shape_in) -> np.ndarray:
    """Materialize a linear map column by column (small problems only)."""
    n = int(np.prod(shape_in))
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(np.asarray(forward(e.reshape(shape_in))).ravel())
    return np.stack(cols, axis=1)
