"""Grid-based joint reconstruction by alternating PDHG solves.

Images are Casorati matrices ``u`` of shape (N_T, N) and velocities ``v`` of
shape (N_T, N, 2), both on a uniform grid. Spatial and temporal derivatives
are forward differences with Neumann boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ImageGrid, TimeAxis
from .projector import operator_norm

log = logging.getLogger(__name__)


# --- finite differences -------------------------------------------------------

def grad_space(u, grid: ImageGrid) -> np.ndarray:
    """Forward-difference gradient of (..., N) frames, shape (..., N, 2)."""
    u = np.asarray(u, dtype=np.float64)
    lead = u.shape[:-1]
    img = u.reshape(*lead, grid.ny, grid.nx)
    g = np.zeros(img.shape + (2,))
    g[..., :, :-1, 0] = img[..., :, 1:] - img[..., :, :-1]
    g[..., :-1, :, 1] = img[..., 1:, :] - img[..., :-1, :]
    return g.reshape(*lead, grid.n_pixels, 2) / grid.pixel_size


def div_space(q, grid: ImageGrid) -> np.ndarray:
    """Discrete divergence, the negative adjoint of :func:`grad_space`."""
    q = np.asarray(q, dtype=np.float64)
    lead = q.shape[:-2]
    qx = q[..., 0].reshape(*lead, grid.ny, grid.nx)
    qy = q[..., 1].reshape(*lead, grid.ny, grid.nx)
    d = np.zeros(qx.shape)
    d[..., :, :-1] += qx[..., :, :-1]
    d[..., :, 1:] -= qx[..., :, :-1]
    d[..., :-1, :] += qy[..., :-1, :]
    d[..., 1:, :] -= qy[..., :-1, :]
    return d.reshape(*lead, grid.n_pixels) / grid.pixel_size


def grad_space_adjoint(q, grid: ImageGrid) -> np.ndarray:
    return -div_space(q, grid)


def grad_time(u, dt: float) -> np.ndarray:
    """Forward difference across frames; the last frame's row is zero."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] < 2:
        raise ValueError("temporal differences need at least two frames")
    g = np.zeros_like(u)
    g[:-1] = (u[1:] - u[:-1]) / dt
    return g


def grad_time_adjoint(p, dt: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    out[:-1] -= p[:-1]
    out[1:] += p[:-1]
    return out / dt


def flow_residual(u, v, grid: ImageGrid, dt: float) -> np.ndarray:
    """Discrete optical-flow residual D_t u + v . D u, shape (N_T, N)."""
    return grad_time(u, dt) + np.sum(v * grad_space(u, grid), axis=-1)


def _cell_volume(grid: ImageGrid, time_axis: TimeAxis) -> float:
    t_final = time_axis.t_final if time_axis.n_frames > 1 else 1.0
    return grid.area * t_final / (time_axis.n_frames * grid.n_pixels)


def discrete_regularizers(u, v, grid: ImageGrid, time_axis: TimeAxis):
    """Riemann-sum versions (R, S, A) of the TV, velocity-TV and flow integrals."""
    c = _cell_volume(grid, time_axis)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    R = c * float(np.sum(np.linalg.norm(grad_space(u, grid), axis=-1)))
    S = c * sum(float(np.sum(np.linalg.norm(grad_space(v[..., j], grid), axis=-1))) for j in range(2))
    A = c * float(np.sum(np.abs(flow_residual(u, v, grid, time_axis.dt)))) if time_axis.n_frames > 1 else 0.0
    return R, S, A


# --- proximal maps ------------------------------------------------------------

def prox_soft_threshold(x, tau):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def project_l2ball_rows(q, r):
    """Scale every vector along the last axis to Euclidean norm at most r."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(1.0, norms / r)


def prox_quad_conjugate(p, sigma, f, lam):
    """Prox of sigma * F^* for F(y) = lam/2 ||y - f||^2."""
    return (p - sigma * f) / (1.0 + sigma / lam)


def prox_abs_affine(w, rho, g, lam):
    """argmin_v 1/2 ||v - w||^2 + lam |rho + g . v| for one pixel (closed form)."""
    w, g = np.asarray(w, dtype=np.float64), np.asarray(g, dtype=np.float64)
    r = rho + g @ w
    gg = g @ g
    if gg == 0:
        return w.copy()
    if abs(r) <= lam * gg:
        return w - g * r / gg
    return w - lam * np.sign(r) * g


# --- PDHG machinery -------------------------------------------------------------

@dataclass
class Block:
    """One term F(A x) of the objective, with A given by forward/adjoint maps."""

    name: str
    forward: object
    adjoint: object
    dual_prox: object          # (q, sigma) -> prox_{sigma F*}(q)


@dataclass
class PdhgState:
    x: np.ndarray
    duals: dict
    x_bar: np.ndarray
    tau: float
    sigma: float
    norm: float
    iteration: int = 0
    objective: list = field(default_factory=list)


class _Stacked:
    def __init__(self, blocks, shape):
        self.blocks = blocks
        self.domain_shape = shape
        self._shapes = None

    def forward(self, x):
        outs = [b.forward(x) for b in self.blocks]
        self._shapes = [o.shape for o in outs]
        return np.concatenate([o.ravel() for o in outs])

    def adjoint(self, y):
        total, off = np.zeros(self.domain_shape), 0
        for b, s in zip(self.blocks, self._shapes):
            n = int(np.prod(s))
            total += b.adjoint(y[off:off + n].reshape(s))
            off += n
        return total


def stacked_norm(blocks, shape, n_iters: int = 100, seed: int = 0) -> float:
    return operator_norm(_Stacked(blocks, shape), n_iters, seed)


def balance_blocks(blocks, shape, reference: str = "data", norm_iters: int = 50):
    """Rescale every block's operator to the norm of the reference block.

    F(A x) = F_s(s A x) with F_s(z) = F(z / s), so the minimizer is unchanged
    while the stacked operator is no longer dominated by the difference
    operators. Dual variables of scaled blocks are stored in scaled units.
    """
    norms = {b.name: operator_norm(_Stacked([b], shape), norm_iters) for b in blocks}
    ref = norms.get(reference, 0.0)
    if ref == 0.0:
        return blocks, {b.name: 1.0 for b in blocks}
    out, scales = [], {}
    for b in blocks:
        s = ref / norms[b.name] if norms[b.name] > 0 else 1.0
        scales[b.name] = s
        if s == 1.0:
            out.append(b)
            continue
        out.append(Block(
            b.name,
            lambda x, b=b, s=s: s * b.forward(x),
            lambda q, b=b, s=s: s * b.adjoint(q),
            # prox of sigma F_s^* with F_s^*(q) = F^*(s q): rescale in and out
            lambda q, sig, b=b, s=s: b.dual_prox(s * q, s * s * sig) / s))
    return out, scales


def pdhg(x0, blocks, n_iters: int, tau=None, sigma=None, duals=None, objective=None,
         monitor_every: int = 0, norm_iters: int = 100, balance: bool = False,
         ratio: float = 1.0) -> PdhgState:
    """Unaccelerated PDHG for min_x sum_k F_k(A_k x), over-relaxation theta = 1.

    With ``balance`` the blocks are first rescaled by :func:`balance_blocks`;
    duals passed in and returned are always in the units of the unscaled blocks.
    """
    x = np.array(x0, dtype=np.float64)
    scales = {b.name: 1.0 for b in blocks}
    if balance and len(blocks) > 1:
        blocks, scales = balance_blocks(blocks, x.shape)
    if duals is not None:
        duals = {k: (None if d is None else d / scales.get(k, 1.0)) for k, d in duals.items()}
    L = stacked_norm(blocks, x.shape, norm_iters) if blocks else 0.0
    if tau is None or sigma is None:
        tau, sigma = (0.99 / (L * ratio), 0.99 * ratio / L) if L > 0 else (1.0, 1.0)
    if tau * sigma * L * L > 1.0 + 1e-12:
        raise ValueError(f"step sizes violate tau*sigma*L^2 <= 1 (got {tau * sigma * L * L:.4g})")
    y = {}
    for b in blocks:
        prev = None if duals is None else duals.get(b.name)
        y[b.name] = np.zeros_like(b.forward(x)) if prev is None else prev.copy()
    state = PdhgState(x, y, x.copy(), tau, sigma, L)
    if not blocks:
        return state
    x_bar = x.copy()
    for it in range(n_iters):
        step = np.zeros_like(x)
        for b in blocks:
            y[b.name] = b.dual_prox(y[b.name] + sigma * b.forward(x_bar), sigma)
            step += b.adjoint(y[b.name])
        x_new = x - tau * step
        x_bar = 2.0 * x_new - x
        x = x_new
        if objective is not None and monitor_every and (it + 1) % monitor_every == 0:
            state.objective.append(objective(x))
    state.x, state.x_bar, state.iteration = x, x_bar, n_iters
    state.duals = {k: d * scales[k] for k, d in y.items()}
    return state


# --- the two subproblems ------------------------------------------------------

@dataclass(frozen=True)
class GridWeights:
    alpha: float = 1e-3
    beta: float = 1e-4
    gamma: float = 1e-3


class IdentityOperator:
    def forward(self, u):
        return np.asarray(u, dtype=np.float64)

    def adjoint(self, y):
        return np.asarray(y, dtype=np.float64)


def data_objective(u, K, f) -> float:
    u = np.asarray(u)
    return 0.5 * float(np.sum((K.forward(u) - f) ** 2)) / u.shape[0]


def u_objective(u, v, K, f, weights: GridWeights, grid, time_axis) -> float:
    R, _, A = discrete_regularizers(u, v, grid, time_axis)
    return data_objective(u, K, f) + weights.alpha * R + weights.gamma * A


def v_objective(u, v, weights: GridWeights, grid, time_axis) -> float:
    _, S, A = discrete_regularizers(u, v, grid, time_axis)
    return weights.beta * S + weights.gamma * A


def full_objective(u, v, K, f, weights: GridWeights, grid, time_axis) -> float:
    R, S, A = discrete_regularizers(u, v, grid, time_axis)
    return data_objective(u, K, f) + weights.alpha * R + weights.beta * S + weights.gamma * A


def u_blocks(v, K, f, weights: GridWeights, grid: ImageGrid, time_axis: TimeAxis, n_frames: int):
    c = _cell_volume(grid, time_axis)
    lam = 1.0 / n_frames
    blocks = [Block("data", K.forward, K.adjoint, lambda q, s: prox_quad_conjugate(q, s, f, lam))]
    if weights.alpha > 0:
        r = weights.alpha * c
        blocks.append(Block("tv", lambda u: grad_space(u, grid), lambda q: grad_space_adjoint(q, grid),
                            lambda q, s: project_l2ball_rows(q, r)))
    if weights.gamma > 0 and n_frames > 1:
        dt, bound = time_axis.dt, weights.gamma * c
        blocks.append(Block(
            "flow",
            lambda u: grad_time(u, dt) + np.sum(v * grad_space(u, grid), axis=-1),
            lambda p: grad_time_adjoint(p, dt) + grad_space_adjoint(v * p[..., None], grid),
            lambda q, s: np.clip(q, -bound, bound)))
    return blocks


def pdhg_u(u0, v, K, f, weights: GridWeights, grid: ImageGrid, time_axis: TimeAxis, n_iters: int = 2000,
           duals=None, tau=None, sigma=None, monitor_every: int = 0, balance: bool = True,
           ratio: float = 1.0) -> PdhgState:
    """Solve min_u D(u, f) + alpha R(u) + gamma A(u, v) for fixed v."""
    u0 = np.asarray(u0, dtype=np.float64)
    blocks = u_blocks(v, K, f, weights, grid, time_axis, u0.shape[0])
    obj = lambda u: u_objective(u, v, K, f, weights, grid, time_axis)
    return pdhg(u0, blocks, n_iters, tau, sigma, duals, obj, monitor_every, balance=balance, ratio=ratio)


def v_blocks(u, weights: GridWeights, grid: ImageGrid, time_axis: TimeAxis):
    c = _cell_volume(grid, time_axis)
    blocks = []
    if weights.beta > 0:
        r = weights.beta * c
        for j in range(2):
            def fwd(v, j=j):
                return grad_space(v[..., j], grid)

            def adj(q, j=j):
                out = np.zeros(q.shape[:-2] + (grid.n_pixels, 2))
                out[..., j] = grad_space_adjoint(q, grid)
                return out

            blocks.append(Block(f"tv_v{j}", fwd, adj, lambda q, s: project_l2ball_rows(q, r)))
    if weights.gamma > 0 and time_axis.n_frames > 1:
        rho = grad_time(u, time_axis.dt)
        g = grad_space(u, grid)
        bound = weights.gamma * c
        blocks.append(Block(
            "flow",
            lambda v: np.sum(g * v, axis=-1),
            lambda p: g * p[..., None],
            lambda q, s: np.clip(q + s * rho, -bound, bound)))
    return blocks


def pdhg_v(v0, u, weights: GridWeights, grid: ImageGrid, time_axis: TimeAxis, n_iters: int = 2000,
           duals=None, tau=None, sigma=None, monitor_every: int = 0, balance: bool = True,
           ratio: float = 1.0) -> PdhgState:
    """Solve min_v beta S(v) + gamma A(u, v) for fixed u."""
    blocks = v_blocks(u, weights, grid, time_axis)
    obj = lambda v: v_objective(u, v, weights, grid, time_axis)
    return pdhg(np.asarray(v0, dtype=np.float64), blocks, n_iters, tau, sigma, duals, obj, monitor_every,
                balance=balance, ratio=ratio)


@dataclass
class AlternationResult:
    u: np.ndarray
    v: np.ndarray
    objective: list            # full objective after each round (index 0 = start)
    rounds: list               # per-round dicts of objective terms


def alternate(u0, v0, K, f, weights: GridWeights, grid: ImageGrid, time_axis: TimeAxis,
              rounds: int = 5, inner_iters: int = 2000, callback=None, u_ratio: float = 1.0,
              v_ratio: float = 1.0, balance: bool = True) -> AlternationResult:
    """Biconvex alternation: u-solve with v fixed, then v-solve with u fixed."""
    u = np.array(u0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    objective = [full_objective(u, v, K, f, weights, grid, time_axis)]
    log_rows = []
    duals_u = duals_v = None
    for k in range(rounds):
        su = pdhg_u(u, v, K, f, weights, grid, time_axis, inner_iters, duals=duals_u, balance=balance, ratio=u_ratio)
        u, duals_u = su.x, su.duals
        sv = pdhg_v(v, u, weights, grid, time_axis, inner_iters, duals=duals_v, balance=balance, ratio=v_ratio)
        v, duals_v = sv.x, sv.duals
        R, S, A = discrete_regularizers(u, v, grid, time_axis)
        D = data_objective(u, K, f)
        total = D + weights.alpha * R + weights.beta * S + weights.gamma * A
        objective.append(total)
        log_rows.append({"round": k + 1, "objective": total, "data": D, "reg_r": R, "reg_s": S, "reg_a": A})
        log.info("round %d objective %.6g", k + 1, total)
        if callback is not None:
            callback(k + 1, u, v)
    return AlternationResult(u, v, objective, log_rows)
