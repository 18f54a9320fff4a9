"""Coordinate MLPs with Fourier features, exact input derivatives, and Adam.

A field maps (x, y, t) to ``d_out`` values. Input derivatives are propagated
forward as tangents alongside the activations, and parameter gradients of
any loss that mixes values and tangents come from one reverse sweep over
that augmented computation.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FieldArch:
    m_x: int = 32
    m_t: int = 32
    sigma_x: float = 0.1
    sigma_t: float = 0.1
    n_hidden: int = 3
    width: int = 128
    d_out: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("m_x", "m_t", "n_hidden", "width", "d_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sigma_x < 0 or self.sigma_t < 0:
            raise ValueError("frequency scales must be non-negative")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def embed_dim(self) -> int:
        return 2 * self.m_x + 2 * self.m_t


@dataclass
class FourierEmbedding:
    """Fixed random sinusoidal lift, applied separately to space and time."""

    Bx: np.ndarray  # (m_x, 2)
    Bt: np.ndarray  # (m_t, 1)

    @property
    def dim(self) -> int:
        return 2 * len(self.Bx) + 2 * len(self.Bt)

    def phases(self, points):
        points = np.asarray(points)
        return TWO_PI * points[:, :2] @ self.Bx.T, TWO_PI * points[:, 2:3] @ self.Bt.T

    def __call__(self, points) -> np.ndarray:
        px, pt = self.phases(points)
        return np.concatenate([np.sin(px), np.cos(px), np.sin(pt), np.cos(pt)], axis=1)

    def with_tangents(self, points, directions):
        """Embedding and its derivatives along the given input directions."""
        px, pt = self.phases(points)
        sx, cx, st, ct = np.sin(px), np.cos(px), np.sin(pt), np.cos(pt)
        z = np.concatenate([sx, cx, st, ct], axis=1)
        n, mx, mt = len(z), px.shape[1], pt.shape[1]
        dz = np.zeros((len(directions), n, z.shape[1]), dtype=z.dtype)
        for k, d in enumerate(directions):
            if d < 2:
                w = TWO_PI * self.Bx[:, d]
                dz[k, :, :mx] = cx * w
                dz[k, :, mx:2 * mx] = -sx * w
            else:
                w = TWO_PI * self.Bt[:, 0]
                dz[k, :, 2 * mx:2 * mx + mt] = ct * w
                dz[k, :, 2 * mx + mt:] = -st * w
        return z, dz


class RasterEmbedding:
    """Embedding of a fixed set of pixel centres at varying times.

    The spatial half depends only on the pixels, so it is computed once and
    reused for every batch of frames.
    """

    def __init__(self, embedding: FourierEmbedding, xy):
        px = TWO_PI * np.asarray(xy) @ embedding.Bx.T
        self.spatial = np.concatenate([np.sin(px), np.cos(px)], axis=1)
        self.embedding = embedding

    def __call__(self, times) -> np.ndarray:
        """Rows ordered frame-major, matching ``points`` built as (xy tiled, t repeated)."""
        pt = TWO_PI * np.asarray(times, dtype=self.spatial.dtype)[:, None] @ self.embedding.Bt.T
        tpart = np.concatenate([np.sin(pt), np.cos(pt)], axis=1)
        n, ds = self.spatial.shape
        z = np.empty((len(pt), n, ds + tpart.shape[1]), dtype=self.spatial.dtype)
        z[:, :, :ds] = self.spatial
        z[:, :, ds:] = tpart[:, None, :]
        return z.reshape(len(pt) * n, -1)


def embed(x, y, t, emb: FourierEmbedding) -> np.ndarray:
    points = np.column_stack(np.broadcast_arrays(*(np.atleast_1d(np.asarray(a, float)) for a in (x, y, t))))
    return emb(points)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W1, b1, W2, b2, ...]."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))


@dataclass
class FieldTape:
    """Intermediate values of one forward pass, kept for the reverse sweep."""

    directions: tuple
    layer_inputs: list
    input_tangents: list
    activations: list
    slopes: list
    pre_tangents: list
    output: np.ndarray
    output_tangents: np.ndarray


def init_field(seed: int, arch: FieldArch) -> tuple[FourierEmbedding, MlpParams]:
    """Gaussian Fourier matrices and Xavier-uniform weights with zero biases."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(arch.dtype)
    Bx = (rng.standard_normal((arch.m_x, 2)) * arch.sigma_x).astype(dtype)
    Bt = (rng.standard_normal((arch.m_t, 1)) * arch.sigma_t).astype(dtype)
    sizes = [arch.embed_dim] + [arch.width] * arch.n_hidden + [arch.d_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return FourierEmbedding(Bx, Bt), MlpParams(weights, biases)


class NeuralField:
    """Fourier-feature MLP ``R^3 -> R^d_out`` with tanh hidden layers."""

    def __init__(self, embedding: FourierEmbedding, params: MlpParams, arch: FieldArch | None = None,
                 seed: int = 0):
        self.embedding = embedding
        self.params = params
        if arch is None:
            W = params.weights
            arch = FieldArch(m_x=len(embedding.Bx), m_t=len(embedding.Bt), n_hidden=len(W) - 1,
                             width=W[0].shape[0], d_out=W[-1].shape[0])
        self.arch = arch
        self.seed = seed
        self.grads = [np.zeros_like(a) for a in params.arrays()]

    @classmethod
    def create(cls, arch: FieldArch, seed: int) -> "NeuralField":
        emb, params = init_field(seed, arch)
        return cls(emb, params, arch, seed)

    @property
    def d_out(self) -> int:
        return self.params.weights[-1].shape[0]

    @property
    def dtype(self):
        return self.params.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        return self.params.arrays()

    def set_arrays(self, arrays) -> None:
        self.params = MlpParams.from_arrays([np.asarray(a) for a in arrays])

    def copy(self) -> "NeuralField":
        emb = FourierEmbedding(self.embedding.Bx.copy(), self.embedding.Bt.copy())
        params = MlpParams.from_arrays([a.copy() for a in self.arrays()])
        return NeuralField(emb, params, self.arch, self.seed)

    def zero_grad(self) -> None:
        self.grads = [np.zeros_like(a) for a in self.arrays()]

    def accumulate_grads(self, grads) -> None:
        for acc, g in zip(self.grads, grads):
            acc += g

    def __call__(self, points, embedded=None) -> np.ndarray:
        """Plain evaluation, shape (n, d_out); ``embedded`` skips the embedding."""
        z = self.embedding(np.asarray(points, dtype=self.dtype)) if embedded is None else embedded
        Ws, bs = self.params.weights, self.params.biases
        for W, b in zip(Ws[:-1], bs[:-1]):
            z = np.tanh(z @ W.T + b)
        return z @ Ws[-1].T + bs[-1]

    def forward(self, points, directions=(), embedded=None) -> FieldTape:
        """Forward pass with input tangents; ``embedded`` (no directions only) skips the embedding."""
        directions = tuple(directions)
        if directions:
            z, dz = self.embedding.with_tangents(np.asarray(points, dtype=self.dtype), directions)
        elif embedded is not None:
            z, dz = embedded, None
        else:
            z, dz = self.embedding(np.asarray(points, dtype=self.dtype)), None
        k = len(directions)
        Ws, bs = self.params.weights, self.params.biases
        inputs, in_tan, acts, slopes, pre_tan = [], [], [], [], []
        for W, b in zip(Ws[:-1], bs[:-1]):
            inputs.append(z)
            in_tan.append(dz)
            h = np.tanh(z @ W.T + b)
            s = 1.0 - h * h
            acts.append(h)
            slopes.append(s)
            if k:
                da = (dz.reshape(-1, dz.shape[-1]) @ W.T).reshape(k, len(z), -1)
                pre_tan.append(da)
                dz = s * da
            else:
                pre_tan.append(None)
            z = h
        inputs.append(z)
        in_tan.append(dz)
        out = z @ Ws[-1].T + bs[-1]
        if k:
            dout = (dz.reshape(-1, dz.shape[-1]) @ Ws[-1].T).reshape(k, len(z), -1)
        else:
            dout = np.zeros((0, len(z), Ws[-1].shape[0]), dtype=out.dtype)
        return FieldTape(directions, inputs, in_tan, acts, slopes, pre_tan, out, dout)

    def backward(self, tape: FieldTape, g_out, g_tan=None) -> list[np.ndarray]:
        """Parameter gradients given upstream gradients of output and tangents.

        ``g_out`` has shape (n, d_out); ``g_tan`` (k, n, d_out) matches the
        tape's tangent directions or is None.
        """
        Ws = self.params.weights
        k = len(tape.directions)
        use_tan = k > 0 and g_tan is not None
        grads_W, grads_b = [None] * len(Ws), [None] * len(Ws)

        g_z = np.asarray(g_out, dtype=self.dtype)
        g_dz = np.asarray(g_tan, dtype=self.dtype) if use_tan else None
        z_in, dz_in = tape.layer_inputs[-1], tape.input_tangents[-1]
        gW = g_z.T @ z_in
        if use_tan:
            gW += g_dz.reshape(-1, g_dz.shape[-1]).T @ dz_in.reshape(-1, dz_in.shape[-1])
        grads_W[-1], grads_b[-1] = gW, g_z.sum(axis=0)
        W = Ws[-1]
        g_z = g_z @ W
        if use_tan:
            g_dz = g_dz @ W

        for l in range(len(Ws) - 2, -1, -1):
            h, s = tape.activations[l], tape.slopes[l]
            g_a = g_z * s
            if use_tan:
                da = tape.pre_tangents[l]
                g_a -= 2.0 * h * s * np.einsum("knm,knm->nm", g_dz, da)
                g_da = g_dz * s
            z_in, dz_in = tape.layer_inputs[l], tape.input_tangents[l]
            gW = g_a.T @ z_in
            if use_tan:
                gW += g_da.reshape(-1, g_da.shape[-1]).T @ dz_in.reshape(-1, dz_in.shape[-1])
            grads_W[l], grads_b[l] = gW, g_a.sum(axis=0)
            if l > 0:
                W = Ws[l]
                g_z = g_a @ W
                if use_tan:
                    g_dz = g_da @ W
        out = []
        for gW, gb in zip(grads_W, grads_b):
            out += [gW, gb]
        return out


def field_eval(field_: NeuralField, points) -> np.ndarray:
    return field_(points)


def field_input_derivs(field_: NeuralField, points):
    """Value and (d/dx, d/dy, d/dt) of a scalar field at each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tape = field_.forward(pts, (0, 1, 2))
    u = tape.output[:, 0]
    du = tape.output_tangents[:, :, 0]
    return u, du[0], du[1], du[2]


# --- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, lr: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr, **kw)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and moment lists differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter {params[i].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in parameter {i} ({bad} entries)")
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return replace(state, m=new_m, v=new_v, step=step), new_p


# --- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"NFCKPT1\0"
_CKPT_HEAD = struct.Struct("<8s5I2dQ")


def write_checkpoint(path, field_: NeuralField) -> None:
    """Header (magic, m_x, m_t, hidden layers, width, d_out, sigmas, seed) then
    Bx, Bt and each layer's W, b as little-endian doubles."""
    a = field_.arch
    head = _CKPT_HEAD.pack(CKPT_MAGIC, a.m_x, a.m_t, a.n_hidden, a.width, a.d_out,
                           a.sigma_x, a.sigma_t, int(field_.seed))
    blobs = [field_.embedding.Bx, field_.embedding.Bt] + field_.arrays()
    with open(path, "wb") as fh:
        fh.write(head)
        for arr in blobs:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> NeuralField:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise ValueError("checkpoint truncated")
    magic, m_x, m_t, n_hidden, width, d_out, sx, st, seed = _CKPT_HEAD.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise ValueError("not a neural-field checkpoint")
    arch = FieldArch(m_x, m_t, sx, st, n_hidden, width, d_out)
    sizes = [arch.embed_dim] + [width] * n_hidden + [d_out]
    shapes = [(m_x, 2), (m_t, 1)]
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_out, fan_in), (fan_out,)]
    expected = _CKPT_HEAD.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise ValueError(f"checkpoint has {len(raw)} bytes, header implies {expected}")
    arrays, off = [], _CKPT_HEAD.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(s).astype(np.float64))
        off += 8 * n
    emb = FourierEmbedding(arrays[0], arrays[1])
    return NeuralField(emb, MlpParams.from_arrays(arrays[2:]), arch, seed)
