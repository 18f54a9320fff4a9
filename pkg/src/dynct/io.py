"""Binary containers, PGM export and run manifests.

All binary payloads are little-endian IEEE-754 doubles behind an 8-byte magic
and u32 dimension header. Readers reject bad magic, truncated or oversized
payloads and non-finite values.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import CasoratiImage, FanBeamGeometry, ImageGrid, Sinogram, TimeAxis

SIN_MAGIC = b"DYNSIN1\0"
VOL_MAGIC = b"DYNVOL1\0"
_SIN_HEADER = struct.Struct("<8s2I3d")
_VOL_HEADER = struct.Struct("<8s3I5d")   # magic, nx, ny, N_T, extent (4), t_final


class FormatError(ValueError):
    """Raised for malformed binary containers."""


def _le(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _payload(buf: bytes, offset: int, count: int) -> np.ndarray:
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64)


def sinogram_nbytes(n_sensors: int, n_frames: int) -> int:
    return _SIN_HEADER.size + 8 * (2 * n_frames + n_sensors * n_frames)


def write_sinogram(path, sino: Sinogram) -> None:
    """Header, then angles[N_T], times[N_T] and the M x N_T data row-major."""
    g = sino.geometry
    M, nt = sino.data.shape
    with open(path, "wb") as fh:
        fh.write(_SIN_HEADER.pack(SIN_MAGIC, M, nt, g.dso, g.dsd, g.detector_width))
        fh.write(_le(sino.angles))
        fh.write(_le(sino.times))
        fh.write(_le(sino.data))


def read_sinogram(path) -> Sinogram:
    buf = Path(path).read_bytes()
    if len(buf) < _SIN_HEADER.size:
        raise FormatError("truncated sinogram header")
    magic, M, nt, dso, dsd, width = _SIN_HEADER.unpack_from(buf)
    if magic != SIN_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if len(buf) != sinogram_nbytes(M, nt):
        raise FormatError(f"payload size {len(buf)} does not match header ({M} x {nt})")
    off = _SIN_HEADER.size
    angles = _payload(buf, off, nt)
    times = _payload(buf, off + 8 * nt, nt)
    data = _payload(buf, off + 16 * nt, M * nt).reshape(M, nt)
    if not (np.all(np.isfinite(angles)) and np.all(np.isfinite(times)) and np.all(np.isfinite(data))):
        raise FormatError("non-finite payload")
    return Sinogram(data, angles, times, FanBeamGeometry(dso, dsd, width, M))


def write_volume(path, vol: CasoratiImage) -> None:
    g, ta = vol.grid, vol.time_axis
    with open(path, "wb") as fh:
        fh.write(_VOL_HEADER.pack(VOL_MAGIC, g.nx, g.ny, ta.n_frames, *g.extent, ta.t_final))
        fh.write(_le(vol.values))


def read_volume(path) -> CasoratiImage:
    buf = Path(path).read_bytes()
    if len(buf) < _VOL_HEADER.size:
        raise FormatError("truncated volume header")
    magic, nx, ny, nt, x0, x1, y0, y1, t_final = _VOL_HEADER.unpack_from(buf)
    if magic != VOL_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    n = nx * ny * nt
    if len(buf) != _VOL_HEADER.size + 8 * n:
        raise FormatError(f"payload size {len(buf)} does not match header ({nt} x {ny} x {nx})")
    values = _payload(buf, _VOL_HEADER.size, n).reshape(nt, nx * ny)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite payload")
    return CasoratiImage(values, ImageGrid(nx, ny, (x0, x1, y0, y1)), TimeAxis(nt, t_final))


# --- image export ---------------------------------------------------------------

def quantize(values, window) -> np.ndarray:
    """Map [lo, hi] linearly onto 0..65535 with floor(65536 * s), clamped."""
    lo, hi = window
    s = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    return np.clip(np.floor(s * 65536.0), 0, 65535).astype(np.uint16)


def dequantize(levels, window) -> np.ndarray:
    """Centre of each quantization bin."""
    lo, hi = window
    return lo + (np.asarray(levels, dtype=np.float64) + 0.5) / 65536.0 * (hi - lo)


def write_pgm(path, levels: np.ndarray) -> None:
    h, w = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(np.ascontiguousarray(levels, dtype=">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 65535:
        raise FormatError("only 16-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=">u2", count=w * h, offset=pos + 1)
    return data.reshape(h, w).astype(np.uint16)


def export_frames(vol: CasoratiImage, directory, window=None, prefix: str = "frame") -> list[Path]:
    """One 16-bit PGM per frame plus ``frames.csv`` of per-frame min/max.

    ``window`` defaults to the min/max of the whole sequence. Images are
    written with +y pointing up.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    frames = vol.frames
    if window is None:
        lo, hi = float(frames.min()), float(frames.max())
        window = (lo, hi if hi > lo else lo + 1.0)
    paths = []
    digits = max(4, len(str(len(frames))))
    for i, f in enumerate(frames):
        p = out / f"{prefix}_{i:0{digits}d}.pgm"
        write_pgm(p, quantize(f[::-1], window))
        paths.append(p)
    with open(out / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "time", "min", "max", "window_lo", "window_hi"])
        for i, (t, f) in enumerate(zip(vol.time_axis.times, frames)):
            w.writerow([i, repr(float(t)), repr(float(f.min())), repr(float(f.max())), window[0], window[1]])
    return paths


# --- manifests ------------------------------------------------------------------

def fingerprint(config: dict) -> str:
    """sha256 of a canonical JSON rendering of a flat config mapping."""
    canon = json.dumps({str(k): str(v) for k, v in config.items()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command: str, config: dict, outputs: dict | None = None) -> str:
    """Write an INI manifest holding everything needed to replay a run."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["run"] = {"command": command, "fingerprint": fingerprint({"command": command, **config})}
    cp["config"] = {k: str(v) for k, v in config.items()}
    if outputs:
        cp["outputs"] = {k: str(v) for k, v in outputs.items()}
    with open(path, "w", newline="\n") as fh:
        cp.write(fh)
    return cp["run"]["fingerprint"]


def read_manifest(path) -> tuple[str, dict, dict]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    outputs = dict(cp["outputs"]) if cp.has_section("outputs") else {}
    return cp["run"]["command"], dict(cp["config"]), outputs


def read_config(path) -> dict:
    """Flat key=value config; section names are ignored."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise FileNotFoundError(path)
    merged = {}
    for s in cp.sections():
        merged.update(cp[s])
    return merged
