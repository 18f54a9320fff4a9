import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dynct.core import GEOMETRY_PRESETS, CasoratiImage, ImageGrid, Sinogram, TimeAxis
from dynct.io import (
    FormatError,
    dequantize,
    export_frames,
    fingerprint,
    quantize,
    read_config,
    read_manifest,
    read_pgm,
    read_sinogram,
    read_volume,
    sinogram_nbytes,
    write_manifest,
    write_pgm,
    write_sinogram,
    write_volume,
)
from dynct.phantoms import pool_average


def _sinogram(M=6, nt=4, seed=0):
    rng = np.random.default_rng(seed)
    geo = GEOMETRY_PRESETS["two-square"].with_sensors(M)
    return Sinogram(rng.standard_normal((M, nt)), rng.uniform(0, 6, nt), TimeAxis(nt, 1.0).times, geo)


def _volume(n=8, nt=3, seed=0):
    rng = np.random.default_rng(seed)
    return CasoratiImage(rng.standard_normal((nt, n * n)), ImageGrid.square(n), TimeAxis(nt, 2.0))


def test_sinogram_round_trip_bit_exact(tmp_path):
    s = _sinogram()
    write_sinogram(tmp_path / "s.bin", s)
    back = read_sinogram(tmp_path / "s.bin")
    assert back.data.tobytes() == s.data.tobytes()
    assert back.angles.tobytes() == s.angles.tobytes()
    assert back.times.tobytes() == s.times.tobytes()
    assert back.geometry == s.geometry


def test_sinogram_header_layout(tmp_path):
    s = _sinogram(M=3, nt=2)
    write_sinogram(tmp_path / "s.bin", s)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"DYNSIN1\0"
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 2
    assert np.frombuffer(raw[16:40], "<f8").tolist() == [s.geometry.dso, s.geometry.dsd, s.geometry.detector_width]


def test_paper_sized_sinogram_file(tmp_path):
    # 8 + 4 + 4 + 3*8 + 100*8 + 100*8 + 64*100*8
    assert sinogram_nbytes(64, 100) == 52_840
    s = _sinogram(M=64, nt=100)
    write_sinogram(tmp_path / "s.bin", s)
    assert (tmp_path / "s.bin").stat().st_size == 52_840


def test_sinogram_bad_magic(tmp_path):
    write_sinogram(tmp_path / "s.bin", _sinogram())
    raw = bytearray((tmp_path / "s.bin").read_bytes())
    raw[0:1] = b"X"
    (tmp_path / "s.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        read_sinogram(tmp_path / "s.bin")


@pytest.mark.parametrize("cut", [1, 8, 30, 100])
def test_sinogram_truncation_rejected(tmp_path, cut):
    write_sinogram(tmp_path / "s.bin", _sinogram())
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "s.bin").write_bytes(raw[:-cut])
    with pytest.raises(FormatError):
        read_sinogram(tmp_path / "s.bin")


def test_sinogram_trailing_bytes_rejected(tmp_path):
    write_sinogram(tmp_path / "s.bin", _sinogram())
    with open(tmp_path / "s.bin", "ab") as fh:
        fh.write(b"\0" * 8)
    with pytest.raises(FormatError):
        read_sinogram(tmp_path / "s.bin")


def test_sinogram_non_finite_rejected(tmp_path):
    s = _sinogram()
    write_sinogram(tmp_path / "s.bin", s)
    raw = bytearray((tmp_path / "s.bin").read_bytes())
    raw[-8:] = np.array([np.nan], "<f8").tobytes()
    (tmp_path / "s.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="non-finite"):
        read_sinogram(tmp_path / "s.bin")


def test_volume_round_trip(tmp_path):
    v = _volume()
    write_volume(tmp_path / "v.vol", v)
    back = read_volume(tmp_path / "v.vol")
    assert back.values.tobytes() == v.values.tobytes()
    assert back.grid == v.grid and back.time_axis == v.time_axis


def test_volume_header_mismatch(tmp_path):
    write_volume(tmp_path / "v.vol", _volume())
    raw = bytearray((tmp_path / "v.vol").read_bytes())
    raw[16:20] = (4).to_bytes(4, "little")  # claim 4 frames instead of 3
    (tmp_path / "v.vol").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="payload"):
        read_volume(tmp_path / "v.vol")


def test_volume_bad_magic(tmp_path):
    write_volume(tmp_path / "v.vol", _volume())
    raw = (tmp_path / "v.vol").read_bytes()
    (tmp_path / "v.vol").write_bytes(b"DYNSIN1\0" + raw[8:])
    with pytest.raises(FormatError):
        read_volume(tmp_path / "v.vol")


@given(arrays(np.float64, (2, 16), elements=st.floats(-1e6, 1e6)))
@settings(max_examples=25, deadline=None)
def test_pool_average_transparent_through_volume_files(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("vol") / "x.vol"
    vol = CasoratiImage(values, ImageGrid.square(4), TimeAxis(2, 1.0))
    write_volume(path, vol)
    back = read_volume(path)
    np.testing.assert_array_equal(pool_average(back.frames, 2), pool_average(vol.frames, 2))


# --- PGM export ------------------------------------------------------------------------

def test_midpoint_quantization():
    assert quantize(np.array([0.5]), (0.0, 1.0))[0] == 32768


def test_out_of_window_values_clamp():
    q = quantize(np.array([-3.0, 0.0, 1.0, 7.0]), (0.0, 1.0))
    assert q.tolist() == [0, 0, 65535, 65535]


@given(arrays(np.float64, 50, elements=st.floats(0, 1)), st.floats(-5, 5), st.floats(0.01, 10))
@settings(max_examples=50)
def test_quantization_error_bound(s, lo, width):
    hi = lo + width
    x = lo + s * width
    err = np.abs(dequantize(quantize(x, (lo, hi)), (lo, hi)) - x)
    assert err.max() <= width / 2 ** 16 * (1 + 1e-9)


def test_pgm_round_trip(tmp_path):
    levels = np.random.default_rng(0).integers(0, 65536, (5, 7)).astype(np.uint16)
    write_pgm(tmp_path / "a.pgm", levels)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n7 5\n65535\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), levels)


def test_export_frames(tmp_path):
    grid, ta = ImageGrid.square(4), TimeAxis(3, 1.0)
    values = np.full((3, 16), 0.5)
    values[1, 0] = 2.0  # pixel (ix=0, iy=0) is the bottom-left corner
    paths = export_frames(CasoratiImage(values, grid, ta), tmp_path / "png", window=(0.0, 1.0))
    assert [p.name for p in paths] == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"]
    img = read_pgm(paths[1])
    assert img[-1, 0] == 65535  # +y up: the bottom image row holds iy = 0
    assert np.all(np.delete(img.ravel(), 12) == 32768)
    with open(tmp_path / "png" / "frames.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["max"]) for r in rows] == [0.5, 2.0, 0.5]
    assert rows[0].keys() == {"frame", "time", "min", "max", "window_lo", "window_hi"}


def test_export_auto_window(tmp_path):
    vol = CasoratiImage(np.linspace(-1, 3, 2 * 16).reshape(2, 16), ImageGrid.square(4), TimeAxis(2, 1.0))
    paths = export_frames(vol, tmp_path)
    assert read_pgm(paths[0]).min() == 0 and read_pgm(paths[1]).max() == 65535


# --- manifests ----------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    cfg = {"seed": 7, "gamma": 0.01, "phantom": "two-square"}
    fp = write_manifest(tmp_path / "m.ini", "simulate", cfg, {"sinogram.bin": "abc"})
    command, back, outputs = read_manifest(tmp_path / "m.ini")
    assert command == "simulate"
    assert back == {k: str(v) for k, v in cfg.items()}
    assert outputs == {"sinogram.bin": "abc"}
    assert fp == fingerprint({"command": "simulate", **back})


def test_fingerprint_ignores_key_order():
    assert fingerprint({"a": 1, "b": 2}) == fingerprint({"b": 2, "a": 1})
    assert fingerprint({"a": 1}) != fingerprint({"a": 2})


def test_config_file_flattens_sections(tmp_path):
    (tmp_path / "c.ini").write_text("[sim]\nseed = 3\n[nf]\ngamma = 0.01\n")
    assert read_config(tmp_path / "c.ini") == {"seed": "3", "gamma": "0.01"}
