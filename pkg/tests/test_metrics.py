import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynct.core import CasoratiImage, ImageGrid, TimeAxis
from dynct.metrics import frame_psnr, psnr, temporal_std


def _ref(seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (5, 16))


def test_identical_inputs_give_infinity():
    r = _ref()
    assert psnr(r, r) == math.inf


def test_constant_offset_twenty_db():
    r = _ref()
    assert psnr(r + 0.1, r, peak=1.0) == pytest.approx(20.0, abs=1e-12)


def test_thirty_db():
    r = _ref()
    x = r + np.sqrt(1e-3) * np.where(np.arange(r.size).reshape(r.shape) % 2, 1.0, -1.0)
    assert psnr(x, r, peak=1.0) == pytest.approx(30.0, abs=1e-10)


def test_default_peak_is_reference_max():
    r = _ref() * 2.0
    x = r + 0.05
    assert psnr(x, r) == pytest.approx(10 * math.log10(r.max() ** 2 / 0.0025))


def test_accepts_casorati_images():
    grid, ta = ImageGrid.square(4), TimeAxis(5, 1.0)
    r = CasoratiImage(_ref(), grid, ta)
    assert psnr(CasoratiImage(_ref() + 0.1, grid, ta), r, 1.0) == pytest.approx(20.0)


def test_shape_mismatch_and_bad_peak():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        psnr(np.ones(3), np.ones(3), peak=0.0)


@given(st.integers(0, 1000))
@settings(max_examples=30)
def test_symmetric_for_fixed_peak(seed):
    a, b = _ref(seed), _ref(seed + 1)
    assert psnr(a, b, 1.0) == psnr(b, a, 1.0)


def test_strictly_decreasing_in_noise_level():
    r = _ref()
    noise = np.random.default_rng(9).standard_normal(r.shape)
    values = [psnr(r + s * noise, r, 1.0) for s in (0.01, 0.02, 0.05, 0.1, 0.3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_per_frame_mean():
    r = _ref()
    x = r.copy()
    x[0] += 0.1
    x[1:] += 0.01
    per = frame_psnr(x, r, 1.0)
    np.testing.assert_allclose(per, [20.0, 40.0, 40.0, 40.0, 40.0])
    assert psnr(x, r, 1.0, per_frame=True) == pytest.approx(36.0)


def test_temporal_std():
    assert temporal_std(np.tile(_ref()[0], (4, 1))) == 0.0
    x = np.array([[0.0, 1.0], [2.0, 1.0]])
    assert temporal_std(x) == pytest.approx(0.5)
