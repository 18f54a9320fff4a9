"""Shared setup for the experiment scripts."""

import numpy as np

from dynct.core import GEOMETRY_PRESETS, ImageGrid, SamplingSchedule, TimeAxis
from dynct.phantoms import PHANTOMS, simulate
from dynct.presets import get_preset


def simulate_preset(preset: str = "desk", phantom: str = "two-square", seed: int = 0):
    """Simulate the preset's instance with the CLI's seed convention (angles s, noise s+1)."""
    pre = get_preset(preset, phantom)
    sp = pre.simulation
    ph = PHANTOMS[phantom]()
    grid = ImageGrid.square(sp.grid_n)
    ta = TimeAxis(sp.n_frames, ph.t_final)
    geo = GEOMETRY_PRESETS[phantom].with_sensors(sp.n_sensors)
    schedule = SamplingSchedule(sp.sampling, np.deg2rad(sp.delta_deg), seed=seed)
    sim = simulate(ph, geo, schedule, ta, sp.noise_std, seed=seed + 1, hi_res=sp.hi_res, recon_grid=grid)
    return pre, grid, ta, sim
