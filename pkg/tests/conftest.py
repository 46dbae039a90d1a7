import numpy as np
import pytest

from transit_nlos.transients import HiddenScene, TimeAxis, WallGeometry


def single_point_scene(x=0.0, y=0.0, z=1.0, albedo=1.0):
    return HiddenScene(np.array([[x, y, z]]), np.array([albedo]))


def numeric_gradient(fn, values: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(values)
    for i in range(values.size):
        step = h * max(1.0, abs(values[i]))
        plus = values.copy()
        plus[i] += step
        minus = values.copy()
        minus[i] -= step
        grad[i] = (fn(plus) - fn(minus)) / (2.0 * step)
    return grad


@pytest.fixture
def small_wall():
    return WallGeometry(extent=(1.0, 1.0), resolution=(4, 4), detector_origin=(0.0, 0.0, -1.5))


@pytest.fixture
def short_axis():
    return TimeAxis(num_bins=256, bin_width=40e-12)
