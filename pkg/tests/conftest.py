import numpy as np
import pytest
from hypothesis import settings

from cylcalc.geometry import build_grid


@pytest.fixture(scope="session")
def grid():
    """Default grid: n_x=16, t in [-32, 32), h_t=0.25, R_inv=8."""
    return build_grid()


@pytest.fixture(scope="session")
def small():
    """Cheap grid (N=512) for algebraic identities."""
    return build_grid(n_x=8, n_t=64, t_extent=16, R_inv=4, margin=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def windowed(grid, center=0.0, width=3.0, k=0, tau=0.0):
    """Plane wave under a smooth window supported in ``|t - center| < width``."""
    from cylcalc.geometry import smooth_step

    X, T = grid.mesh()
    return smooth_step(np.abs(T - center) / width) * np.exp(1j * (k * X + tau * T))


settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")
