import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylcalc.geometry import (GridError, build_grid, eta, limit_section, partition_for_grid,
                              rho, smooth_step, translate_section, vertical_line, Submanifold)

from conftest import windowed


def test_build_grid_example():
    g = build_grid(n_x=8, L_circ=2 * np.pi, n_t=64, t_extent=16, R_inv=4, margin=4)
    assert g.h_x == pytest.approx(np.pi / 4)
    assert g.h_t == pytest.approx(0.5)
    assert g.size == 512


def test_build_grid_rejects():
    with pytest.raises(GridError):
        build_grid(n_x=7)
    with pytest.raises(GridError):
        build_grid(t_extent=16, R_inv=8, margin=8)


def test_product_distance(grid):
    assert grid.dist((0, 0), (0, 3)) == pytest.approx(3)
    assert grid.dist((0, 0), (np.pi, 0)) == pytest.approx(np.pi)
    assert grid.dist((0.1, 0), (2 * np.pi - 0.1, 0)) == pytest.approx(0.2)
    assert grid.dist((0, 0), (np.pi / 2, 2)) == pytest.approx(np.hypot(np.pi / 2, 2))


def test_cutoffs():
    t = np.linspace(-10, 10, 2001)
    e = eta(t)
    assert np.all(e[t <= -2] == 1.0) and np.all(e[t >= -1] == 0.0)
    assert np.all(np.diff(e) <= 1e-15)
    s = smooth_step(np.linspace(-1, 2, 301))
    assert s[0] == 1.0 and s[-1] == 0.0 and np.all(np.diff(s) <= 0)
    # rho = t where eta is supported on the left end
    assert np.allclose(np.abs(rho(t[t <= -2])), np.abs(t[t <= -2]))


def test_translate_identity_and_group_law(grid):
    u = windowed(grid, center=0.0, width=2.0, k=1, tau=0.7)
    assert np.array_equal(translate_section(u, 0.0, grid), u)
    v = translate_section(translate_section(u, -2.0, grid), 2.0, grid)
    assert np.allclose(v, u, atol=0, rtol=0)


def test_translate_moves_bump(grid):
    u = windowed(grid, center=-10.0, width=1.0)
    v = translate_section(u, 2.0, grid)
    ref = windowed(grid, center=-12.0, width=1.0)
    assert np.max(np.abs(v - ref)) < 1e-12


def test_translate_support_violation(grid):
    u = np.ones((grid.n_t, grid.n_x))
    with pytest.raises(GridError):
        translate_section(u, 1.0, grid)
    with pytest.raises(GridError):
        translate_section(windowed(grid), 0.1, grid)  # not a multiple of h_t


@settings(max_examples=25, deadline=None)
@given(steps=st.integers(-16, 16), center=st.floats(-4, 4), k=st.integers(-3, 3))
def test_translation_unitary(steps, center, k):
    g = build_grid()
    u = windowed(g, center=center, width=2.0, k=k, tau=0.3)
    v = translate_section(u, steps * g.h_t, g)
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(u), rel=1e-13)


def test_limit_section(grid):
    ones = np.ones((grid.n_t, grid.n_x))
    assert np.all(limit_section(ones, "right", 8, grid) == 1)
    E = np.broadcast_to(eta(grid.t)[:, None], (grid.n_t, grid.n_x))
    assert np.all(limit_section(E, "left", 2, grid) == 1)
    assert np.all(limit_section(E, "right", 2, grid) == 0)
    bump = windowed(grid, width=1.0)
    bump[np.abs(grid.t) > 8] = 0
    assert np.all(limit_section(bump, "left", 8, grid) == 0)
    with pytest.raises(GridError):
        limit_section(windowed(grid, width=30.0), "left", 8, grid)


def test_partition_completeness(grid):
    P = partition_for_grid(grid)
    t = np.linspace(grid.t_min, grid.t_max, 5001)
    tot = sum(P.all_sq(t))
    assert np.max(np.abs(tot - 1)) <= 1e-12
    # interior bands are translates of one another
    b1 = P.band_sq(t, "right", 2)
    b2 = P.band_sq(t + 1.0, "right", 3)
    assert np.max(np.abs(b1 - b2)) < 1e-14


def test_submanifold(grid):
    N = vertical_line(grid, site=3)
    assert N.points_inf.tolist() == [3]
    assert N.is_straight()
    sites = np.full((grid.n_t, 1), 3)
    mid = np.abs(grid.t) < 2
    sites[mid, 0] = 4
    Nb = Submanifold(grid, sites, (1.0, 0.0))
    assert not Nb.is_straight()
    bad = sites.copy()
    bad[0, 0] = 5
    with pytest.raises(GridError):
        Submanifold(grid, bad, (1.0, 0.0))
