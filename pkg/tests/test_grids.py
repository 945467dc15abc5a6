import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cavityqc.grids import (
    AxisGrid,
    GridError,
    GridPerformanceWarning,
    GridSupportWarning,
    ProductGrid,
    build_product_grid,
    derivative_matrix,
    fast_size,
    fock_ladder,
    ho_eigenfunction_on_grid,
    rescaled_cavity_axis,
    second_derivative_matrix,
)


@given(st.integers(1, 5000))
def test_fast_size_is_even_5_smooth_and_minimal(n):
    m = fast_size(n)
    assert m >= max(n, 8) and m % 2 == 0
    r = m
    for f in (2, 3, 5):
        while r % f == 0:
            r //= f
    assert r == 1
    start = max(n, 8)
    for k in range(start + start % 2, m, 2):
        r = k
        for f in (2, 3, 5):
            while r % f == 0:
                r //= f
        assert r != 1


def test_axis_geometry():
    ax = AxisGrid.centered(5.0, 40)
    assert ax.dx == pytest.approx(0.25)
    assert ax.points[0] == -5.0 and ax.points[-1] == pytest.approx(4.75)
    assert ax.is_symmetric()
    x = ax.points
    # x_min is its own mirror image modulo the period
    assert np.allclose(x[ax.mirror_index()][1:], -x[1:])
    assert ax.mirror_index()[0] == 0
    p = ax.momenta(1.0)
    assert np.min(p) == pytest.approx(-math.pi / ax.dx)
    assert ax.refined().dx == pytest.approx(ax.dx / 2)
    ext = ax.extended()
    assert ext.dx == pytest.approx(ax.dx) and ext.length == pytest.approx(2 * ax.length)


@pytest.mark.parametrize("args", [(1.0, 0.0, 16), (0.0, 1.0, 4), (0.0, float("inf"), 16),
                                  (0.0, 1.0, 16, "z")])
def test_axis_rejects(args):
    with pytest.raises(GridError):
        AxisGrid(*args)


def test_slow_size_warns():
    with pytest.warns(GridPerformanceWarning):
        AxisGrid(0.0, 1.0, 14)


def test_asymmetric_axis_has_no_mirror():
    ax = AxisGrid(-1.0, 2.0, 16)
    assert not ax.is_symmetric()
    with pytest.raises(GridError):
        ax.mirror_index()


@given(k=st.integers(1, 7), phase=st.floats(0, 2 * math.pi))
def test_spectral_derivatives_exact_for_resolved_modes(k, phase):
    ax = AxisGrid(0.0, 2 * math.pi, 32)
    f = np.sin(k * ax.points + phase)
    assert np.allclose(derivative_matrix(ax) @ f, k * np.cos(k * ax.points + phase), atol=1e-11)
    assert np.allclose(second_derivative_matrix(ax) @ f, -k * k * f, atol=1e-10)


def test_derivative_matrix_antisymmetric():
    d = derivative_matrix(AxisGrid.centered(3.0, 24))
    assert np.allclose(d, -d.T, atol=1e-13)


def test_product_grid():
    g = build_product_grid((-4, 4, 32), {"x_min": -6, "x_max": 6, "n": 24})
    assert isinstance(g, ProductGrid)
    assert g.shape == (32, 24) and g.size == 768
    assert g.cell == pytest.approx(0.25 * 0.5)
    X, C = g.mesh()
    assert X.shape == g.shape and np.all(C[0] == g.cavity.points)
    with pytest.raises(GridError):
        build_product_grid(AxisGrid(-1, 1, 16, "q"), (-1, 1, 16))


def test_rescaled_axis():
    ax = rescaled_cavity_axis(48, 1.0)
    assert ax.label == "Q" and ax.x_max == pytest.approx(8 * math.sqrt(0.5))
    with pytest.raises(GridError):
        rescaled_cavity_axis(48, 1.0, n_sigma=4)


@given(mass=st.floats(0.3, 3.0), freq=st.floats(0.3, 3.0))
def test_oscillator_states_orthonormal(mass, freq):
    ax = AxisGrid.centered(14.0 / math.sqrt(mass * freq), 256)
    phi = np.array([ho_eigenfunction_on_grid(n, ax, mass, freq, 1.0) for n in range(6)])
    gram = phi @ phi.T * ax.dx
    assert np.allclose(gram, np.eye(6), atol=1e-10)
    # H phi_n = (n + 1/2) freq phi_n
    h = -second_derivative_matrix(ax) / (2 * mass) + np.diag(0.5 * mass * freq**2 * ax.points**2)
    for n in range(6):
        assert np.allclose(h @ phi[n], (n + 0.5) * freq * phi[n], atol=1e-8)


def test_oscillator_off_grid_warns():
    with pytest.warns(GridSupportWarning):
        ho_eigenfunction_on_grid(0, AxisGrid.centered(1.0, 16), 1.0, 1.0, 1.0)


def test_fock_ladder_commutator():
    f = fock_ladder(12, 1.3, 0.7)
    comm = f.q @ f.wp - f.wp @ f.q
    assert np.allclose(comm[:-1, :-1], 1j * 0.7 * np.eye(11), atol=1e-12)
    assert np.allclose(np.diag(f.number).real, np.arange(12))
    with pytest.raises(GridError):
        fock_ladder(1, 1.0, 1.0)
