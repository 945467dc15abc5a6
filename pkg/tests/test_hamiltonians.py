import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityqc.gridplan import plan_grid
from cavityqc.grids import AxisGrid, ProductGrid, build_product_grid, ho_eigenfunction_on_grid
from cavityqc.hamiltonians import (
    GAUGES,
    DenseCapError,
    GridSupportError,
    HamiltonianSpec,
    RegimeWarning,
    apply_ma_unitary,
    build,
    build_operator,
    hermiticity_defect,
)
from cavityqc.params import PhysicalParams, dressed_params
from cavityqc.potentials import PotentialModel
from cavityqc.spectra import eigen

HARM = PotentialModel.harmonic(1.0)
DW = PotentialModel.double_well(1.0, 1.0)


def _grid(gauge, eps, pot=HARM, n=6):
    p = PhysicalParams(epsilon=eps)
    return p, plan_grid(gauge, p, pot, n)


def _smooth_field(grid):
    X, C = grid.mesh()
    f = np.exp(-0.5 * (X - 0.3) ** 2 - 0.4 * (C + 0.2) ** 2) * (1 + 0.2j * X * C)
    return f / math.sqrt(np.sum(np.abs(f) ** 2) * grid.cell)


@pytest.mark.parametrize("gauge", GAUGES)
@pytest.mark.parametrize("pot", [HARM, DW], ids=["harmonic", "double_well"])
def test_hermitian(gauge, pot):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        p, g = _grid("AG_rescaled" if gauge == "AG_rescaled" else
                     "semiclassical" if gauge == "semiclassical" else "MG", 0.8, pot)
        op = build_operator(gauge, p, pot, g)
    assert hermiticity_defect(op, 50) < 1e-10


def test_decoupled_ground_energy():
    p, g = _grid("MG", 0.0)
    assert eigen(build_operator("MG", p, HARM, g), 1).eigenvalues[0] == pytest.approx(1.0, abs=1e-10)


def test_zero_coupling_ag_equals_mg():
    p, g = _grid("MG", 0.0, DW)
    mg, ag = build_operator("MG", p, DW, g), build_operator("AG", p, DW, g)
    assert np.array_equal(mg.potential, ag.potential)
    assert np.allclose(mg.kinetic, ag.kinetic, rtol=0, atol=1e-12 * np.max(mg.kinetic))
    assert np.allclose(mg.dense(), ag.dense(), atol=1e-9)


def test_weak_mg_at_zero_coupling_is_bare():
    p, g = _grid("MG", 0.0, DW)
    assert np.allclose(build_operator("MG_weak", p, DW, g).dense(),
                       build_operator("MG", p, DW, g).dense(), atol=1e-12)


def test_variational_bound():
    p, g = _grid("MG", 0.3)
    op = build_operator("MG", p, HARM, g)
    bare = np.multiply.outer(ho_eigenfunction_on_grid(0, g.matter, 1.0, 1.0, 1.0),
                             ho_eigenfunction_on_grid(0, g.cavity, 1.0, 1.0, 1.0))
    assert op.expectation(bare) > eigen(op, 1).eigenvalues[0] + 1e-6


@pytest.mark.parametrize("gauge", ["MG", "AG"])
def test_weak_truncation_residual_is_second_order(gauge):
    grid = build_product_grid(AxisGrid.centered(6.0, 48), AxisGrid.centered(8.0, 48, "q"))
    psi = _smooth_field(grid)
    eps = np.array([1e-3, 1e-2, 1e-1])
    res = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for e in eps:
            p = PhysicalParams(epsilon=e)
            full = build_operator(gauge, p, DW, grid)
            weak = build_operator(gauge + "_weak", p, DW, grid)
            res.append(np.linalg.norm(full.apply(psi) - weak.apply(psi)) * math.sqrt(grid.cell))
    slope = np.polyfit(np.log(eps), np.log(res), 1)[0]
    assert abs(slope - 2.0) < 0.05


def test_ag_weak_coupling_term_parity():
    grid = build_product_grid(AxisGrid.centered(5.0, 32), AxisGrid.centered(6.0, 32, "q"))
    X, Q = grid.mesh()
    even = np.exp(-X**2 - 0.5 * Q**2)
    p = PhysicalParams(epsilon=0.05)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        coupled = build_operator("AG_weak", p, DW, grid)
        bare = build_operator("AG_weak", p.with_epsilon(0.0), DW, grid)
    term = np.real(coupled.apply(even) - bare.apply(even))
    zeta = dressed_params(p).zeta
    assert np.allclose(term, zeta * DW.derivative(X) * Q * even, atol=1e-12)
    mx = grid.matter.mirror_index()
    # row 0 is the periodic seam, its own mirror image
    assert np.allclose(term[mx][1:], -term[1:], atol=1e-12)


def test_weak_builder_warns_outside_weak_regime():
    p, g = _grid("MG", 2.0)
    with pytest.warns(RegimeWarning):
        build_operator("MG_weak", p, HARM, g)


@settings(max_examples=15)
@given(eps=st.floats(0.0, 30.0), w0=st.floats(0.5, 2.0))
def test_semiclassical_harmonic_ground(eps, w0):
    pot = PotentialModel.harmonic(w0)
    p = PhysicalParams(epsilon=eps)
    axis = plan_grid("semiclassical", p, pot, 2)
    e0 = eigen(build_operator("semiclassical", p, pot, axis), 1).eigenvalues[0]
    assert e0 == pytest.approx(0.5 * dressed_params(p).hbar_eff * w0, rel=1e-10)


def test_rescaled_matches_ag():
    p = PhysicalParams(epsilon=1.3)
    e_ag = eigen(build_operator("AG", p, DW, plan_grid("AG", p, DW, 8)), 8).eigenvalues
    e_rs = eigen(build_operator("AG_rescaled", p, DW, plan_grid("AG_rescaled", p, DW, 8)),
                 8).eigenvalues
    assert np.allclose(e_rs, e_ag, rtol=1e-10, atol=0)


# --- MA unitary -----------------------------------------------------------------

def test_unitary_identity_at_zero_coupling():
    p, g = _grid("MG", 0.0)
    f = _smooth_field(g)
    assert np.allclose(apply_ma_unitary(f, p, g), f, atol=1e-14)


@given(eps=st.floats(0.05, 5.0))
def test_unitary_round_trip_and_norm(eps):
    grid = build_product_grid(AxisGrid.centered(12.0, 96), AxisGrid.centered(6.0, 48, "q"))
    p = PhysicalParams(epsilon=eps)
    f = _smooth_field(grid)
    g = apply_ma_unitary(f, p, grid, +1)
    assert np.sum(np.abs(g) ** 2) * grid.cell == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(apply_ma_unitary(g, p, grid, -1) - f)) < 1e-10


@pytest.mark.parametrize("eps", [0.3, 0.7071, 3.0])
def test_conjugated_mg_equals_ag(eps):
    # U^dagger H_MG U psi = H_AG psi with (U psi)(x, q) = psi(x - zeta q, q)
    p = PhysicalParams(epsilon=eps)
    grid = plan_grid("MG", p, DW, 12, extent=1.6)
    grid = ProductGrid(AxisGrid.centered(grid.matter.x_max * 1.5, grid.matter.n * 2),
                       grid.cavity)
    psi = _smooth_field(grid)
    mg, ag = build_operator("MG", p, DW, grid), build_operator("AG", p, DW, grid)
    lhs = apply_ma_unitary(mg.apply(apply_ma_unitary(psi, p, grid, +1)), p, grid, -1)
    rhs = ag.apply(psi)
    assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) < 1e-6


def test_unitary_maps_mg_eigenstates_to_ag():
    p = PhysicalParams(epsilon=0.7)
    grid = plan_grid("MG", p, DW, 4, extent=1.3)
    mg = eigen(build_operator("MG", p, DW, grid), 1)
    ag = eigen(build_operator("AG", p, DW, grid), 1)
    mapped = apply_ma_unitary(mg.eigenvectors[0], p, grid, direction=-1)
    overlap = abs(np.vdot(ag.eigenvectors[0], mapped) * grid.cell)
    assert overlap == pytest.approx(1.0, abs=1e-8)


def test_shear_off_grid_reports_extent():
    grid = build_product_grid(AxisGrid.centered(3.0, 32), AxisGrid.centered(8.0, 32, "q"))
    X, Q = grid.mesh()
    f = np.exp(-(X - 1.5) ** 2 - 0.05 * Q**2)
    with pytest.raises(GridSupportError) as info:
        apply_ma_unitary(f, PhysicalParams(epsilon=0.7071), grid)
    assert info.value.required_extent > 3.0


# --- construction errors --------------------------------------------------------

def test_dense_cap():
    p, g = _grid("MG", 0.2)
    op = build_operator("MG", p, HARM, g, dense_cap=10)
    with pytest.raises(DenseCapError):
        op.dense()


def test_spec_validation():
    p = PhysicalParams(epsilon=0.5)
    g = plan_grid("AG", p, HARM, 4)
    with pytest.raises(ValueError):
        HamiltonianSpec("AG_rescaled", p, HARM, g)
    with pytest.raises(ValueError):
        HamiltonianSpec("semiclassical", p, HARM, g)
    with pytest.raises(ValueError):
        HamiltonianSpec("AG", p, HARM, g, dressed=dressed_params(p.with_epsilon(0.6)))
    with pytest.raises(ValueError):
        HamiltonianSpec("XG", p, HARM, g)
    assert build(HamiltonianSpec("AG", p, HARM, g)).info["spec"].gauge == "AG"


def test_dense_matches_apply():
    p, g = _grid("MG", 0.4, DW, 3)
    op = build_operator("MG", p, DW, g)
    rng = np.random.default_rng(3)
    v = rng.normal(size=op.shape)
    assert np.allclose(op.dense() @ v.ravel(), np.real(op.apply(v)).ravel(), atol=1e-9)
