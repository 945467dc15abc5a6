import csv
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityqc.classical import well_action
from cavityqc.gridplan import plan_grid
from cavityqc.grids import AxisGrid, build_product_grid
from cavityqc.hamiltonians import build_operator
from cavityqc.params import PhysicalParams, dressed_params
from cavityqc.potentials import PotentialModel
from cavityqc.spectra import (
    NoDoubletError,
    OracleError,
    certify_convergence,
    eigen,
    normal_mode_oracle,
    polariton_splitting,
    solve_certified,
    sub_barrier_doublets,
    tunneling_splitting,
    write_spectrum_csv,
)

HARM = PotentialModel.harmonic(1.0)


def _semiclassical(hbar_eff, pot):
    eps = math.sqrt((1.0 / hbar_eff**2 - 1.0) / 2.0)
    p = PhysicalParams(epsilon=eps)
    return build_operator("semiclassical", p, pot, plan_grid("semiclassical", p, pot, 6))


def test_decoupled_ladder_with_degeneracies():
    p = PhysicalParams(epsilon=0.0)
    res = eigen(build_operator("MG", p, HARM, plan_grid("MG", p, HARM, 10)), 10)
    expected = np.sort([n + k + 1.0 for n in range(5) for k in range(5)])[:10]
    assert np.allclose(res.eigenvalues, expected, atol=1e-9)


@pytest.mark.parametrize("gauge", ["MG", "AG", "AG_rescaled"])
def test_harmonic_matches_normal_mode_ladder(gauge):
    p = PhysicalParams(epsilon=0.3)
    res = eigen(build_operator(gauge, p, HARM, plan_grid(gauge, p, HARM, 10)), 10)
    oracle = normal_mode_oracle(p, 1.0).ladder(10)
    assert np.allclose(res.eigenvalues, oracle, rtol=1e-8, atol=0)
    assert np.all(np.diff(res.eigenvalues) >= 0)
    assert res.converged


def test_krylov_matches_dense():
    p = PhysicalParams(epsilon=0.5)
    grid = build_product_grid(AxisGrid.centered(6.0, 32), AxisGrid.centered(7.0, 32, "q"))
    op = build_operator("AG", p, PotentialModel.double_well(1.0, 1.0), grid)
    dense = eigen(op, 10, method="dense")
    kry = eigen(op, 10, method="krylov", seed=11)
    assert np.allclose(kry.eigenvalues, dense.eigenvalues, rtol=0, atol=1e-9)
    again = eigen(op, 10, method="krylov", seed=11)
    assert np.array_equal(again.eigenvalues, kry.eigenvalues)


@settings(max_examples=25)
@given(w0=st.floats(0.3, 3.0), eps=st.floats(0.0, 5.0))
def test_oracle_invariants(w0, eps):
    p = PhysicalParams(epsilon=eps)
    o = normal_mode_oracle(p, w0)
    assert o.omega_plus >= o.omega_minus > 0
    # det of the MG quadratic form gives (w+ w-)**2 = w0**2 w**2
    assert o.omega_plus * o.omega_minus == pytest.approx(w0 * p.omega, rel=1e-9)
    # trace identity: w+**2 + w-**2 = w0**2 + Omega**2
    d = dressed_params(p)
    assert o.omega_plus**2 + o.omega_minus**2 == pytest.approx(w0**2 + d.Omega**2, rel=1e-9)


def test_oracle_zero_coupling_and_errors():
    o = normal_mode_oracle(PhysicalParams(), 1.7)
    assert (o.omega_plus, o.omega_minus) == pytest.approx((1.7, 1.0))
    with pytest.raises(OracleError):
        normal_mode_oracle(PhysicalParams(), 0.0)


def test_polariton_splitting():
    p0 = PhysicalParams()
    pot = PotentialModel.harmonic(1.4)
    res = eigen(build_operator("MG", p0, pot, plan_grid("MG", p0, pot, 3)), 3)
    assert polariton_splitting(res).value == pytest.approx(0.4, abs=1e-9)
    res = eigen(build_operator("MG", p0, HARM, plan_grid("MG", p0, HARM, 3)), 3)
    with pytest.warns(UserWarning, match="ambiguous"):
        s = polariton_splitting(res)
    assert s.ambiguous and s.value == pytest.approx(0.0, abs=1e-9)
    p = PhysicalParams(epsilon=0.3)
    res = eigen(build_operator("MG", p, HARM, plan_grid("MG", p, HARM, 3)), 3)
    o = normal_mode_oracle(p, 1.0)
    assert polariton_splitting(res).value == pytest.approx(o.omega_plus - o.omega_minus, rel=1e-8)


def test_certification_passes_and_fails():
    p = PhysicalParams(epsilon=0.4)
    pot = PotentialModel.double_well(1.0, 1.0)
    grid = plan_grid("AG", p, pot, 6)
    res = solve_certified(lambda g: build_operator("AG", p, pot, g), grid, 6)
    assert res.certification.passed
    assert res.provenance()["certification"]["max_bound"] < 1e-9
    coarse = build_product_grid(AxisGrid.centered(2.0, 12), AxisGrid.centered(4.0, 12, "q"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bad = eigen(build_operator("AG", p, pot, coarse), 8)
        cert = certify_convergence(lambda g: build_operator("AG", p, pot, g), bad, 6, grid=coarse)
    assert not cert.passed


def test_larger_extent_does_not_raise_levels():
    p = PhysicalParams(epsilon=0.6)
    pot = PotentialModel.double_well(1.0, 1.0)
    g = plan_grid("AG", p, pot, 6)
    e1 = eigen(build_operator("AG", p, pot, g), 6).eigenvalues
    g2 = plan_grid("AG", p, pot, 6, extent=1.25)
    e2 = eigen(build_operator("AG", p, pot, g2), 6).eigenvalues
    assert np.all(e2 <= e1 + 1e-9 * np.abs(e1))


def test_tunneling_methods_agree():
    op = _semiclassical(0.25, PotentialModel.double_well(2.0, 1.0))
    sub = tunneling_splitting(op, "subtract")
    wr = tunneling_splitting(op, "wronskian")
    sh = tunneling_splitting(op, "shooting")
    assert sub.delta > 0
    assert sh.delta == pytest.approx(sub.delta, rel=1e-8)
    # grid eigenvectors carry errors of order 1e-9 * E, large against a small splitting
    assert wr.delta == pytest.approx(sub.delta, rel=1e-4)


def test_shooting_beyond_subtraction_resolution():
    # delta/E ~ 1e-10: subtraction loses digits, the two Wronskian forms do not
    op = _semiclassical(0.1, PotentialModel.double_well(2.0, 1.0))
    sh = tunneling_splitting(op, "shooting")
    wr = tunneling_splitting(op, "wronskian")
    assert sh.delta == pytest.approx(wr.delta, rel=1e-6)
    assert tunneling_splitting(op).method == "shooting"


def test_tunneling_decreases_with_coupling():
    pot = PotentialModel.double_well(2.0, 1.0)
    deltas = [tunneling_splitting(_semiclassical(h, pot)).delta
              for h in (0.5, 0.3, 0.2, 0.12, 0.08)]
    assert all(b < a for a, b in zip(deltas, deltas[1:]))


def test_tunneling_vanishes_for_high_barrier():
    deltas = [tunneling_splitting(_semiclassical(0.2, PotentialModel.double_well(vb, 1.0))).delta
              for vb in (2.0, 4.0, 8.0, 16.0)]
    assert all(b < a for a, b in zip(deltas, deltas[1:]))
    assert deltas[-1] < 1e-12


def test_no_doublet_for_shallow_well():
    p = PhysicalParams(epsilon=0.0)
    pot = PotentialModel.double_well(0.5, 1.0)
    op = build_operator("semiclassical", p, pot, plan_grid("semiclassical", p, pot, 4))
    with pytest.raises(NoDoubletError):
        tunneling_splitting(op)


def test_tunneling_needs_symmetry():
    p = PhysicalParams(epsilon=2.0)
    pot = PotentialModel.polynomial([0.0, 0.2, -1.0, 0.0, 1.0])
    op = build_operator("semiclassical", p, pot, plan_grid("semiclassical", p, pot, 4))
    with pytest.raises(ValueError):
        tunneling_splitting(op)


@pytest.mark.parametrize("hbar_eff", [0.1, 0.05])
def test_doublet_count_tracks_well_area(hbar_eff):
    pot = PotentialModel.double_well(2.0, 1.0)
    eps = math.sqrt((1.0 / hbar_eff**2 - 1.0) / 2.0)
    p = PhysicalParams(epsilon=eps)
    predicted = well_action(pot) / (2 * math.pi * hbar_eff)
    op = build_operator("semiclassical", p, pot,
                        plan_grid("semiclassical", p, pot, int(2 * predicted) + 6))
    assert abs(sub_barrier_doublets(op, pot.barrier) - predicted) <= 1.0


def test_spectrum_csv(tmp_path):
    path = tmp_path / "spectrum.csv"
    write_spectrum_csv(path, [(0.3, 0, 1.25, "MG", 1e-12), (0.3, 1, 2.5, "MG", 2e-12)])
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epsilon", "level_index", "energy", "gauge", "residual"]
    assert rows[1] == ["0.3", "0", "1.25", "MG", "1e-12"]


def test_eigen_rejects_bad_method():
    p = PhysicalParams()
    op = build_operator("semiclassical", p, HARM, plan_grid("semiclassical", p, HARM, 2))
    with pytest.raises(ValueError):
        eigen(op, 2, method="magic")


@pytest.mark.parametrize("pot", [HARM, PotentialModel.double_well(2.0, 1.0)],
                         ids=["harmonic", "double_well"])
def test_strong_coupling_offset_is_cavity_vacuum_smearing(pot):
    # E0 - Omega/2 - E_sc comes from <V(x + xi Q)> over the cavity vacuum,
    # xi**2 hbar <V''> / 4 at second order
    p = PhysicalParams(epsilon=math.sqrt(5000.0))
    d = dressed_params(p)
    grid = plan_grid("AG_rescaled", p, pot, 4)
    e0 = eigen(build_operator("AG_rescaled", p, pot, grid), 2).eigenvalues[0]
    sc = eigen(build_operator("semiclassical", p, pot, grid.matter), 1)
    weight = np.abs(sc.eigenvectors[0]) ** 2 * grid.matter.dx
    smear = d.xi**2 * np.sum(weight * pot.second_derivative(grid.matter.points)) / 4.0
    offset = e0 - 0.5 * d.Omega - sc.eigenvalues[0]
    assert offset == pytest.approx(smear, rel=0.03)


def test_certified_solve_grows_failing_axes():
    p = PhysicalParams(epsilon=0.0)
    short = build_product_grid(AxisGrid.centered(3.0, 16), AxisGrid.centered(6.0, 32, "q"))

    def build(g):
        return build_operator("MG", p, HARM, g)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        once = solve_certified(build, short, 3, max_rounds=0)
        grown = solve_certified(build, short, 3, max_rounds=8)
    assert not once.certification.passed
    assert grown.certification.passed
    assert grown.grid["matter"]["x_max"] > 3.0
    assert np.allclose(grown.eigenvalues[:3], [1.0, 2.0, 2.0], atol=1e-9)
