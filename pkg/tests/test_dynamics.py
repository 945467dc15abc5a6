import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavityqc import classical as cl
from cavityqc import dynamics as dy
from cavityqc.gridplan import plan_grid
from cavityqc.grids import AxisGrid, build_product_grid, ho_eigenfunction_on_grid
from cavityqc.hamiltonians import GridSupportError, apply_ma_unitary, build_operator
from cavityqc.params import PhysicalParams, dressed_params
from cavityqc.potentials import PotentialModel

FREE = PotentialModel.polynomial([0.0])
HARM = PotentialModel.harmonic(1.0)


def _op1d(pot, axis, eps=0.0):
    return build_operator("semiclassical", PhysicalParams(epsilon=eps), pot, axis)


def test_ehrenfest_harmonic_ten_periods():
    axis = AxisGrid.centered(10.0, 128)
    op = _op1d(HARM, axis)
    psi = dy.gaussian_1d(axis, 2.0, 0.0, dy.coherent_width(1.0, 1.0, 1.0), 1.0)
    dt = 2.5e-4
    per = int(round(2 * math.pi / dt / 8))
    n = 80 * per
    rec = dy.propagate(op, psi, dt, n, record_every=per)
    assert rec.times[-1] == pytest.approx(n * dt)
    assert np.max(np.abs(rec.x_mean - 2.0 * np.cos(rec.times))) < 1e-6
    # 2.5e5 steps of rounding
    assert rec.norm_drift() < 1e-10


def test_free_packet_spreads_analytically():
    axis = AxisGrid.centered(30.0, 256)
    op = _op1d(FREE, axis)
    s0 = 0.7
    psi = dy.gaussian_1d(axis, -3.0, 1.2, s0, 1.0)
    rec = dy.propagate(op, psi, 0.01, 400, record_every=40, check_dt=False)
    var = s0**2 * (1.0 + (rec.times / (2.0 * s0**2)) ** 2)
    assert np.allclose(rec.x_var, var, rtol=1e-10)
    assert np.allclose(rec.x_mean, -3.0 + 1.2 * rec.times, atol=1e-10)
    # the kinetic energy of a free packet is conserved exactly by the split step
    assert rec.energy_drift() < 1e-12
    assert rec.survival[0] == pytest.approx(1.0)
    assert np.all(rec.survival[1:] < 1.0)


def test_gauges_agree_on_dynamics():
    p = PhysicalParams(epsilon=0.5)
    d = dressed_params(p)
    grid = build_product_grid(AxisGrid.centered(9.0, 72), AxisGrid.centered(9.0, 64, "q"))
    matter = dy.gaussian_1d(grid.matter, 1.0, 0.3, 0.7, 1.0)
    cavity = ho_eigenfunction_on_grid(0, grid.cavity, 1.0, 1.0, 1.0)
    psi_mg = dy.product_state(matter, cavity, grid).values
    psi_ag = apply_ma_unitary(psi_mg, p, grid, direction=-1)
    mg = build_operator("MG", p, HARM, grid)
    ag = build_operator("AG", p, HARM, grid)
    r_mg = dy.propagate(mg, psi_mg, 2e-3, 1000, record_every=100, check_dt=False)
    r_ag = dy.propagate(ag, psi_ag, 2e-3, 1000, record_every=100, x_shift=d.zeta,
                        check_dt=False)
    assert np.allclose(r_mg.x_mean, r_ag.x_mean, atol=1e-5)
    assert np.allclose(r_mg.x_var, r_ag.x_var, atol=1e-5)
    assert np.allclose(r_mg.energy, r_ag.energy, rtol=1e-8)


def test_norm_conserved_in_2d():
    p = PhysicalParams(epsilon=0.7071)
    pot = PotentialModel.double_well(1.0, 1.0)
    grid = plan_grid("AG", p, pot, 6)
    op = build_operator("AG", p, pot, grid)
    from cavityqc.spectra import eigen
    gs = eigen(op, 2).eigenvectors
    psi = (gs[0] + gs[1]) / math.sqrt(2.0)
    rec = dy.propagate(op, psi, 2e-5, 2000, record_every=500, dressed=dressed_params(p))
    assert rec.norm_drift() < 1e-12
    assert rec.energy_drift() < 1e-9
    assert np.all((rec.cavity_n >= 0) & (rec.cavity_n < 0.5))


def test_initial_state_checks_and_step_warning():
    axis = AxisGrid.centered(10.0, 64)
    op = _op1d(HARM, axis)
    psi = dy.gaussian_1d(axis, 0.0, 0.0, 0.7, 1.0)
    with pytest.raises(ValueError):
        dy.propagate(op, 2.0 * psi, 0.01, 1)
    with pytest.warns(dy.StepSizeWarning):
        dy.propagate(op, psi, 1.0, 1)


def test_edge_tail_aborts():
    axis = AxisGrid.centered(8.0, 128)
    op = _op1d(FREE, axis)
    psi = dy.gaussian_1d(axis, 0.0, 3.0, 0.5, 1.0)
    with pytest.raises(GridSupportError):
        dy.propagate(op, psi, 0.01, 500, record_every=10, check_dt=False)


def test_snapshot_layout_and_round_trip(tmp_path):
    grid = build_product_grid(AxisGrid.centered(4.0, 16), AxisGrid.centered(3.0, 8, "q"))
    rng = np.random.default_rng(0)
    v = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    path = dy.write_snapshot(tmp_path / "psi.bin", v, grid, 1.25)
    with open(path, "rb") as fh:
        raw = fh.read()
    assert raw[:4] == b"CQWF"
    assert struct.unpack_from("<II", raw, 4) == (1, 2)
    assert struct.unpack_from("<2Q", raw, 12) == (16, 8)
    assert struct.unpack_from("<2d", raw, 28) == (0.5, 0.75)
    assert struct.unpack_from("<d", raw, 44) == (1.25,)
    assert len(raw) == 52 + 16 * v.size
    snap = dy.read_snapshot(path)
    assert np.array_equal(snap.values, v)
    assert snap.t == 1.25 and tuple(snap.dx) == (0.5, 0.75)


def test_snapshots_written_during_propagation(tmp_path):
    axis = AxisGrid.centered(10.0, 64)
    op = _op1d(HARM, axis)
    psi = dy.gaussian_1d(axis, 1.0, 0.0, 0.7, 1.0)
    rec = dy.propagate(op, psi, 0.01, 30, record_every=10, snapshot_every=15,
                       snapshot_dir=tmp_path, check_dt=False)
    assert len(rec.snapshots) == 2
    last = dy.read_snapshot(rec.snapshots[-1])
    assert np.allclose(last.values, rec.final.values)
    assert last.t == pytest.approx(0.3)


def test_record_csv(tmp_path):
    axis = AxisGrid.centered(10.0, 64)
    rec = dy.propagate(_op1d(HARM, axis), dy.gaussian_1d(axis, 1.0, 0.0, 0.7, 1.0), 0.01, 20,
                       record_every=5, check_dt=False)
    rec.to_csv(tmp_path / "propagation.csv")
    lines = (tmp_path / "propagation.csv").read_text().splitlines()
    assert lines[0] == "time,norm,energy,x_mean,x_var,survival,cavity_n"
    assert len(lines) == 1 + 5


# --- cavity occupation ------------------------------------------------------------

@pytest.mark.parametrize("label", ["q", "Q"])
@pytest.mark.parametrize("n", [0, 1, 2])
def test_cavity_occupation_of_fock_states(label, n):
    p = PhysicalParams(epsilon=1.3)
    d = dressed_params(p)
    gauge = "AG_rescaled" if label == "Q" else "AG"
    grid = plan_grid(gauge, p, HARM, 6)
    mass, freq = dy.dressed_cavity_oscillator(d, label)
    cav = ho_eigenfunction_on_grid(n, grid.cavity, mass, freq, 1.0)
    matter = dy.gaussian_1d(grid.matter, 0.0, 0.0, 0.5, 1.0)
    field = dy.product_state(matter, cav, grid)
    occ = dy.reduced_cavity_occupation(field, grid, d, 1.0)
    assert occ.mean == pytest.approx(n, abs=1e-9)
    assert occ.captured == pytest.approx(1.0, abs=1e-9)


def test_cavity_occupation_truncation_warns():
    p = PhysicalParams(epsilon=1.3)
    d = dressed_params(p)
    grid = plan_grid("AG", p, HARM, 6)
    mass, freq = dy.dressed_cavity_oscillator(d, "q")
    cav = ho_eigenfunction_on_grid(6, grid.cavity, mass, freq, 1.0)
    field = dy.product_state(dy.gaussian_1d(grid.matter, 0.0, 0.0, 0.5, 1.0), cav, grid)
    with pytest.warns(dy.ProjectionWarning):
        dy.reduced_cavity_occupation(field, grid, d, 1.0, n_max=4)


# --- Husimi ------------------------------------------------------------------------

def test_husimi_of_coherent_state():
    axis = AxisGrid.centered(10.0, 256)
    sigma = 0.6
    psi = dy.gaussian_1d(axis, 1.5, -0.8, sigma, 1.0)
    xs = np.linspace(-4, 6, 201)
    ps = np.linspace(-7.2, 5.6, 257)
    q = dy.husimi(psi, axis, 1.0, xs, ps, sigma)
    i, j = np.unravel_index(np.argmax(q), q.shape)
    assert xs[i] == pytest.approx(1.5, abs=0.06) and ps[j] == pytest.approx(-0.8, abs=0.06)
    assert np.max(q) == pytest.approx(1.0 / (2 * math.pi), rel=1e-3)
    assert dy.husimi_norm(q, xs, ps) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=20)
@given(seed=st.integers(0, 2**31 - 1))
def test_husimi_nonnegative_and_normalized(seed):
    axis = AxisGrid.centered(8.0, 96)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=5) + 1j * rng.normal(size=5)
    psi = sum(ci * ho_eigenfunction_on_grid(n, axis, 1.0, 1.0, 1.0) for n, ci in enumerate(c))
    psi /= math.sqrt(np.sum(np.abs(psi) ** 2) * axis.dx)
    xs = np.linspace(-9, 9, 121)
    ps = np.linspace(-9, 9, 121)
    q = dy.husimi(psi, axis, 1.0, xs, ps, math.sqrt(0.5))
    assert np.all(q >= 0.0)
    assert dy.husimi_norm(q, xs, ps) == pytest.approx(1.0, abs=1e-4)


def test_husimi_of_2d_field_is_reduced_state():
    grid = build_product_grid(AxisGrid.centered(8.0, 64), AxisGrid.centered(6.0, 48, "q"))
    matter = dy.gaussian_1d(grid.matter, 0.5, 0.0, 0.7, 1.0)
    cav = ho_eigenfunction_on_grid(1, grid.cavity, 1.0, 1.0, 1.0)
    field = dy.product_state(matter, cav, grid).values
    xs, ps = np.linspace(-3, 3, 31), np.linspace(-3, 3, 31)
    q2 = dy.husimi(field, grid.matter, 1.0, xs, ps, 0.7, weights=grid.cavity.dx)
    q1 = dy.husimi(matter, grid.matter, 1.0, xs, ps, 0.7)
    assert np.allclose(q2, q1, atol=1e-12)


def test_localized_count_in_harmonic_disc():
    # states below E in a harmonic well: the Husimi mass inside H < E decides
    hbar = 0.1
    axis = AxisGrid.centered(4.0, 128)
    op = build_operator("semiclassical", PhysicalParams(epsilon=math.sqrt((1 / hbar**2 - 1) / 2)),
                        HARM, axis)
    from cavityqc.spectra import eigen
    states = eigen(op, 16).eigenvectors
    xs = np.linspace(-3, 3, 121)
    ps = np.linspace(-3, 3, 121)
    energy = 1.0
    res = dy.husimi_localized_count(states, axis, hbar, lambda X, P: 0.5 * (X**2 + P**2) < energy,
                                    xs, ps, math.sqrt(hbar / 2))
    assert abs(res.count - energy / hbar) <= 1
    assert res.threshold == 0.5 and res.masses.shape == (16,)


# --- spread comparison --------------------------------------------------------------

def test_spread_comparison_cases():
    t = np.linspace(0, 10, 101)
    same = dy.spread_comparison(t, 1 + t, t, 1 + t)
    assert math.isinf(same.divergence_time) and same.interpolation_error == 0.0
    off = dy.spread_comparison(t, (1 + t) * (1 + 0.021 * t), t, 1 + t)
    assert off.divergence_time == pytest.approx(4.8, abs=1e-9)
    tc = np.linspace(0, 10, 1001)
    interp = dy.spread_comparison(t, 1 + t**2, tc, 1 + tc**2)
    assert interp.interpolation_error < 1e-4
    assert np.allclose(interp.classical_var, 1 + t**2, rtol=1e-8)
    with pytest.raises(ValueError):
        dy.spread_comparison(np.linspace(0, 20, 5), np.ones(5), t, np.ones_like(t))


def test_harmonic_wigner_flow_never_diverges():
    # for quadratic V the Wigner function moves classically
    p = PhysicalParams(epsilon=2.0)
    hb = dressed_params(p).hbar_eff
    sigma = math.sqrt(hb / 2) * 1.7
    axis = dy.packet_grid(HARM, 1.0, hb, 1.0, 0.0, sigma)
    op = build_operator("semiclassical", p, HARM, axis)
    res = dy.spread_study(op, cl.ClassicalSystem.from_potential(HARM), 1.0, 0.0, sigma,
                          20000, 3, 10.0)
    assert math.isinf(res.divergence_time)
    assert np.max(res.rel_diff) < 0.05


def test_quartic_quantum_spread_departs():
    pot = PotentialModel.polynomial([0, 0, 0, 0, 1])
    p = PhysicalParams(epsilon=math.sqrt(0.5))
    hb = dressed_params(p).hbar_eff
    sigma = math.sqrt(hb / 2)
    axis = dy.packet_grid(pot, 1.0, hb, 1.0, 0.0, sigma)
    op = build_operator("semiclassical", p, pot, axis)
    res = dy.spread_study(op, cl.ClassicalSystem.from_potential(pot), 1.0, 0.0, sigma,
                          5000, 7, 20.0)
    assert 0 < res.divergence_time < 20.0


def test_packet_grid_holds_packet():
    axis = dy.packet_grid(HARM, 1.0, 0.1, 2.0, 0.5, 0.3)
    psi = dy.gaussian_1d(axis, 2.0, 0.5, 0.3, 0.1)
    assert dy.edge_tail(psi, axis) < 1e-8
    assert axis.is_symmetric()
