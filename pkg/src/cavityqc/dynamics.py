"""Split-operator time propagation and wavepacket observables.

The Strang step is exp(-iT dt/2hbar) exp(-iV dt/hbar) exp(-iT dt/2hbar), with
T applied exactly in (2D) momentum space. Both exact gauges have purely
quadratic momentum parts, so only the T/V splitting contributes error.
"""
from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import CubicSpline

from cavityqc.grids import AxisGrid, ProductGrid, axes_of, cell_of, ho_eigenfunction_on_grid
from cavityqc.hamiltonians import GridOperator, GridSupportError
from cavityqc.params import DressedParams

SNAPSHOT_MAGIC = b"CQWF"
SNAPSHOT_VERSION = 1
EDGE_TAIL_TOL = 1e-8
RECORD_COLUMNS = ("time", "norm", "energy", "x_mean", "x_var", "survival", "cavity_n")


class ProjectionWarning(UserWarning):
    pass


class StepSizeWarning(UserWarning):
    pass


@dataclass
class WaveField:
    """Complex amplitudes on a grid at time ``t``; the norm uses the cell volume."""

    values: np.ndarray
    grid: AxisGrid | ProductGrid
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        shape = tuple(a.n for a in axes_of(self.grid))
        if self.values.shape != shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {shape}")

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * cell_of(self.grid))

    def normalized(self) -> "WaveField":
        return WaveField(self.values / math.sqrt(self.norm), self.grid, self.t)

    def overlap(self, other: "WaveField") -> complex:
        return complex(np.vdot(self.values, other.values) * cell_of(self.grid))


# --- initial states --------------------------------------------------------------

def gaussian_1d(axis: AxisGrid, x0: float, p0: float, sigma: float, hbar: float) -> np.ndarray:
    """Normalized Gaussian with position width ``sigma`` and mean momentum ``p0``."""
    x = axis.points
    g = np.exp(-0.25 * ((x - x0) / sigma) ** 2 + 1j * p0 * (x - x0) / hbar)
    return g / math.sqrt(np.sum(np.abs(g) ** 2) * axis.dx)


def coherent_width(mass: float, freq: float, hbar: float) -> float:
    """Position width of the oscillator ground state, sqrt(hbar/(2 mass freq))."""
    return math.sqrt(hbar / (2.0 * mass * freq))


def local_width(potential, mass: float, hbar: float) -> float:
    """Ground-state width of the harmonic fit at the potential minimum."""
    x0, _ = potential.minimum()
    curv = max(float(potential.second_derivative(x0)), 1e-300)
    return coherent_width(mass, math.sqrt(curv / mass), hbar)


def product_state(matter: np.ndarray, cavity: np.ndarray, grid: ProductGrid) -> WaveField:
    values = np.multiply.outer(matter, cavity)
    return WaveField(values, grid).normalized()


def dressed_cavity_oscillator(dressed: DressedParams, label: str) -> tuple[float, float]:
    """(mass, frequency) of the dressed cavity oscillator on a q or Q axis."""
    if label == "Q":
        # Omega*(P**2 + Q**2)/2 is an oscillator of mass 1/Omega
        return 1.0 / dressed.Omega, dressed.Omega
    return dressed.mu, dressed.Omega


# --- expectation values ----------------------------------------------------------

def position_moments(values: np.ndarray, grid, shift: float = 0.0) -> tuple[float, float]:
    """Mean and variance of x + shift*c (c the cavity coordinate) in |psi|**2."""
    dens = np.abs(values) ** 2
    total = float(np.sum(dens))
    if isinstance(grid, AxisGrid):
        coord = grid.points
    else:
        X, C = grid.mesh()
        coord = X + shift * C
    mean = float(np.sum(dens * coord) / total)
    var = float(np.sum(dens * (coord - mean) ** 2) / total)
    return mean, var


def edge_tail(values: np.ndarray, grid, width: int | None = None) -> float:
    """Largest probability found in the outer ``width`` points of any axis."""
    dens = np.abs(values) ** 2
    total = float(np.sum(dens))
    worst = 0.0
    for k, ax in enumerate(axes_of(grid)):
        w = width or max(2, ax.n // 32)
        moved = np.moveaxis(dens, k, 0)
        worst = max(worst, float(np.sum(moved[:w]) + np.sum(moved[-w:])) / total)
    return worst


@dataclass
class CavityOccupation:
    mean: float
    captured: float
    populations: np.ndarray


def reduced_cavity_occupation(field, grid: ProductGrid, dressed: DressedParams, hbar: float,
                              n_max: int = 40, completeness_tol: float = 1e-8
                              ) -> CavityOccupation:
    """<n> of the cavity factor in the dressed oscillator basis.

    The field should be in an acceleration-gauge frame (x*q or x*Q), where the
    dressed oscillator is the free cavity Hamiltonian.
    """
    values = np.asarray(getattr(field, "values", field))
    cav = grid.cavity
    mass, freq = dressed_cavity_oscillator(dressed, cav.label)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        basis = np.array([ho_eigenfunction_on_grid(n, cav, mass, freq, hbar)
                          for n in range(n_max)])
    coeffs = values @ basis.T * cav.dx
    pops = np.sum(np.abs(coeffs) ** 2, axis=0) * grid.matter.dx
    norm = float(np.sum(np.abs(values) ** 2) * grid.cell)
    pops = pops / norm
    captured = float(np.sum(pops))
    if captured < 1.0 - completeness_tol:
        warnings.warn(f"dressed-oscillator projection captures only {captured:.10f} of the norm",
                      ProjectionWarning, stacklevel=2)
    return CavityOccupation(float(np.dot(np.arange(n_max), pops)), captured, pops)


# --- propagation -----------------------------------------------------------------

@dataclass
class PropagationRecord:
    times: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    x_mean: np.ndarray
    x_var: np.ndarray
    survival: np.ndarray
    cavity_n: np.ndarray
    snapshots: list = field(default_factory=list)
    final: WaveField | None = None

    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))

    def norm_drift(self) -> float:
        return float(np.max(np.abs(self.norm - self.norm[0])))

    def rows(self):
        cols = [getattr(self, "times")] + [getattr(self, c) for c in RECORD_COLUMNS[1:]]
        return zip(*cols)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def _kinetic_phase(op: GridOperator, dt: float) -> np.ndarray:
    return np.exp(-0.5j * dt * op.kinetic / op.hbar)


def _run(psi, n, half_kin, full_kin, pot_phase, ax):
    """``n`` Strang steps with the inner kinetic half steps fused."""
    if n == 0:
        return psi
    psi = sfft.ifftn(half_kin * sfft.fftn(psi, axes=ax), axes=ax)
    for i in range(n):
        psi *= pot_phase
        kin = half_kin if i == n - 1 else full_kin
        psi = sfft.ifftn(kin * sfft.fftn(psi, axes=ax, overwrite_x=True), axes=ax,
                         overwrite_x=True)
    return psi


def propagate(op: GridOperator, psi0, dt: float, n_steps: int, record_every: int = 1,
              dressed: DressedParams | None = None, x_shift: float = 0.0,
              snapshot_every: int | None = None, snapshot_dir=None,
              tail_tol: float = EDGE_TAIL_TOL, check_dt: bool = True) -> PropagationRecord:
    """Strang split-operator propagation of ``psi0`` under ``op``.

    Observables are recorded every ``record_every`` steps; ``x_mean``/``x_var``
    refer to x + x_shift*c. ``cavity_n`` needs ``dressed`` (NaN otherwise).
    Aborts with GridSupportError once more than ``tail_tol`` of the norm sits
    at the grid edges.
    """
    if n_steps < 0 or record_every < 1:
        raise ValueError("n_steps must be >= 0 and record_every >= 1")
    grid = op.grid
    vals = np.array(getattr(psi0, "values", psi0), dtype=complex)
    t0 = float(getattr(psi0, "t", 0.0))
    cell = op.cell
    n0 = float(np.sum(np.abs(vals) ** 2) * cell)
    if abs(n0 - 1.0) > 1e-10:
        raise ValueError(f"initial state is not normalized (norm {n0:.12f})")
    if check_dt:
        e_max = float(np.ptp(op.kinetic) + np.ptp(op.potential))
        if dt * e_max / op.hbar >= 0.5:
            warnings.warn(f"dt*E_max/hbar = {dt * e_max / op.hbar:.3g} >= 0.5; the split-operator "
                          "error bounds do not apply", StepSizeWarning, stacklevel=2)
    ref = vals.copy()
    ax = tuple(range(vals.ndim))
    half_kin = _kinetic_phase(op, dt)
    full_kin = half_kin * half_kin
    pot_phase = np.exp(-1j * dt * op.potential / op.hbar)
    rows = []
    snaps = []

    def record(t, psi):
        tail = edge_tail(psi, grid)
        if tail > tail_tol:
            raise GridSupportError(
                f"t={t:.6g}: {tail:.3e} of the norm reached the grid edge (limit {tail_tol:.1e}); "
                "enlarge the grid or shorten the run")
        norm = float(np.sum(np.abs(psi) ** 2) * cell)
        energy = float(np.real(np.vdot(psi, op.apply(psi))) * cell / norm)
        mean, var = position_moments(psi, grid, x_shift)
        surv = float(abs(np.vdot(ref, psi) * cell) ** 2)
        if dressed is not None and isinstance(grid, ProductGrid):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ProjectionWarning)
                occ = reduced_cavity_occupation(psi, grid, dressed, op.hbar).mean
        else:
            occ = float("nan")
        rows.append((t, norm, energy, mean, var, surv, occ))

    psi = vals
    record(t0, psi)
    stops = sorted({s for s in range(record_every, n_steps + 1, record_every)} | {n_steps}
                   | ({s for s in range(snapshot_every, n_steps + 1, snapshot_every)}
                      if snapshot_every and snapshot_dir is not None else set()))
    done = 0
    for stop in stops:
        if stop == 0:
            continue
        psi = _run(psi, stop - done, half_kin, full_kin, pot_phase, ax)
        done = stop
        t = t0 + stop * dt
        if stop % record_every == 0 or stop == n_steps:
            record(t, psi)
        if snapshot_every and snapshot_dir is not None and stop % snapshot_every == 0:
            snaps.append(write_snapshot(f"{snapshot_dir}/psi_{stop:08d}.bin", psi, grid, t))
    arr = np.array(rows, dtype=float).T
    return PropagationRecord(*arr, snapshots=snaps, final=WaveField(psi, grid, t0 + n_steps * dt))


def evolve(op: GridOperator, psi, dt: float, n_steps: int) -> np.ndarray:
    """Bare Strang evolution without diagnostics."""
    psi = np.array(psi, dtype=complex)
    half_kin = _kinetic_phase(op, dt)
    pot_phase = np.exp(-1j * dt * op.potential / op.hbar)
    return _run(psi, n_steps, half_kin, half_kin * half_kin, pot_phase, tuple(range(psi.ndim)))


# --- snapshots -------------------------------------------------------------------

def write_snapshot(path, values: np.ndarray, grid, t: float) -> str:
    """Binary snapshot: magic, version, ndim, dims, dx per axis, t, then
    row-major interleaved (re, im) float64, all little endian."""
    values = np.ascontiguousarray(values, dtype=np.complex128)
    axes = axes_of(grid)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(axes)))
        fh.write(struct.pack(f"<{len(axes)}Q", *[a.n for a in axes]))
        fh.write(struct.pack(f"<{len(axes)}d", *[a.dx for a in axes]))
        fh.write(struct.pack("<d", float(t)))
        fh.write(values.astype("<c16").tobytes())
    return str(path)


@dataclass(frozen=True)
class Snapshot:
    values: np.ndarray
    dx: tuple
    t: float


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a wavefield snapshot")
    version, ndim = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = 12
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    dx = struct.unpack_from(f"<{ndim}d", data, off)
    off += 8 * ndim
    (t,) = struct.unpack_from("<d", data, off)
    off += 8
    values = np.frombuffer(data, dtype="<c16", offset=off).reshape(dims).astype(complex)
    return Snapshot(values, tuple(dx), t)


# --- quantum vs classical spread -------------------------------------------------

@dataclass
class SpreadComparison:
    times: np.ndarray
    quantum_var: np.ndarray
    classical_var: np.ndarray
    rel_diff: np.ndarray
    divergence_time: float
    interpolation_error: float
    threshold: float

    def rows(self):
        return zip(self.times, self.quantum_var, self.classical_var, self.rel_diff)


def spread_comparison(times_q, var_q, times_c, var_c, threshold: float = 0.1
                      ) -> SpreadComparison:
    """Quantum vs classical Var(x) on the quantum time grid.

    The classical series is resampled by cubic interpolation when the time
    grids differ; the reported interpolation error is the largest gap between
    cubic and linear resampling. ``divergence_time`` is the first time where
    |var_q - var_c| / var_c exceeds ``threshold`` (inf if never).
    """
    tq = np.asarray(times_q, dtype=float)
    vq = np.asarray(var_q, dtype=float)
    tc = np.asarray(times_c, dtype=float)
    vc = np.asarray(var_c, dtype=float)
    if tq.shape == tc.shape and np.allclose(tq, tc, rtol=0.0, atol=1e-12 * max(1.0, tq[-1])):
        vc_q, err = vc, 0.0
    else:
        if tq[0] < tc[0] - 1e-12 or tq[-1] > tc[-1] + 1e-12:
            raise ValueError("quantum times extend beyond the classical record")
        vc_q = CubicSpline(tc, vc)(tq)
        err = float(np.max(np.abs(vc_q - np.interp(tq, tc, vc))))
    rel = np.abs(vq - vc_q) / np.abs(vc_q)
    over = np.nonzero(rel > threshold)[0]
    t_div = float(tq[over[0]]) if over.size else math.inf
    return SpreadComparison(tq, vq, vc_q, rel, t_div, err, threshold)


def compare_spread(quantum: PropagationRecord, classical, threshold: float = 0.1
                   ) -> SpreadComparison:
    """spread_comparison for a PropagationRecord and an ensemble record."""
    return spread_comparison(quantum.times, quantum.x_var, classical.times,
                             classical.var[:, 0], threshold)


# --- Husimi distribution ---------------------------------------------------------

def husimi(values, axis: AxisGrid, hbar: float, x_points, p_points,
           sigma: float, weights=None) -> np.ndarray:
    """Husimi function Q(x0, p0) = sum_j w_j |<x0,p0|psi_j>|**2 / (2 pi hbar).

    ``values`` is one matter wavefunction (shape (n,)) or a stack of components
    (shape (n, m), e.g. a 2D field with the cavity coordinate second); the
    weights default to the cavity spacing dq. Coherent states have position
    width ``sigma``. Returns an array of shape (len(x_points), len(p_points)).
    """
    psi = np.asarray(values, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
        w = np.ones(1)
    else:
        w = np.full(psi.shape[1], 1.0) if weights is None else np.asarray(weights, float)
        if np.ndim(w) == 0:
            w = np.full(psi.shape[1], float(w))
    x = axis.points
    x0 = np.asarray(x_points, dtype=float)
    p0 = np.asarray(p_points, dtype=float)
    env = (2.0 * math.pi * sigma**2) ** -0.25 * np.exp(-0.25 * ((x[None, :] - x0[:, None]) / sigma) ** 2)
    wave = np.exp(-1j * np.outer(x, p0) / hbar)
    out = np.zeros((x0.size, p0.size))
    for j in range(psi.shape[1]):
        amp = (env * psi[:, j][None, :]) @ wave * axis.dx
        out += w[j] * np.abs(amp) ** 2
    return out / (2.0 * math.pi * hbar)


def husimi_norm(q: np.ndarray, x_points, p_points) -> float:
    dx = float(x_points[1] - x_points[0])
    dp = float(p_points[1] - p_points[0])
    return float(np.sum(q) * dx * dp)


def husimi_mass_in_region(q: np.ndarray, x_points, p_points, inside) -> float:
    """Fraction of the Husimi weight where ``inside(X, P)`` is true."""
    X, P = np.meshgrid(x_points, p_points, indexing="ij")
    return float(np.sum(q[inside(X, P)]) / np.sum(q))


@dataclass(frozen=True)
class LocalizedCount:
    count: int
    masses: np.ndarray
    threshold: float


def husimi_localized_count(states, axis: AxisGrid, hbar: float, inside, x_points, p_points,
                           sigma: float, threshold: float = 0.5) -> LocalizedCount:
    """Number of states whose Husimi weight in ``inside(X, P)`` exceeds ``threshold``."""
    masses = np.array([husimi_mass_in_region(husimi(s, axis, hbar, x_points, p_points, sigma),
                                             x_points, p_points, inside) for s in states])
    return LocalizedCount(int(np.sum(masses > threshold)), masses, float(threshold))


def spread_study(op: GridOperator, system, x0: float, p0: float, sigma: float,
                 n_traj: int, seed: int, t_max: float, record_dt: float = 0.05,
                 dt: float | None = None, dt_classical: float = 0.01, order: int = 4,
                 threshold: float = 0.1, stop_at_divergence: bool = True) -> SpreadComparison:
    """Quantum vs classical Var(x) for a Gaussian packet in a 1D potential.

    The quantum packet evolves under ``op`` (hbar = op.hbar); the classical
    ensemble samples the packet's Wigner function with ``seed`` and follows
    ``system``. Both are sampled every ``record_dt``. ``dt`` defaults to the
    largest step with dt*E_max/hbar < 0.4 that divides ``record_dt``.
    """
    from cavityqc import classical as cl

    axis = op.axes[0]
    hbar = op.hbar
    if dt is None:
        e_max = float(np.ptp(op.kinetic) + np.ptp(op.potential))
        dt = min(record_dt, 0.4 * hbar / e_max)
    sub = max(1, int(math.ceil(record_dt / dt - 1e-9)))
    dt = record_dt / sub
    sub_c = max(1, int(math.ceil(record_dt / dt_classical - 1e-9)))
    h_c = record_dt / sub_c
    psi = gaussian_1d(axis, x0, p0, sigma, hbar)
    half_kin = _kinetic_phase(op, dt)
    full_kin = half_kin * half_kin
    pot_phase = np.exp(-1j * dt * op.potential / hbar)
    rng = np.random.default_rng(seed)
    q, p = cl.wigner_gaussian_samples(x0, p0, sigma, hbar, n_traj, rng)
    times, vq, vc = [], [], []
    n_rec = int(round(t_max / record_dt))
    for i in range(n_rec + 1):
        if i:
            psi = _run(psi, sub, half_kin, full_kin, pot_phase, (0,))
            for _ in range(sub_c):
                cl.step(system, q, p, h_c, order)
            tail = edge_tail(psi, axis)
            if tail > EDGE_TAIL_TOL:
                raise GridSupportError(f"t={i * record_dt:.4g}: {tail:.3e} of the norm at the grid edge")
        times.append(i * record_dt)
        vq.append(position_moments(psi, axis)[1])
        m = np.mean(q[:, 0])
        vc.append(float(np.mean((q[:, 0] - m) ** 2)))
        if stop_at_divergence and abs(vq[-1] - vc[-1]) / vc[-1] > threshold:
            break
    return spread_comparison(times, vq, times, vc, threshold)


def packet_grid(potential, mass: float, hbar: float, x0: float, p0: float, sigma: float,
                n_sigma: float = 7.0) -> AxisGrid:
    """Symmetric axis covering a Gaussian packet and its mirror image.

    The half width is |x0| + n_sigma*sigma; the momentum range covers the
    packet's classical momentum at energy V(|x0| + 4 sigma) + p0**2/2mass plus
    n_sigma momentum widths.
    """
    from cavityqc.grids import fast_size

    half = abs(x0) + n_sigma * sigma
    sp = hbar / (2.0 * sigma)
    e = float(potential.value(abs(x0) + 4.0 * sigma)) + (abs(p0) + 4.0 * sp) ** 2 / (2.0 * mass)
    vmin = potential.minimum()[1]
    p_half = math.sqrt(2.0 * mass * max(e - vmin, 0.0)) + n_sigma * sp
    return AxisGrid.centered(half, fast_size(2.0 * half * p_half / (math.pi * hbar)))
