"""Grid Hamiltonians for the cavity-matter model in several gauges.

Every builder returns a :class:`GridOperator`, i.e. a kinetic part that is
diagonal in (2D) momentum space plus a potential diagonal in position space.
The kinetic part is kept as a short list of separable terms so the same data
drives both the FFT ``apply`` and dense matrix materialization.

Gauges::

    MG                (p + s*wp)**2/2m + V(x) + wp**2/2 + omega**2 q**2/2
    AG                p**2/2M + V(x + zeta*q) + wp**2/2mu + mu*Omega**2*q**2/2
    AG_rescaled       p**2/2M + V(x + xi*Q) + Omega*(P**2 + Q**2)/2
    MG_weak           MG to first order in s (keeps (s/m) p wp)
    AG_weak           AG to first order in zeta (keeps V'(x) zeta q)
    semiclassical     -hbar_eff**2/(2m) d_xx + V(x)   (matter axis only;
                      "semiclassical_matter" is accepted as an alias)
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from cavityqc.grids import (
    AxisGrid,
    ProductGrid,
    axes_of,
    cell_of,
    spectral_matrix,
)
from cavityqc.params import (
    DressedParams,
    PhysicalParams,
    classify_regime,
    dressed_params,
)
from cavityqc.gridplan import GAUGE_ALIASES
from cavityqc.potentials import PotentialModel, displaced_on_grid

GAUGES = ("MG", "AG", "AG_rescaled", "MG_weak", "AG_weak", "semiclassical")


def canonical_gauge(gauge: str) -> str:
    return GAUGE_ALIASES.get(gauge, gauge)
DEFAULT_DENSE_CAP = 16384


class DenseCapError(RuntimeError):
    pass


class GridSupportError(RuntimeError):
    """A field (or its image under a map) does not fit on the grid."""

    def __init__(self, message: str, required_extent: float | None = None):
        super().__init__(message)
        self.required_extent = required_extent


class GridResolutionWarning(UserWarning):
    pass


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KineticTerm:
    """coef * (outer product of per-axis Fourier multipliers).

    ``symbols[k]`` is the multiplier on axis k in FFT order, or None for the
    identity.
    """

    coef: float
    symbols: tuple

    def diagonal(self, axes) -> np.ndarray:
        out = np.asarray(self.coef, dtype=complex)
        for ax, sym in zip(axes, self.symbols):
            out = np.multiply.outer(out, np.ones(ax.n) if sym is None else sym)
        return out

    def matrices(self, axes) -> list:
        return [None if sym is None else spectral_matrix(ax, sym)
                for ax, sym in zip(axes, self.symbols)]


@dataclass
class GridOperator:
    grid: AxisGrid | ProductGrid
    hbar: float
    terms: list
    potential: np.ndarray
    gauge: str = ""
    dense_cap: int = DEFAULT_DENSE_CAP
    info: dict = field(default_factory=dict)
    hermitian: bool = True

    def __post_init__(self):
        axes = axes_of(self.grid)
        kin = sum(t.diagonal(axes) for t in self.terms)
        if np.max(np.abs(np.imag(kin)), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(kin))):
            raise ValueError("kinetic multiplier must be real")
        self.kinetic = np.ascontiguousarray(np.real(kin))
        self.potential = np.ascontiguousarray(np.asarray(self.potential, dtype=float))
        if self.potential.shape != self.shape:
            raise ValueError("potential shape does not match the grid")
        self._mats = None

    @property
    def axes(self) -> tuple:
        return axes_of(self.grid)

    @property
    def shape(self) -> tuple:
        return tuple(a.n for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell(self) -> float:
        return cell_of(self.grid)

    def apply(self, psi):
        """H psi for a field of the grid's shape (or a stack of such fields)."""
        psi = np.asarray(psi)
        nd = len(self.shape)
        ax = tuple(range(psi.ndim - nd, psi.ndim))
        kin = np.fft.ifftn(self.kinetic * np.fft.fftn(psi, axes=ax), axes=ax)
        return kin + self.potential * psi

    __call__ = apply

    def expectation(self, psi) -> float:
        """<psi|H|psi> / <psi|psi>."""
        hpsi = self.apply(psi)
        return float(np.real(np.vdot(psi, hpsi)) / np.real(np.vdot(psi, psi)))

    def norm_scale(self) -> float:
        """Cheap upper estimate of the operator 2-norm."""
        return float(np.max(np.abs(self.kinetic)) + np.max(np.abs(self.potential)))

    def _term_mats(self):
        if self._mats is None:
            self._mats = [(t.coef, t.matrices(self.axes)) for t in self.terms]
        return self._mats

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense sub-matrix H[rows, cols] for flat grid indices."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        r_idx = np.unravel_index(rows, self.shape)
        c_idx = np.unravel_index(cols, self.shape)
        out = np.zeros((rows.size, cols.size))
        for coef, mats in self._term_mats():
            acc = np.full((rows.size, cols.size), coef)
            for mat, ri, ci in zip(mats, r_idx, c_idx):
                if mat is None:
                    acc *= ri[:, None] == ci[None, :]
                else:
                    acc *= np.real(mat[np.ix_(ri, ci)])
            out += acc
        v = self.potential.ravel()
        same = rows[:, None] == cols[None, :]
        out[same] += v[np.broadcast_to(rows[:, None], same.shape)[same]]
        return out

    def dense(self) -> np.ndarray:
        if self.size > self.dense_cap:
            raise DenseCapError(
                f"dimension {self.size} exceeds dense cap {self.dense_cap}; use the Krylov path")
        out = np.zeros((self.size, self.size))
        for coef, mats in self._term_mats():
            acc = np.array([[coef]])
            for mat, ax in zip(mats, self.axes):
                acc = np.kron(acc, np.eye(ax.n) if mat is None else np.real(mat))
            out += acc
        out[np.diag_indices_from(out)] += self.potential.ravel()
        return out

    def parity_map(self) -> np.ndarray | None:
        """Flat index permutation for (x, c) -> (-x, -c), if H commutes with it."""
        if not all(a.is_symmetric() for a in self.axes):
            return None
        mirrors = [a.mirror_index() for a in self.axes]
        perm = np.ravel_multi_index(np.meshgrid(*mirrors, indexing="ij"), self.shape).ravel()
        v = self.potential.ravel()
        k = self.kinetic.ravel()
        tol_v = 1e-12 * max(1.0, float(np.max(np.abs(v))))
        tol_k = 1e-12 * max(1.0, float(np.max(np.abs(k))))
        if np.max(np.abs(v[perm] - v)) > tol_v or np.max(np.abs(k[perm] - k)) > tol_k:
            return None
        return perm


@dataclass(frozen=True)
class HamiltonianSpec:
    gauge: str
    physical: PhysicalParams
    potential: PotentialModel
    grid: AxisGrid | ProductGrid
    dressed: DressedParams | None = None
    dense_cap: int = DEFAULT_DENSE_CAP

    def __post_init__(self):
        object.__setattr__(self, "gauge", canonical_gauge(self.gauge))
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}; expected one of {GAUGES}")
        expected = dressed_params(self.physical)
        if self.dressed is None:
            object.__setattr__(self, "dressed", expected)
        elif self.dressed != expected:
            raise ValueError("dressed parameters are inconsistent with the physical ones")
        if self.gauge == "semiclassical":
            if not isinstance(self.grid, AxisGrid):
                raise ValueError("the semiclassical Hamiltonian lives on a matter AxisGrid")
        else:
            if not isinstance(self.grid, ProductGrid):
                raise ValueError(f"gauge {self.gauge} needs a ProductGrid")
            want = "Q" if self.gauge == "AG_rescaled" else "q"
            if self.grid.cavity.label != want:
                raise ValueError(f"gauge {self.gauge} needs a cavity axis labelled {want!r}")


def _k2(ax: AxisGrid) -> np.ndarray:
    return ax.wavenumbers() ** 2


def _ik(ax: AxisGrid) -> np.ndarray:
    return 1j * ax.wavenumbers(nyquist=False)


def _local_curvature(potential: PotentialModel) -> float:
    x0, _ = potential.minimum()
    return max(float(potential.second_derivative(x0)), 1e-300)


def _check_resolution(grid: ProductGrid, hbar: float, scales: dict) -> None:
    for ax in grid.axes:
        scale = scales.get(ax.label)
        if scale and math.pi * hbar / ax.dx < 4.0 * scale:
            warnings.warn(
                f"axis {ax.label}: momentum extent {math.pi * hbar / ax.dx:.3g} is below "
                f"4x the zero-point momentum {scale:.3g}", GridResolutionWarning, stacklevel=3)


def _displaced(potential: PotentialModel, grid: ProductGrid, coupling: float) -> np.ndarray:
    """V(x + coupling*c), with the periodic seam made inversion symmetric.

    On a symmetric periodic grid the edge row x = x_min also stands for
    x = -x_min, where V(x + coupling*c) takes different values. For even V the
    two are averaged so the sampled operator keeps the (x, c) -> (-x, -c)
    symmetry of the continuum one.
    """
    V = displaced_on_grid(potential, grid, coupling)
    if potential.is_even and all(a.is_symmetric() for a in grid.axes):
        mx, mc = (a.mirror_index() for a in grid.axes)
        V = 0.5 * (V + V[np.ix_(mx, mc)])
    return V


def _cavity_q2(grid: ProductGrid, physical: PhysicalParams) -> np.ndarray:
    _, Q = grid.mesh()
    return 0.5 * physical.omega**2 * Q**2


def build_mg(spec: HamiltonianSpec, weak: bool = False) -> GridOperator:
    p, d, grid = spec.physical, spec.dressed, spec.grid
    hb, m, s = p.hbar, p.m, d.varsigma
    x_ax, q_ax = grid.axes
    wp2_coef = 0.5 if weak else 0.5 * (1.0 + s * s / m)
    terms = [
        KineticTerm(hb * hb / (2.0 * m), (_k2(x_ax), None)),
        # (s/m) p wp = -(s hbar^2/m) * (d/dx)(d/dq)
        KineticTerm(-s * hb * hb / m, (_ik(x_ax), _ik(q_ax))),
        KineticTerm(hb * hb * wp2_coef, (None, _k2(q_ax))),
    ]
    X, _ = grid.mesh()
    V = spec.potential.value(X) + _cavity_q2(grid, p)
    _check_resolution(grid, hb, {
        "x": math.sqrt(hb * math.sqrt(m * _local_curvature(spec.potential))),
        "q": math.sqrt(hb * p.omega / 2.0),
    })
    return GridOperator(grid, hb, terms, V, "MG_weak" if weak else "MG", spec.dense_cap,
                        info={"varsigma": s})


def build_ag(spec: HamiltonianSpec) -> GridOperator:
    p, d, grid = spec.physical, spec.dressed, spec.grid
    hb = p.hbar
    x_ax, q_ax = grid.axes
    terms = [
        KineticTerm(hb * hb / (2.0 * d.M), (_k2(x_ax), None)),
        KineticTerm(hb * hb / (2.0 * d.mu), (None, _k2(q_ax))),
    ]
    V = _displaced(spec.potential, grid, d.zeta) + _cavity_q2(grid, p)
    _check_resolution(grid, hb, {
        "x": math.sqrt(hb * math.sqrt(d.M * _local_curvature(spec.potential))),
        "q": math.sqrt(hb * d.mu * d.Omega / 2.0),
    })
    return GridOperator(grid, hb, terms, V, "AG", spec.dense_cap, info={"zeta": d.zeta})


def build_ag_rescaled(spec: HamiltonianSpec) -> GridOperator:
    p, d, grid = spec.physical, spec.dressed, spec.grid
    hb = p.hbar
    x_ax, Q_ax = grid.axes
    terms = [
        KineticTerm(hb * hb / (2.0 * d.M), (_k2(x_ax), None)),
        KineticTerm(hb * hb * d.Omega / 2.0, (None, _k2(Q_ax))),
    ]
    _, Q = grid.mesh()
    V = _displaced(spec.potential, grid, d.xi) + 0.5 * d.Omega * Q**2
    return GridOperator(grid, hb, terms, V, "AG_rescaled", spec.dense_cap, info={"xi": d.xi})


def build_weak_truncations(spec: HamiltonianSpec) -> GridOperator:
    """First-order-in-coupling MG or AG Hamiltonian (per ``spec.gauge``)."""
    if spec.gauge not in ("MG_weak", "AG_weak"):
        raise ValueError("build_weak_truncations needs gauge MG_weak or AG_weak")
    regime = classify_regime(spec.physical)
    if regime.label != "weak":
        warnings.warn(f"weak-coupling truncation used in the {regime.label} regime "
                      f"(ratio {regime.ratio:.3g})", RegimeWarning, stacklevel=2)
    if spec.gauge == "MG_weak":
        return build_mg(spec, weak=True)
    p, d, grid = spec.physical, spec.dressed, spec.grid
    hb = p.hbar
    x_ax, q_ax = grid.axes
    terms = [
        KineticTerm(hb * hb / (2.0 * p.m), (_k2(x_ax), None)),
        KineticTerm(hb * hb / 2.0, (None, _k2(q_ax))),
    ]
    X, Q = grid.mesh()
    V = (spec.potential.value(X) + _cavity_q2(grid, p)
         + spec.potential.derivative(X) * d.zeta * Q)
    return GridOperator(grid, hb, terms, V, "AG_weak", spec.dense_cap, info={"zeta": d.zeta})


def build_semiclassical(spec: HamiltonianSpec) -> GridOperator:
    """Dressed matter Hamiltonian with the cavity dropped.

    The kinetic prefactor is hbar_eff**2/(2m) (equal to hbar**2/(2M)). The
    returned operator carries ``hbar = hbar_eff``, so time evolution runs on
    the clock where the classical mass is the bare m.
    """
    p, d, axis = spec.physical, spec.dressed, spec.grid
    heff = d.hbar_eff
    terms = [KineticTerm(heff * heff / (2.0 * p.m), (_k2(axis),))]
    V = spec.potential.value(axis.points)
    return GridOperator(axis, heff, terms, V, "semiclassical", spec.dense_cap,
                        info={"hbar_eff": heff, "M": d.M})


_BUILDERS = {
    "MG": build_mg,
    "AG": build_ag,
    "AG_rescaled": build_ag_rescaled,
    "MG_weak": build_weak_truncations,
    "AG_weak": build_weak_truncations,
    "semiclassical": build_semiclassical,
}


def build(spec: HamiltonianSpec) -> GridOperator:
    op = _BUILDERS[spec.gauge](spec)
    op.info["spec"] = spec
    return op


def build_operator(gauge: str, physical: PhysicalParams, potential: PotentialModel,
                   grid, dense_cap: int = DEFAULT_DENSE_CAP) -> GridOperator:
    """Shorthand for ``build(HamiltonianSpec(...))``."""
    return build(HamiltonianSpec(gauge, physical, potential, grid, dense_cap=dense_cap))


def hermiticity_defect(op: GridOperator, n_pairs: int = 50, seed: int = 0) -> float:
    """max |<phi|H psi> - conj(<psi|H phi>)| / (|H| |phi| |psi|) over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    scale = op.norm_scale()
    for _ in range(n_pairs):
        phi = rng.normal(size=op.shape) + 1j * rng.normal(size=op.shape)
        psi = rng.normal(size=op.shape) + 1j * rng.normal(size=op.shape)
        a = np.vdot(phi, op.apply(psi))
        b = np.conj(np.vdot(psi, op.apply(phi)))
        denom = scale * np.linalg.norm(phi) * np.linalg.norm(psi)
        worst = max(worst, abs(a - b) / denom)
    return worst


def _shear(values: np.ndarray, grid: ProductGrid, coupling: float, sign: float,
           support_tol: float) -> np.ndarray:
    x_ax, c_ax = grid.axes
    shifts = sign * coupling * c_ax.points
    dens = np.abs(values) ** 2
    total = float(np.sum(dens))
    if total > 0.0 and coupling != 0.0:
        x = x_ax.points
        moved = x[:, None] + shifts[None, :]
        outside = (moved < x_ax.x_min) | (moved >= x_ax.x_max)
        lost = float(np.sum(dens[outside])) / total
        if lost > support_tol:
            keep = dens > support_tol * float(np.max(dens))
            reach = float(np.max(np.abs(moved[keep]))) + x_ax.dx
            raise GridSupportError(
                f"shear pushes {lost:.3e} of the norm across the matter-axis edge "
                f"[{x_ax.x_min:.4g}, {x_ax.x_max:.4g}); need half-width >= {reach:.4g}",
                required_extent=reach)
    return row_shift(values, grid, sign * coupling)


def row_shift(values: np.ndarray, grid: ProductGrid, coupling: float) -> np.ndarray:
    """psi(x, c) -> psi(x - coupling*c, c) by a spectral shift along x.

    Acts on the two trailing axes, so stacks of fields are allowed.
    """
    x_ax, c_ax = grid.axes
    phase = np.exp(-1j * np.outer(x_ax.wavenumbers(), coupling * c_ax.points))
    return np.fft.ifft(phase * np.fft.fft(values, axis=-2), axis=-2)


def apply_ma_unitary(field, physical: PhysicalParams, grid: ProductGrid,
                     direction: int = +1, support_tol: float = 1e-12) -> np.ndarray:
    """Apply U (direction=+1) or U^dagger (direction=-1) to a field on x*q or x*Q.

    U translates the matter coordinate by zeta*q on each cavity row,
    (U psi)(x, q) = psi(x - zeta*q, q), done by a spectral shift per row.
    On an x*Q grid the row shift is xi*Q, the same physical displacement.
    """
    if direction not in (+1, -1):
        raise ValueError("direction must be +1 or -1")
    d = dressed_params(physical)
    coupling = d.xi if grid.cavity.label == "Q" else d.zeta
    values = getattr(field, "values", field)
    return _shear(np.asarray(values, dtype=complex), grid, coupling, float(direction),
                  support_tol)
