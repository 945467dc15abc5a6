"""Eigenvalues of grid Hamiltonians and the analysis built on them.

Dense solves split the grid into the even and odd sectors of the inversion
(x, c) -> (-x, -c) whenever the Hamiltonian commutes with it, which cuts the
cost by about four. The Krylov path runs ARPACK through ``GridOperator.apply``.

Grid convergence is certified by doubling: eigenvectors are carried onto a
grid with twice the points (same extent) or twice the extent (same spacing),
and a Rayleigh-Ritz step there bounds how far each level moves.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from cavityqc.grids import AxisGrid, ProductGrid, axes_of, fast_size
from cavityqc.hamiltonians import DenseCapError, GridOperator
from cavityqc.params import PhysicalParams, dressed_params

logger = logging.getLogger(__name__)

CERTIFY_TOL = 1e-9


class SpectrumConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class NoDoubletError(RuntimeError):
    pass


@dataclass
class Certification:
    passed: bool
    tol: float
    checks: list = field(default_factory=list)

    @property
    def max_bound(self) -> float:
        return max((c["max_bound"] for c in self.checks), default=0.0)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tol": self.tol, "max_bound": self.max_bound,
                "checks": self.checks}


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None
    method: str
    residual_norms: np.ndarray
    converged: bool
    grid: dict
    parities: np.ndarray | None = None
    certification: Certification | None = None

    def __len__(self):
        return len(self.eigenvalues)

    def provenance(self) -> dict:
        out = {"method": self.method, "grid": self.grid, "converged": self.converged,
               "max_residual": float(np.max(self.residual_norms, initial=0.0))}
        if self.certification is not None:
            out["certification"] = self.certification.to_dict()
        return out


def _grid_dict(grid) -> dict:
    return grid.to_dict()


def _parity_basis(perm: np.ndarray):
    idx = np.arange(perm.size)
    reps = idx[idx <= perm]
    fixed = perm[reps] == reps
    odd_reps = reps[~fixed]
    return reps, fixed, odd_reps


def _sector_matrix(op: GridOperator, reps: np.ndarray, perm: np.ndarray, sign: float,
                   fixed: np.ndarray | None) -> np.ndarray:
    mat = op.block(reps, reps)
    mat += sign * op.block(reps, perm[reps])
    if fixed is not None and fixed.any():
        s = np.where(fixed, 1.0 / math.sqrt(2.0), 1.0)
        mat *= s[:, None]
        mat *= s[None, :]
    return mat


def _sector_vectors(vecs: np.ndarray, reps, perm, sign, fixed, size) -> np.ndarray:
    out = np.zeros((vecs.shape[1], size))
    w = np.full(reps.size, 1.0 / math.sqrt(2.0))
    if fixed is not None:
        w[fixed] = 1.0
    out[:, reps] += (vecs * w[:, None]).T
    out[:, perm[reps]] += sign * (vecs * w[:, None]).T
    if fixed is not None and fixed.any():
        # fixed points were added twice with sign +1
        out[:, reps[fixed]] *= 0.5
    return out


class _LDL:
    """Bunch-Kaufman factorization of A - sigma*I: solves and Sylvester inertia."""

    def __init__(self, mat: np.ndarray, sigma: float):
        a = mat - sigma * np.eye(len(mat))
        lu, d, perm = sla.ldl(a, overwrite_a=True, check_finite=False)
        del a
        self.lt = np.ascontiguousarray(lu[perm])
        self.perm = perm
        n = len(d)
        self.band = np.zeros((3, n))
        self.band[0, 1:] = np.diagonal(d, 1)
        self.band[1] = np.diagonal(d)
        self.band[2, :-1] = np.diagonal(d, -1)
        self.n_below = _count_negative(self.band)

    def solve(self, b: np.ndarray) -> np.ndarray:
        y = sla.solve_triangular(self.lt, b[self.perm], lower=True, unit_diagonal=True,
                                 check_finite=False)
        z = sla.solve_banded((1, 1), self.band, y, check_finite=False)
        x = np.empty_like(z)
        x[self.perm] = sla.solve_triangular(self.lt, z, lower=True, trans="T",
                                            unit_diagonal=True, check_finite=False)
        return x


def _count_negative(band: np.ndarray) -> int:
    """Negative eigenvalues of a block diagonal D with 1x1 and 2x2 blocks."""
    diag, off = band[1], band[0, 1:]
    n, i, neg = len(diag), 0, 0
    two = np.concatenate([off != 0.0, [False]])
    while i < n:
        if two[i]:
            a, b, c = diag[i], off[i], diag[i + 1]
            det = a * c - b * b
            neg += 1 if det < 0 else (2 if a + c < 0 else 0)
            i += 2
        else:
            neg += diag[i] < 0
            i += 1
    return int(neg)


def _shift_invert(mat: np.ndarray, k: int, guess: tuple, seed: int):
    """Lowest k eigenpairs by shift-invert Lanczos below the spectrum.

    ``guess`` = (lowest level, spread of the wanted levels) from a cheap
    estimate. The shift is lowered until the LDL inertia shows no eigenvalue
    below it; afterwards the inertia at the top Ritz value confirms that no
    level was skipped. Returns None if either check fails.
    """
    low, spread = guess
    spread = max(spread, 1e-6 * max(1.0, abs(low)))
    sigma = low - 0.5 * spread
    for _ in range(6):
        fac = _LDL(mat, sigma)
        if fac.n_below == 0:
            break
        sigma -= 2.0 * spread * 2 ** _
    else:
        return None
    n = len(mat)
    opinv = LinearOperator((n, n), matvec=fac.solve, dtype=float)
    v0 = np.random.default_rng(seed).normal(size=n)
    try:
        w, v = eigsh(mat, k=k, sigma=sigma, which="LM", OPinv=opinv, v0=v0,
                     ncv=min(n, max(2 * k + 1, 40)))
    except ArpackNoConvergence:
        return None
    del fac
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    top = w[-1] + 1e-9 * max(1.0, abs(w[-1]))
    if _LDL(mat, top).n_below != k:
        return None
    return w, v


SHIFT_INVERT_MIN = 3000


def _lowest(mat: np.ndarray, k: int, guess, seed: int):
    kk = min(k, len(mat))
    if guess is not None and len(mat) >= SHIFT_INVERT_MIN and kk < len(mat) // 4:
        out = _shift_invert(mat, kk, guess, seed)
        if out is not None:
            return out
        logger.info("shift-invert checks failed; falling back to full eigh")
    return sla.eigh(mat, subset_by_index=[0, kk - 1], driver="evr")


def _coarse_guess(op: GridOperator, k: int):
    """(lowest level, spread) from the same Hamiltonian on a half-size grid."""
    spec = op.info.get("spec")
    if spec is None or op.size < 2 * SHIFT_INVERT_MIN:
        return None
    axes = [AxisGrid(a.x_min, a.x_max, max(8, 2 * (a.n // 4)), a.label) for a in op.axes]
    grid = axes[0] if len(axes) == 1 else ProductGrid(*axes)
    try:
        from cavityqc.hamiltonians import build
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            coarse = build(dataclasses.replace(spec, grid=grid))
        w = eigen(coarse, k, method="dense", vectors=False).eigenvalues
    except Exception:  # noqa: BLE001 - the guess is optional
        return None
    return float(w[0]), float(w[-1] - w[0])


def _dense_solve(op: GridOperator, k: int, use_parity: bool, seed: int = 0):
    perm = op.parity_map() if use_parity else None
    if perm is None:
        w, v = _lowest(op.dense(), k, _coarse_guess(op, k), seed)
        return w, v.T, None
    reps, fixed, odd_reps = _parity_basis(perm)
    # the cap bounds the largest matrix actually formed, here one parity sector
    if max(reps.size, odd_reps.size) > op.dense_cap:
        raise DenseCapError(f"parity sector of dimension {reps.size} exceeds dense cap "
                            f"{op.dense_cap}; use the Krylov path")
    guess = _coarse_guess(op, k)
    vals, vecs, pars = [], [], []
    for sign, r, fx in ((+1.0, reps, fixed), (-1.0, odd_reps, None)):
        if r.size == 0:
            continue
        mat = _sector_matrix(op, r, perm, sign, fx)
        w, v = _lowest(mat, k, guess, seed)
        del mat
        vals.append(w)
        vecs.append(_sector_vectors(v, r, perm, sign, fx, op.size))
        pars.append(np.full(len(w), int(sign)))
    w = np.concatenate(vals)
    order = np.argsort(w, kind="stable")[:k]
    return w[order], np.concatenate(vecs)[order], np.concatenate(pars)[order]


def _krylov_solve(op: GridOperator, k: int, seed: int, tol: float, maxiter: int | None):
    n = op.size
    shape = op.shape

    def matvec(v):
        return np.real(op.apply(v.reshape(shape))).ravel()

    lin = LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = np.random.default_rng(seed).normal(size=n)
    ncv = min(n, max(2 * k + 1, 40))
    try:
        w, v = eigsh(lin, k=k, which="SA", v0=v0, tol=tol, ncv=ncv, maxiter=maxiter)
    except ArpackNoConvergence as exc:
        res = []
        for val, vec in zip(exc.eigenvalues, exc.eigenvectors.T):
            res.append(float(np.linalg.norm(matvec(vec) - val * vec)))
        raise SpectrumConvergenceError(
            f"Krylov solve did not converge; best residuals {res}", residuals=res) from exc
    order = np.argsort(w)
    return w[order], v[:, order].T


def eigen(op: GridOperator, k: int, method: str = "auto", seed: int = 0,
          vectors: bool = True, use_parity: bool = True, tol: float = 1e-13,
          maxiter: int | None = None) -> SpectrumResult:
    """Lowest ``k`` eigenpairs of ``op``.

    ``method`` is ``"dense"``, ``"krylov"`` or ``"auto"`` (dense up to the
    operator's dense cap). Dense solves of large parity sectors use
    shift-invert Lanczos on the factorized matrix, checked by Sylvester
    inertia. Start vectors of all Lanczos runs come from ``seed``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if method == "auto":
        method = "dense" if op.size <= op.dense_cap else "krylov"
    parities = None
    if method == "dense":
        w, v, parities = _dense_solve(op, k, use_parity, seed)
    elif method == "krylov":
        w, v = _krylov_solve(op, k, seed, tol, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    hv = np.real(op.apply(v.reshape((len(w),) + op.shape))).reshape(len(w), -1)
    res = np.linalg.norm(hv - w[:, None] * v, axis=1)
    converged = bool(np.all(res <= 1e-8 * op.norm_scale()))
    vecs = (v / math.sqrt(op.cell)).reshape((len(w),) + op.shape) if vectors else None
    return SpectrumResult(np.asarray(w), vecs, method, res, converged, _grid_dict(op.grid),
                          parities)


# --- convergence certification -------------------------------------------------

def _refine_axis(values: np.ndarray, axis: int) -> np.ndarray:
    """Trigonometric interpolation onto twice as many points along ``axis``."""
    n = values.shape[axis]
    c = np.fft.fft(values, axis=axis)
    shape = list(c.shape)
    shape[axis] = 2 * n
    out = np.zeros(shape, dtype=complex)
    half = n // 2
    sl = [slice(None)] * c.ndim

    def put(dst, src):
        d = list(sl)
        s = list(sl)
        d[axis], s[axis] = dst, src
        out[tuple(d)] += c[tuple(s)]

    put(slice(0, half), slice(0, half))
    put(slice(2 * n - half + 1, 2 * n), slice(half + 1, n))
    nyq = [slice(None)] * c.ndim
    nyq[axis] = slice(half, half + 1)
    split = 0.5 * c[tuple(nyq)]
    d = list(sl)
    d[axis] = slice(half, half + 1)
    out[tuple(d)] += split
    d[axis] = slice(2 * n - half, 2 * n - half + 1)
    out[tuple(d)] += split
    return np.real(np.fft.ifft(out, axis=axis)) * 2.0


def _extend_axis(values: np.ndarray, axis: int) -> np.ndarray:
    n = values.shape[axis]
    pad = [(0, 0)] * values.ndim
    pad[axis] = (n // 2, n - n // 2)
    return np.pad(values, pad)


def _swap_axis(grid, k: int, new_axis: AxisGrid):
    if isinstance(grid, AxisGrid):
        return new_axis
    axes = list(grid.axes)
    axes[k] = new_axis
    return ProductGrid(*axes)


def ritz_on_grid(op_fine: GridOperator, fields: np.ndarray):
    """Rayleigh-Ritz of ``op_fine`` on span(fields): Ritz values and residual norms."""
    K = fields.shape[0]
    V = fields.reshape(K, -1).T
    Qm, _ = np.linalg.qr(V)
    HQ = np.real(op_fine.apply(Qm.T.reshape((K,) + op_fine.shape))).reshape(K, -1).T
    A = Qm.T @ HQ
    A = 0.5 * (A + A.T)
    theta, Y = np.linalg.eigh(A)
    R = HQ @ Y - (Qm @ Y) * theta
    return theta, np.linalg.norm(R, axis=0)


def certify_convergence(build: Callable, result: SpectrumResult, k: int,
                        tol: float = CERTIFY_TOL, grid=None) -> Certification:
    """Doubling test of the lowest ``k`` levels of ``result``.

    ``build(grid)`` must return the operator on an arbitrary grid. For each
    axis the points are doubled at fixed extent and, separately, the extent is
    doubled at fixed spacing. On the doubled grid the coarse eigenvectors span
    a Ritz space; the level shift is bounded by |theta - E| + r**2/gap, where
    gap is the distance to the highest Ritz value. Passing means every bound is
    below ``tol * max(1, |E|)``.
    """
    if result.eigenvectors is None:
        raise ValueError("certification needs eigenvectors")
    K = len(result)
    if K < k + 2:
        raise ValueError("compute at least k+2 levels so the top gap is defined")
    if grid is None:
        grid = _grid_from_dict(result.grid)
    E = result.eigenvalues
    checks = []
    passed = True
    for ai, ax in enumerate(axes_of(grid)):
        for mode in ("refine", "extend"):
            if mode == "refine":
                new_ax = ax.refined(2)
                fields = _refine_axis(result.eigenvectors, ai + 1)
            else:
                new_ax = ax.extended(2)
                fields = _extend_axis(result.eigenvectors, ai + 1)
            fine = build(_swap_axis(grid, ai, new_ax))
            theta, r = ritz_on_grid(fine, fields)
            gap = np.maximum(theta[K - 1] - theta[:k], 1e-300)
            bound = np.abs(theta[:k] - E[:k]) + r[:k] ** 2 / gap
            scaled = bound / np.maximum(1.0, np.abs(E[:k]))
            ok = bool(np.all(scaled <= tol))
            passed &= ok
            checks.append({
                "axis": ax.label, "mode": mode, "n": new_ax.n,
                "max_shift": float(np.max(np.abs(theta[:k] - E[:k]))),
                "max_residual": float(np.max(r[:k])),
                "max_bound": float(np.max(scaled)), "passed": ok,
            })
    return Certification(passed, tol, checks)


def _grid_from_dict(d: dict):
    if "matter" in d:
        return ProductGrid(AxisGrid(**d["matter"]), AxisGrid(**d["cavity"]))
    return AxisGrid(**d)


def certify_by_rediagonalization(build: Callable, result: SpectrumResult, k: int,
                                 grid, tol: float = CERTIFY_TOL) -> Certification:
    """Brute-force doubling: re-solve on each doubled grid (small problems only)."""
    E = result.eigenvalues[:k]
    checks, passed = [], True
    for ai, ax in enumerate(axes_of(grid)):
        for mode, new_ax in (("refine", ax.refined(2)), ("extend", ax.extended(2))):
            res = eigen(build(_swap_axis(grid, ai, new_ax)), k, vectors=False)
            delta = np.abs(res.eigenvalues - E) / np.maximum(1.0, np.abs(E))
            ok = bool(np.all(delta <= tol))
            passed &= ok
            checks.append({"axis": ax.label, "mode": mode, "n": new_ax.n,
                           "max_bound": float(np.max(delta)), "passed": ok})
    return Certification(passed, tol, checks)


def _grown(ax: AxisGrid, mode: str, growth: float) -> AxisGrid:
    """Axis with more points: finer at fixed extent, or wider at fixed spacing."""
    n = fast_size(ax.n * growth)
    c = 0.5 * (ax.x_min + ax.x_max)
    half = 0.5 * ax.length * (n / ax.n if mode == "extend" else 1.0)
    return AxisGrid(c - half, c + half, n, ax.label)


def solve_certified(build: Callable, grid, k: int, spare: int = 4, tol: float = CERTIFY_TOL,
                    method: str = "dense", max_rounds: int = 0, growth: float = 1.25
                    ) -> SpectrumResult:
    """eigen + certify_convergence, keeping the lowest ``k`` levels.

    With ``max_rounds`` > 0 a failed certification grows every failing axis
    (wider for an ``extend`` failure, finer for ``refine``) by ``growth`` and
    solves again, up to ``max_rounds`` times. The returned result carries the
    grid and certification of the last round.
    """
    for round_ in range(max_rounds + 1):
        res = eigen(build(grid), k + spare, method=method)
        cert = certify_convergence(build, res, k, tol=tol, grid=grid)
        res.certification = cert
        if cert.passed or round_ == max_rounds:
            return res
        axes = list(axes_of(grid))
        for ch in cert.checks:
            if not ch["passed"]:
                i = next(j for j, a in enumerate(axes) if a.label == ch["axis"])
                axes[i] = _grown(axes[i], ch["mode"], growth)
        logger.info("certification failed (max bound %.1e); growing grid to %s",
                    cert.max_bound, [a.n for a in axes])
        grid = axes[0] if len(axes) == 1 else ProductGrid(*axes)
    return res


# --- analytic oracle -----------------------------------------------------------

class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class NormalModeOracle:
    omega_plus: float
    omega_minus: float

    def ladder(self, n_levels: int, hbar: float = 1.0) -> np.ndarray:
        """Lowest levels hbar*w+*(n+1/2) + hbar*w-*(k+1/2)."""
        top = n_levels + 1
        n, k = np.meshgrid(np.arange(top), np.arange(top), indexing="ij")
        e = hbar * (self.omega_plus * (n + 0.5) + self.omega_minus * (k + 0.5))
        return np.sort(e.ravel())[:n_levels]


def quadratic_form_mg(p: PhysicalParams, omega0: float) -> np.ndarray:
    """Matrix A of H = z.A.z/2 for z = (x, q, p, wp), harmonic matter potential."""
    s = dressed_params(p).varsigma
    m = p.m
    A = np.zeros((4, 4))
    A[0, 0] = m * omega0**2
    A[1, 1] = p.omega**2
    A[2, 2] = 1.0 / m
    A[3, 3] = 1.0 + s * s / m
    A[2, 3] = A[3, 2] = s / m
    return A


def normal_mode_oracle(p: PhysicalParams, omega0: float) -> NormalModeOracle:
    """Normal-mode frequencies of the classical quadratic MG Hamiltonian.

    Diagonalizes the linear flow dz/dt = J A z; its eigenvalues are +-i*w.
    """
    if omega0 <= 0.0:
        raise OracleError("omega0 must be positive")
    A = quadratic_form_mg(p, omega0)
    if np.min(np.linalg.eigvalsh(A)) <= 0.0:
        raise OracleError("quadratic form is not positive definite")
    J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    lam = np.linalg.eigvals(J @ A)
    if np.max(np.abs(lam.real)) > 1e-9 * np.max(np.abs(lam)):
        raise OracleError("flow has non-imaginary eigenvalues")
    w = np.sort(np.abs(lam.imag))[::2]
    return NormalModeOracle(omega_plus=float(w[1]), omega_minus=float(w[0]))


# --- derived observables -------------------------------------------------------

@dataclass(frozen=True)
class PolaritonSplitting:
    value: float
    ambiguous: bool


def polariton_splitting(result: SpectrumResult, resolution: float | None = None
                        ) -> PolaritonSplitting:
    """E2 - E1, the gap between the two one-quantum polariton levels."""
    if len(result) < 3:
        raise ValueError("need the lowest three levels")
    E = result.eigenvalues
    if resolution is None:
        resolution = 1e-9 * max(1.0, abs(E[2]))
    split = float(E[2] - E[1])
    ambiguous = split < resolution
    if ambiguous:
        warnings.warn("one-quantum levels are degenerate within resolution; "
                      "the polariton assignment is ambiguous", stacklevel=2)
    return PolaritonSplitting(split, ambiguous)


def _second_derivative_coef(op: GridOperator) -> float:
    if len(op.shape) != 1 or len(op.terms) != 1:
        raise ValueError("tunneling analysis needs a 1D operator with a single k^2 term")
    return float(op.terms[0].coef)


@dataclass(frozen=True)
class TunnelingSplitting:
    delta: float
    e_even: float
    e_odd: float
    method: str


def _shoot(potential, c: float, energy: float, odd: bool, x_turn: float):
    """Outward Numerov solution of -c psi'' + V psi = E psi from x = 0.

    Even start psi(0) = 1, psi'(0) = 0; odd start psi(0) = 0, psi'(0) = 1.
    Growth away from the barrier top is the stable direction. The amplitude
    is carried as (value, log scale) so deep barriers do not overflow. The run
    stops once past ``x_turn`` the solution has decayed by e**-30 from its
    peak, or starts to grow again (energy error).
    Returns (h, log|psi| on the grid, sign of psi).
    """
    f0 = (float(potential.value(0.0)) - energy) / c
    f2 = float(potential.second_derivative(0.0)) / (2.0 * c)
    kappa = math.sqrt(max(abs(f0), abs((float(potential.value(x_turn)) - energy) / c), 1.0))
    h = min(0.02 / kappa, x_turn / 2000.0)
    g = h * h / 12.0
    if odd:
        a3 = f0 / 6.0
        b5 = (f0 * a3 + f2) / 20.0
        prev, cur = 0.0, h * (1.0 + a3 * h * h + b5 * h ** 4)
    else:
        a2 = f0 / 2.0
        b4 = (f0 * a2 + f2) / 12.0
        prev, cur = 1.0, 1.0 + a2 * h * h + b4 * h ** 4
    vals, logs = [prev, cur], [0.0, 0.0]
    scale = 0.0
    x = h
    f_prev = f0
    f_cur = (float(potential.value(x)) - energy) / c
    peak = -math.inf
    low = math.inf
    while True:
        x_next = x + h
        f_next = (float(potential.value(x_next)) - energy) / c
        nxt = (2.0 * cur * (1.0 + 5.0 * g * f_cur) - prev * (1.0 - g * f_prev)) / (1.0 - g * f_next)
        prev, cur = cur, nxt
        f_prev, f_cur = f_cur, f_next
        x = x_next
        if abs(cur) > 1e100:
            prev /= 1e100
            cur /= 1e100
            scale += math.log(1e100)
            for k in (-1,):
                vals[k] /= 1e100
                logs[k] += math.log(1e100)
        vals.append(cur)
        logs.append(scale)
        lv = math.log(abs(cur)) + scale if cur != 0.0 else -math.inf
        peak = max(peak, lv)
        if x > x_turn:
            low = min(low, lv)
            if lv < peak - 30.0 or lv > low + 1.0:
                break
        if x > 20.0 * x_turn:
            raise NoDoubletError("outward solution never decays; energy above the well?")
    vals = np.array(vals)
    with np.errstate(divide="ignore"):
        logpsi = np.log(np.abs(vals)) + np.array(logs)
    return h, logpsi, np.sign(vals)


def _log_overlap(h, le, se, lo, so) -> float:
    n = min(le.size, lo.size)
    lp = le[:n] + lo[:n]
    sp = se[:n] * so[:n]
    top = float(np.max(lp[np.isfinite(lp)]))
    w = np.where(np.isfinite(lp), sp * np.exp(lp - top), 0.0)
    total = float(np.trapezoid(w, dx=h))
    if total <= 0.0:
        raise NoDoubletError("even and odd solutions do not overlap positively")
    return top + math.log(total)


def tunneling_splitting(op: GridOperator, method: str = "auto") -> TunnelingSplitting:
    """Ground doublet splitting of a symmetric 1D double well.

    ``subtract`` returns E_odd - E_even from the grid eigenvalues.
    ``wronskian`` uses the exact identity
    (E_odd - E_even) * int_0^inf psi_e psi_o = c psi_e(0) psi_o'(0), with
    H = -c d_xx + V, evaluated on the grid eigenvectors. ``shooting`` evaluates
    the same identity on outward Numerov solutions carried in log scale, which
    stays accurate when psi(0) is far below double precision. ``auto``
    subtracts when the splitting is above 1e-4 of the level and shoots
    otherwise.
    """
    perm = op.parity_map()
    if perm is None:
        raise ValueError("operator is not inversion symmetric")
    axis = op.axes[0]
    res = eigen(op, 6, method="dense")
    evens = np.nonzero(res.parities > 0)[0]
    odds = np.nonzero(res.parities < 0)[0]
    if evens.size == 0 or odds.size == 0:
        raise NoDoubletError("no even/odd pair found")
    ie, io = evens[0], odds[0]
    e_even, e_odd = float(res.eigenvalues[ie]), float(res.eigenvalues[io])
    barrier = float(op.potential[np.argmin(np.abs(axis.points))])
    if not ({ie, io} == {0, 1} and max(e_even, e_odd) < barrier):
        raise NoDoubletError(
            f"no sub-barrier doublet: E_even={e_even:.6g}, E_odd={e_odd:.6g}, "
            f"barrier={barrier:.6g}")
    delta_sub = e_odd - e_even
    if method == "auto":
        shoot = op.info.get("spec") is not None and delta_sub < 1e-4 * max(1.0, abs(e_even))
        method = "shooting" if shoot else "subtract"
    if method == "subtract":
        return TunnelingSplitting(delta_sub, e_even, e_odd, "subtract")
    c = _second_derivative_coef(op)
    if method == "shooting":
        spec = op.info.get("spec")
        if spec is None:
            raise ValueError("shooting needs the operator's potential (build via HamiltonianSpec)")
        pot = spec.potential
        x = axis.points
        v = pot.value(x)
        outer = x[(x > 0) & (v > max(e_even, e_odd))]
        x0, _ = pot.minimum()
        x_turn = float(np.min(outer[outer > abs(x0)]))
        h, le, se = _shoot(pot, c, e_even, False, x_turn)
        _, lo, so = _shoot(pot, c, e_odd, True, x_turn)
        log_delta = math.log(c) - _log_overlap(h, le, se, lo, so)
        return TunnelingSplitting(math.exp(log_delta), e_even, e_even + math.exp(log_delta),
                                  "shooting")
    if method != "wronskian":
        raise ValueError(f"unknown method {method!r}")
    x = axis.points
    i0 = int(np.argmin(np.abs(x)))
    pe = res.eigenvectors[ie]
    po = res.eigenvectors[io]
    right = x > 0
    sgn_e = np.sign(np.sum(pe[right]))
    sgn_o = np.sign(np.sum(po[right]))
    pe, po = pe * sgn_e, po * sgn_o
    dpo = np.real(np.fft.ifft(1j * axis.wavenumbers(nyquist=False) * np.fft.fft(po)))
    overlap = float(np.sum((pe * po)[right]) * axis.dx)
    delta = c * float(pe[i0]) * float(dpo[i0]) / overlap
    return TunnelingSplitting(delta, e_even, e_even + delta, "wronskian")


def count_below(result: SpectrumResult, energy: float) -> int:
    return int(np.sum(result.eigenvalues < energy))


def sub_barrier_doublets(op: GridOperator, barrier: float, k_max: int = 400) -> int:
    """Number of even/odd doublets below ``barrier`` in a 1D double well."""
    k = min(k_max, op.size)
    res = eigen(op, k, vectors=False)
    n_below = count_below(res, barrier)
    if n_below == k:
        raise ValueError("all computed levels lie below the barrier; raise k_max")
    return n_below // 2


def write_spectrum_csv(path, rows) -> None:
    """rows: iterables of (epsilon, level_index, energy, gauge, residual)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon", "level_index", "energy", "gauge", "residual"])
        for eps, i, e, g, r in rows:
            w.writerow([repr(float(eps)), int(i), repr(float(e)), g, repr(float(r))])
