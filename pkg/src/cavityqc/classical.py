"""Classical counterparts: symplectic flows, ensembles, sections and chaos tests.

Systems are separable, H = p**2/2mass + V(q), in one or two dimensions. All
routines are vectorized over a leading ensemble axis, so ``q`` and ``p`` have
shape (n_traj, dim).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import ConvexHull

from cavityqc.potentials import PotentialModel

# Yoshida fourth-order composition of leapfrog steps
_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = -(2.0 ** (1.0 / 3.0)) * _W1
YOSHIDA4 = (_W1, _W0, _W1)

SALI_CHAOTIC = 1e-8
SALI_REGULAR = 1e-4


class ClassicalIntegrationError(RuntimeError):
    def __init__(self, message: str, q=None, p=None, t=None):
        super().__init__(message)
        self.q, self.p, self.t = q, p, t


class SectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassicalSystem:
    """H = p**2/(2 mass) + V(q) with vectorized V, grad V and Hessian."""

    dim: int
    mass: float
    potential: Callable
    gradient: Callable
    hessian: Callable
    name: str = ""
    params: dict = field(default_factory=dict)

    def energy(self, q, p) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return np.sum(p * p, axis=-1) / (2.0 * self.mass) + self.potential(q)

    def force(self, q) -> np.ndarray:
        return -self.gradient(q)

    @classmethod
    def from_potential(cls, model: PotentialModel, mass: float = 1.0) -> "ClassicalSystem":
        """1D system for a matter potential; use mass M(eps) or the bare m."""
        return cls(
            1, float(mass),
            potential=lambda q: model.value(q[..., 0]),
            gradient=lambda q: model.derivative(q[..., 0])[..., None],
            hessian=lambda q: model.second_derivative(q[..., 0])[..., None, None],
            name=model.kind, params=model.to_dict())

    @classmethod
    def henon_heiles(cls, lam: float = 1.0, mass: float = 1.0) -> "ClassicalSystem":
        """V = (x**2 + y**2)/2 + lam*(x**2 y - y**3/3)."""
        def potential(q):
            x, y = q[..., 0], q[..., 1]
            return 0.5 * (x * x + y * y) + lam * (x * x * y - y ** 3 / 3.0)

        def gradient(q):
            x, y = q[..., 0], q[..., 1]
            return np.stack([x + 2.0 * lam * x * y, y + lam * (x * x - y * y)], axis=-1)

        def hessian(q):
            x, y = q[..., 0], q[..., 1]
            hxx = 1.0 + 2.0 * lam * y
            hxy = 2.0 * lam * x
            hyy = 1.0 - 2.0 * lam * y
            return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)

        return cls(2, float(mass), potential, gradient, hessian, "henon_heiles", {"lam": lam})

    @classmethod
    def harmonic_2d(cls, wx: float = 1.0, wy: float = 1.0, mass: float = 1.0
                    ) -> "ClassicalSystem":
        k = mass * np.array([wx * wx, wy * wy])

        def hessian(q):
            return np.broadcast_to(np.diag(k), q.shape[:-1] + (2, 2))

        return cls(2, float(mass), lambda q: 0.5 * np.sum(k * q * q, axis=-1),
                   lambda q: k * q, hessian, "harmonic_2d", {"wx": wx, "wy": wy})


def _coefficients(order: int) -> tuple:
    if order == 2:
        return (1.0,)
    if order == 4:
        return YOSHIDA4
    raise ValueError("order must be 2 or 4")


def _leapfrog(system: ClassicalSystem, q, p, h, tangents=None):
    """Kick-drift-kick step of size h (in place); tangents are (dq, dp) pairs."""
    inv_m = 1.0 / system.mass
    p -= 0.5 * h * system.gradient(q)
    if tangents:
        hess = system.hessian(q)
        for dq, dp in tangents:
            dp -= 0.5 * h * np.einsum("...ij,...j->...i", hess, dq)
    q += h * inv_m * p
    if tangents:
        for dq, dp in tangents:
            dq += h * inv_m * dp
    g = system.gradient(q)
    p -= 0.5 * h * g
    if tangents:
        hess = system.hessian(q)
        for dq, dp in tangents:
            dp -= 0.5 * h * np.einsum("...ij,...j->...i", hess, dq)
    return g


def step(system: ClassicalSystem, q, p, dt: float, order: int = 2, tangents=None) -> None:
    """One symplectic step of size dt, in place."""
    for c in _coefficients(order):
        _leapfrog(system, q, p, c * dt, tangents)


def _check_finite(q, p, t):
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        bad = np.nonzero(~(np.all(np.isfinite(q), axis=-1) & np.all(np.isfinite(p), axis=-1)))[0]
        raise ClassicalIntegrationError(
            f"non-finite state at t={t:.6g} for trajectories {bad[:10].tolist()}", q, p, t)


@dataclass
class Trajectory:
    times: np.ndarray
    q: np.ndarray   # (n_rec, n_traj, dim)
    p: np.ndarray
    energy: np.ndarray  # (n_rec, n_traj)

    def energy_error(self) -> np.ndarray:
        """max_t |E(t) - E(0)| / |E(0)| per trajectory."""
        e0 = self.energy[0]
        return np.max(np.abs(self.energy - e0), axis=0) / np.maximum(np.abs(e0), 1e-300)


def _as_ensemble(x, dim):
    x = np.array(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 else x[:, None]
    return x


def integrate(system: ClassicalSystem, q0, p0, dt: float, n_steps: int, order: int = 2,
              record_every: int = 1) -> Trajectory:
    """Symplectic integration (leapfrog or Yoshida-4) of one or many trajectories."""
    q = _as_ensemble(q0, system.dim)
    p = _as_ensemble(p0, system.dim)
    if q.shape != p.shape or q.shape[-1] != system.dim:
        raise ValueError("q0 and p0 must have matching shape (n, dim)")
    times, qs, ps, es = [0.0], [q.copy()], [p.copy()], [system.energy(q, p)]
    for i in range(1, n_steps + 1):
        step(system, q, p, dt, order)
        if i % record_every == 0 or i == n_steps:
            _check_finite(q, p, i * dt)
            times.append(i * dt)
            qs.append(q.copy())
            ps.append(p.copy())
            es.append(system.energy(q, p))
    return Trajectory(np.array(times), np.array(qs), np.array(ps), np.array(es))


def secular_energy_drift(energy: np.ndarray, window: int) -> float:
    """|mean of the last window - mean of the first window| / |E(0)|.

    Symplectic integrators keep a modified Hamiltonian, so E(t) oscillates at
    O(dt**order) without trend; this isolates the trend.
    """
    e = np.asarray(energy, dtype=float)
    return float(abs(np.mean(e[-window:]) - np.mean(e[:window])) / max(abs(e[0]), 1e-300))


def harmonic_energy_drift(dt: float, n_steps: int, order: int = 2, omega: float = 1.0,
                          window_periods: int = 50) -> dict:
    """Energy record of a 1D oscillator over ``n_steps`` steps.

    Returns the largest sampled deviation and the secular drift, i.e. the
    change of the mean energy between the first and the last
    ``window_periods`` oscillation periods.
    """
    system = ClassicalSystem.from_potential(PotentialModel.harmonic(omega), 1.0)
    q = np.array([[1.0]])
    p = np.array([[0.0]])
    e0 = float(system.energy(q, p)[0])
    window = min(n_steps // 2, int(round(window_periods * 2 * math.pi / (omega * dt))))
    energies = np.empty(n_steps + 1)
    energies[0] = e0
    for i in range(1, n_steps + 1):
        step(system, q, p, dt, order)
        energies[i] = 0.5 * (p[0, 0] ** 2 + (omega * q[0, 0]) ** 2)
    return {
        "max_deviation": float(np.max(np.abs(energies - e0)) / abs(e0)),
        "secular_drift": secular_energy_drift(energies, window),
        "final_state": (float(q[0, 0]), float(p[0, 0])),
    }


def reversibility_error(system: ClassicalSystem, q0, p0, dt: float, n_steps: int,
                        order: int = 2) -> float:
    """Integrate forward, flip momenta, integrate back; distance to the start."""
    q = _as_ensemble(q0, system.dim)
    p = _as_ensemble(p0, system.dim)
    q_start, p_start = q.copy(), p.copy()
    for _ in range(n_steps):
        step(system, q, p, dt, order)
    p *= -1.0
    for _ in range(n_steps):
        step(system, q, p, dt, order)
    p *= -1.0
    return float(max(np.max(np.abs(q - q_start)), np.max(np.abs(p - p_start))))


def monodromy(system: ClassicalSystem, q0, p0, dt: float, n_steps: int,
              order: int = 2) -> np.ndarray:
    """Tangent map of the discrete flow, shape (2 dim, 2 dim), for one trajectory."""
    d = system.dim
    q = _as_ensemble(q0, d)[:1]
    p = _as_ensemble(p0, d)[:1]
    tangents = []
    for k in range(2 * d):
        dq = np.zeros((1, d))
        dp = np.zeros((1, d))
        (dq if k < d else dp)[0, k % d] = 1.0
        tangents.append((dq, dp))
    for _ in range(n_steps):
        step(system, q, p, dt, order, tangents)
    return np.array([np.concatenate([dq[0], dp[0]]) for dq, dp in tangents]).T


def symplectic_defect(mat: np.ndarray) -> float:
    """max |M^T J M - J|."""
    d = mat.shape[0] // 2
    J = np.block([[np.zeros((d, d)), np.eye(d)], [-np.eye(d), np.zeros((d, d))]])
    return float(np.max(np.abs(mat.T @ J @ mat - J)))


# --- ensembles -------------------------------------------------------------------

@dataclass
class TrajectoryEnsembleRecord:
    sampling: dict
    times: np.ndarray
    mean: np.ndarray  # (n_rec, dim)
    var: np.ndarray   # (n_rec, dim)
    energy_error: np.ndarray  # per trajectory
    trajectories: Trajectory | None = None

    def to_csv(self, path) -> None:
        dim = self.mean.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"mean_{k}" for k in range(dim)] + [f"var_{k}" for k in range(dim)])
            for t, m, v in zip(self.times, self.mean, self.var):
                w.writerow([repr(float(t))] + [repr(float(a)) for a in m]
                           + [repr(float(a)) for a in v])


def wigner_gaussian_samples(x0, p0, sigma_x, hbar: float, n: int,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Samples of the Wigner function of a minimum-uncertainty Gaussian.

    Position width ``sigma_x`` per dimension, momentum width hbar/(2 sigma_x).
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    sx = np.broadcast_to(np.atleast_1d(np.asarray(sigma_x, dtype=float)), x0.shape)
    sp = hbar / (2.0 * sx)
    q = x0 + sx * rng.standard_normal((n, x0.size))
    p = p0 + sp * rng.standard_normal((n, x0.size))
    return q, p


def run_ensemble(system: ClassicalSystem, q0, p0, dt: float, n_steps: int, order: int = 4,
                 record_every: int = 1, keep_trajectories: bool = False,
                 sampling: dict | None = None) -> TrajectoryEnsembleRecord:
    """Propagate an ensemble and reduce moments in a fixed order."""
    q = _as_ensemble(q0, system.dim)
    p = _as_ensemble(p0, system.dim)
    e0 = system.energy(q, p)
    times, means, vars_, worst = [], [], [], np.zeros(q.shape[0])
    kept = [] if keep_trajectories else None

    def reduce(t):
        times.append(t)
        m = np.mean(q, axis=0)
        means.append(m)
        vars_.append(np.mean((q - m) ** 2, axis=0))
        np.maximum(worst, np.abs(system.energy(q, p) - e0) / np.maximum(np.abs(e0), 1e-300),
                   out=worst)
        if kept is not None:
            kept.append((q.copy(), p.copy()))

    reduce(0.0)
    for i in range(1, n_steps + 1):
        step(system, q, p, dt, order)
        if i % record_every == 0 or i == n_steps:
            _check_finite(q, p, i * dt)
            reduce(i * dt)
    traj = None
    if kept is not None:
        qs = np.array([a for a, _ in kept])
        ps = np.array([b for _, b in kept])
        traj = Trajectory(np.array(times), qs, ps,
                          np.array([system.energy(a, b) for a, b in kept]))
    return TrajectoryEnsembleRecord(sampling or {}, np.array(times), np.array(means),
                                    np.array(vars_), worst, traj)


# --- Poincare sections -----------------------------------------------------------

@dataclass
class PoincareSection:
    """Crossings of y = 0 with p_y > 0, recorded as (x, p_x) per seed."""

    energy: float
    points: np.ndarray   # (n, 2): x, p_x
    seed_ids: np.ndarray
    escaped: np.ndarray  # per seed
    residual: float      # largest |y| at the recorded crossings
    labels: np.ndarray | None = None

    def seed_points(self, seed: int) -> np.ndarray:
        return self.points[self.seed_ids == seed]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "p_x", "seed_id", "class"])
            for (x, px), sid in zip(self.points, self.seed_ids):
                label = "" if self.labels is None else self.labels[sid]
                w.writerow([repr(float(x)), repr(float(px)), int(sid), label])


def section_momentum(system: ClassicalSystem, energy: float, x, px) -> np.ndarray:
    """p_y >= 0 on the energy shell at y = 0 (NaN where not allowed)."""
    x = np.asarray(x, dtype=float)
    px = np.asarray(px, dtype=float)
    q = np.stack([x, np.zeros_like(x)], axis=-1)
    rest = 2.0 * system.mass * (energy - system.potential(q)) - px * px
    return np.where(rest >= 0.0, np.sqrt(np.maximum(rest, 0.0)), np.nan)


def seeds_on_section(system: ClassicalSystem, energy: float, n: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeds uniform in the allowed (x, p_x) region of the y = 0 section."""
    xs = np.linspace(-10.0, 10.0, 20001)
    q = np.stack([xs, np.zeros_like(xs)], axis=-1)
    allowed = xs[system.potential(q) <= energy]
    if allowed.size == 0:
        raise SectionError("energy is below the potential on the section line")
    lo, hi = allowed.min(), allowed.max()
    pmax = math.sqrt(2.0 * system.mass * (energy - float(np.min(system.potential(q)))))
    out_x, out_p = [], []
    while len(out_x) < n:
        x = rng.uniform(lo, hi, 4 * n)
        px = rng.uniform(-pmax, pmax, 4 * n)
        ok = np.isfinite(section_momentum(system, energy, x, px))
        out_x.extend(x[ok].tolist())
        out_p.extend(px[ok].tolist())
    x = np.array(out_x[:n])
    px = np.array(out_p[:n])
    py = section_momentum(system, energy, x, px)
    q0 = np.stack([x, np.zeros(n)], axis=-1)
    p0 = np.stack([px, py], axis=-1)
    return q0, p0


def _rhs_in_y(system: ClassicalSystem, state):
    """d(x, y, px, py)/dy along the flow (Henon's trick)."""
    q = state[:, :2]
    p = state[:, 2:]
    qdot = p / system.mass
    pdot = -system.gradient(q)
    deriv = np.concatenate([qdot, pdot], axis=1)
    return deriv / qdot[:, 1:2]


def _henon_to_section(system: ClassicalSystem, q, p, substeps: int = 8):
    """RK4 in the independent variable y from the current y down to y = 0."""
    state = np.concatenate([q, p], axis=1)
    h = -q[:, 1] / substeps
    for _ in range(substeps):
        k1 = _rhs_in_y(system, state)
        k2 = _rhs_in_y(system, state + 0.5 * h[:, None] * k1)
        k3 = _rhs_in_y(system, state + 0.5 * h[:, None] * k2)
        k4 = _rhs_in_y(system, state + h[:, None] * k3)
        state = state + h[:, None] / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return state


def poincare_section(system: ClassicalSystem, energy: float, q0, p0, dt: float,
                     n_crossings: int, order: int = 4, max_steps: int = 2_000_000,
                     escape_radius: float = 10.0) -> PoincareSection:
    """Section y = 0, p_y > 0 for every seed, located by Henon's trick."""
    if system.dim != 2:
        raise ValueError("Poincare sections need a 2D system")
    q = _as_ensemble(q0, 2).copy()
    p = _as_ensemble(p0, 2).copy()
    n = q.shape[0]
    counts = np.zeros(n, dtype=int)
    escaped = np.zeros(n, dtype=bool)
    pts, ids = [], []
    residual = 0.0
    for _ in range(max_steps):
        active = (counts < n_crossings) & ~escaped
        if not active.any():
            break
        y_prev = q[:, 1].copy()
        step(system, q, p, dt, order)
        gone = ~escaped & ~(np.linalg.norm(q, axis=1) <= escape_radius)
        if gone.any():
            # park escaped orbits at the origin so they stay finite
            escaped |= gone
            y_prev[gone] = 0.0
            q[gone] = 0.0
            p[gone] = 0.0
        hit = active & ~escaped & (y_prev < 0.0) & (q[:, 1] >= 0.0) & (p[:, 1] > 0.0)
        if hit.any():
            s = _henon_to_section(system, q[hit], p[hit])
            residual = max(residual, float(np.max(np.abs(s[:, 1]))))
            pts.append(s[:, [0, 2]])
            ids.append(np.nonzero(hit)[0])
            counts[hit] += 1
    points = np.concatenate(pts) if pts else np.zeros((0, 2))
    seed_ids = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
    order_ = np.lexsort((np.arange(seed_ids.size), seed_ids))
    return PoincareSection(energy, points[order_], seed_ids[order_], escaped, residual)


# --- chaos indicator -------------------------------------------------------------

@dataclass
class ChaoticFraction:
    fraction: float
    stderr: float
    n_chaotic: int
    n_regular: int
    n_indeterminate: int
    labels: np.ndarray       # "chaotic" / "regular" / "indeterminate" per seed
    sali: np.ndarray
    thresholds: dict

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "stderr": self.stderr,
                "n_chaotic": self.n_chaotic, "n_regular": self.n_regular,
                "n_indeterminate": self.n_indeterminate, "thresholds": self.thresholds}


def sali(system: ClassicalSystem, q0, p0, dt: float, t_max: float, order: int = 2,
         stop_below: float = SALI_CHAOTIC, rng: np.random.Generator | None = None,
         escape_radius: float = 10.0) -> np.ndarray:
    """Smaller alignment index at t_max (or when it first drops below ``stop_below``).

    Two deviation vectors follow the tangent map of the integrator and are
    renormalized every step; SALI = min(|w1 + w2|, |w1 - w2|). Orbits that
    leave ``escape_radius`` get NaN.
    """
    q = _as_ensemble(q0, system.dim).copy()
    p = _as_ensemble(p0, system.dim).copy()
    n, d = q.shape
    rng = rng or np.random.default_rng(0)
    tangents = []
    for _ in range(2):
        w = rng.standard_normal((n, 2 * d))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        tangents.append((w[:, :d].copy(), w[:, d:].copy()))
    out = np.full(n, np.inf)
    escaped = np.zeros(n, dtype=bool)
    n_steps = int(math.ceil(t_max / dt))
    for _ in range(n_steps):
        step(system, q, p, dt, order, tangents)
        gone = ~escaped & ~(np.linalg.norm(q, axis=1) <= escape_radius)
        if gone.any():
            # park escaped orbits at rest at the origin; they are reported as NaN
            escaped |= gone
            q[gone] = 0.0
            p[gone] = 0.0
            for dq, dp in tangents:
                dq[gone] = 1.0
                dp[gone] = 0.0
        ws = []
        for dq, dp in tangents:
            norm = np.sqrt(np.sum(dq * dq, axis=1) + np.sum(dp * dp, axis=1))[:, None]
            dq /= norm
            dp /= norm
            ws.append(np.concatenate([dq, dp], axis=1))
        s = np.minimum(np.linalg.norm(ws[0] + ws[1], axis=1),
                       np.linalg.norm(ws[0] - ws[1], axis=1))
        newly = np.isinf(out) & (s < stop_below) & ~escaped
        out[newly] = s[newly]
        if np.all(np.isfinite(out) | escaped):
            break
    out = np.where(np.isfinite(out), out, s)
    out[escaped] = np.nan
    return out


def classify_sali(values: np.ndarray, chaotic: float = SALI_CHAOTIC,
                  regular: float = SALI_REGULAR) -> np.ndarray:
    labels = np.full(values.shape, "indeterminate", dtype=object)
    values = np.nan_to_num(values, nan=0.5 * (chaotic + regular))
    labels[values < chaotic] = "chaotic"
    labels[values > regular] = "regular"
    return labels


def chaotic_fraction(system: ClassicalSystem, energy: float, n_seeds: int, seed: int = 0,
                     dt: float = 0.05, t_max: float = 2000.0, n_boot: int = 1000,
                     thresholds: tuple = (SALI_CHAOTIC, SALI_REGULAR)) -> ChaoticFraction:
    """Fraction of section seeds classified chaotic by SALI, with bootstrap error.

    Seeds are uniform over the allowed part of the y = 0 section, so the
    fraction estimates the chaotic share of the section area. Indeterminate
    seeds are excluded from the fraction and reported.
    """
    rng = np.random.default_rng(seed)
    q0, p0 = seeds_on_section(system, energy, n_seeds, rng)
    values = sali(system, q0, p0, dt, t_max, rng=rng)
    labels = classify_sali(values, *thresholds)
    decided = labels != "indeterminate"
    chaotic = (labels == "chaotic")[decided].astype(float)
    if chaotic.size == 0:
        raise SectionError("no seed could be classified")
    frac = float(np.mean(chaotic))
    boot = rng.choice(chaotic, size=(n_boot, chaotic.size), replace=True).mean(axis=1)
    return ChaoticFraction(frac, float(np.std(boot)), int(np.sum(labels == "chaotic")),
                           int(np.sum(labels == "regular")), int(np.sum(~decided)),
                           labels, values,
                           {"chaotic_below": thresholds[0], "regular_above": thresholds[1],
                            "t_max": t_max, "dt": dt})


# --- phase-space area and state counting -----------------------------------------

@dataclass(frozen=True)
class IslandCount:
    count: float
    uncertainty: float
    area: float
    area_uncertainty: float


def _closed(points: np.ndarray, n_bins: int = 16) -> bool:
    c = points.mean(axis=0)
    ang = np.arctan2(points[:, 1] - c[1], points[:, 0] - c[0])
    hist, _ = np.histogram(ang, bins=n_bins, range=(-math.pi, math.pi))
    return bool(np.all(hist > 0))


def island_area(points: np.ndarray) -> tuple[float, float]:
    """Convex-hull area of an island's section points, with a split-half error."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 16 or not _closed(points):
        raise SectionError("island is not closed by the section points")
    area = float(ConvexHull(points).volume)
    halves = [points[0::2], points[1::2]]
    half_areas = [float(ConvexHull(h).volume) for h in halves if h.shape[0] >= 3]
    err = max((abs(area - a) for a in half_areas), default=area)
    return area, err


def island_state_count(section: PoincareSection, seeds, hbar_eff: float) -> IslandCount:
    """area / (2 pi hbar_eff) for the island traced by the selected seeds.

    ``seeds`` is a seed id or a list of ids; for nested invariant curves the
    outermost one sets the area.
    """
    ids = np.atleast_1d(seeds)
    pts = section.points[np.isin(section.seed_ids, ids)]
    area, err = island_area(pts)
    scale = 2.0 * math.pi * hbar_eff
    return IslandCount(area / scale, err / scale, area, err)


def count_from_area(area: float, hbar_eff: float, area_err: float = 0.0) -> IslandCount:
    scale = 2.0 * math.pi * hbar_eff
    return IslandCount(area / scale, area_err / scale, area, area_err)


def phase_area_1d(potential: PotentialModel, mass: float, energy: float,
                  lo: float, hi: float, n: int = 200001) -> float:
    """Area of {p**2/2mass + V(x) <= energy, lo <= x <= hi}."""
    x = np.linspace(lo, hi, n)
    ke = np.clip(energy - potential.value(x), 0.0, None)
    return float(2.0 * np.trapezoid(np.sqrt(2.0 * mass * ke), x))


def well_action(potential: PotentialModel, mass: float = 1.0) -> float:
    """Phase area of one well of a symmetric double well below the barrier top."""
    vb = potential.barrier
    if vb is None:
        raise ValueError("well_action needs a double-well potential")
    a = potential.params["a"]
    return phase_area_1d(potential, mass, vb, 0.0, a * math.sqrt(2.0))
