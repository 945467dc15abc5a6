"""Choose grid extents and sizes for a requested number of levels.

Estimates live in the acceleration-gauge picture, where the matter mass M and
the cavity oscillator (mu, Omega) are explicit:

* a Weyl count of matter levels plus cavity quanta fixes an energy cutoff;
* the matter axis covers the classically allowed region at that energy plus a
  WKB tail, the cavity axis the oscillator turning point plus Gaussian tails;
* the x-q shear between gauges widens x (AG) or the cavity momentum (MG).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cavityqc.grids import AxisGrid, ProductGrid, fast_size
from cavityqc.params import PhysicalParams, dressed_params
from cavityqc.potentials import PotentialModel

GAUGE_ALIASES = {"semiclassical_matter": "semiclassical"}

CAVITY_TAIL = 5.5    # oscillator lengths beyond the cavity turning point
MOMENTUM_TAIL = 4.5  # zero-point momenta beyond the classical matter momentum
WKB_TAIL = 14.0      # action (units of hbar) under the barrier at the edge


class PlanError(ValueError):
    pass


def _allowed_window(potential: PotentialModel, energy: float, center: float) -> np.ndarray:
    if potential.is_even:
        center = 0.0
    width = 1.0
    while width < 1e4:
        x = np.linspace(center - width, center + width, 4001)
        v = potential.value(x)
        if v[0] > energy and v[-1] > energy:
            return x
        width *= 2.0
    raise PlanError(f"potential {potential.kind} does not confine energy {energy:.4g}")


def matter_weyl_count(potential: PotentialModel, mass: float, hbar: float,
                      energy: float) -> float:
    """Phase-space area {p^2/2mass + V <= energy} / (2 pi hbar)."""
    x0, vmin = potential.minimum()
    if energy <= vmin:
        return 0.0
    x = _allowed_window(potential, energy, x0)
    ke = np.clip(energy - potential.value(x), 0.0, None)
    area = 2.0 * np.trapezoid(np.sqrt(2.0 * mass * ke), x)
    return area / (2.0 * math.pi * hbar)


def energy_cutoff(potential: PotentialModel, mass: float, hbar: float, n_states: float,
                  cavity_quantum: float | None = None) -> float:
    """Energy below which about ``n_states`` levels lie (matter x cavity ladder)."""
    _, vmin = potential.minimum()

    def count(e):
        if cavity_quantum is None:
            return matter_weyl_count(potential, mass, hbar, e)
        total, j = 0.0, 0
        while True:
            e_m = e - cavity_quantum * (j + 0.5)
            if e_m <= vmin:
                return total
            total += matter_weyl_count(potential, mass, hbar, e_m)
            j += 1

    lo, hi = vmin, vmin + 1.0
    if cavity_quantum is not None:
        hi += cavity_quantum
    while count(hi) < n_states:
        lo, hi = hi, vmin + 2.0 * (hi - vmin)
        if hi - vmin > 1e12:
            raise PlanError("could not bracket the energy cutoff")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if count(mid) < n_states:
            lo = mid
        else:
            hi = mid
    return hi


def _matter_extent(potential: PotentialModel, mass: float, hbar: float, energy: float,
                   center: float) -> tuple[float, float, float]:
    """Allowed interval (lo, hi) at ``energy`` and the WKB tail length.

    The tail is the larger of the two outward distances over which the
    barrier action reaches WKB_TAIL*hbar.
    """
    x = _allowed_window(potential, energy, center)
    inside = np.nonzero(potential.value(x) <= energy)[0]
    lo, hi = x[inside[0]], x[inside[-1]]
    step = (x[1] - x[0])
    tails = []
    for start, sign in ((lo, -1.0), (hi, +1.0)):
        s, xx = 0.0, start
        h = step
        while s < WKB_TAIL * hbar:
            xn = xx + sign * h
            dv = max(float(potential.value(0.5 * (xx + xn))) - energy, 0.0)
            s += math.sqrt(2.0 * mass * dv) * h
            xx = xn
            if abs(xx - start) > 1e4:
                raise PlanError("potential does not confine the wavefunction tail")
            if s == 0.0:
                h *= 1.5
        tails.append(abs(xx - start))
    return float(lo), float(hi), max(tails)


@dataclass(frozen=True)
class MatterExtent:
    """Classical half-ranges and tail lengths of the matter factor."""

    center: float
    x_cl: float
    x_tail: float
    p_cl: float
    p_tail: float


def matter_extent(potential: PotentialModel, mass: float, hbar: float,
                  energy: float) -> MatterExtent:
    x0, vmin = potential.minimum()
    curv = max(float(potential.second_derivative(x0)), 1e-12)
    p0 = math.sqrt(hbar * math.sqrt(mass * curv))
    lo, hi, tail = _matter_extent(potential, mass, hbar, energy, x0)
    center = 0.0 if potential.is_even else 0.5 * (lo + hi)
    x_cl = max(hi - center, center - lo)
    p_cl = math.sqrt(2.0 * mass * max(energy - vmin, 0.0))
    return MatterExtent(center, x_cl, tail, p_cl, MOMENTUM_TAIL * p0)


def _axis(center: float, half: float, p_half: float, hbar: float, label: str) -> AxisGrid:
    n = fast_size(2.0 * half * p_half / (math.pi * hbar))
    return AxisGrid(center - half, center + half, n, label)


def plan_matter_axis(potential: PotentialModel, mass: float, hbar: float, energy: float,
                     extra_half: float = 0.0, resolution: float = 1.0,
                     extent: float = 1.0) -> tuple[AxisGrid, float]:
    """Matter axis (no cavity correlations) and its half momentum range."""
    e = matter_extent(potential, mass, hbar, energy)
    half = (e.x_cl + e.x_tail + extra_half) * extent
    p_half = (e.p_cl + e.p_tail) * resolution
    return _axis(e.center, half, p_half, hbar, "x"), p_half


def plan_grid(gauge: str, physical: PhysicalParams, potential: PotentialModel,
              n_levels: int, resolution: float = 1.0, extent: float = 1.0,
              spare_levels: int = 3):
    """Grid for the lowest ``n_levels`` eigenpairs of the chosen gauge.

    ``resolution`` and ``extent`` scale the momentum and position ranges for
    refinement studies.
    """
    gauge = GAUGE_ALIASES.get(gauge, gauge)
    d = dressed_params(physical)
    hb = physical.hbar
    target = n_levels + spare_levels + 0.5
    if gauge == "semiclassical":
        e_cut = energy_cutoff(potential, d.M, hb, target)
        axis, _ = plan_matter_axis(potential, d.M, hb, e_cut, 0.0, resolution, extent)
        return axis
    if gauge not in ("MG", "MG_weak", "AG", "AG_rescaled", "AG_weak"):
        raise PlanError(f"unknown gauge {gauge!r}")

    quantum = hb * d.Omega
    e_cut = energy_cutoff(potential, d.M, hb, target, cavity_quantum=quantum)
    _, vmin = potential.minimum()
    j_max = max(0, math.floor((e_cut - vmin) / quantum - 0.5))
    root = math.sqrt(2 * j_max + 1)
    q_len = math.sqrt(hb / (d.mu * d.Omega))
    wp_len = math.sqrt(hb * d.mu * d.Omega)
    weak = gauge in ("MG_weak", "AG_weak")
    # weak builders use the bare mass; it gives the wider matter factor
    mass = physical.m if weak else d.M
    m = matter_extent(potential, mass, hb, e_cut - 0.5 * quantum)

    # Forced-oscillator response of x to the cavity at frequency Omega: in AG
    # x follows -zeta*q*chi, in MG x = x_AG + zeta*q. The cavity momentum
    # carries the matching zeta*p share (wp_MG = wp_AG + zeta*p). Near
    # resonance both pictures are fully sheared.
    x0, _ = potential.minimum()
    w_m2 = max(float(potential.second_derivative(x0)), 1e-12) / d.M
    chi = w_m2 / (w_m2 - d.Omega**2) if w_m2 != d.Omega**2 else math.inf
    share = min(1.0, abs(1.0 - chi) if gauge in ("MG", "MG_weak") else abs(chi))
    if weak:
        share = 1.0
    z = abs(d.zeta) * share
    # classical ranges add, independent tails add in quadrature
    x_half = (m.x_cl + z * root * q_len + math.hypot(m.x_tail, z * CAVITY_TAIL * q_len)) * extent
    p_half = (m.p_cl + m.p_tail) * resolution
    q_half = (root + CAVITY_TAIL) * q_len * extent
    wp_half = (root * wp_len + z * m.p_cl
               + math.hypot(CAVITY_TAIL * wp_len, z * m.p_tail)) * resolution

    matter = _axis(m.center, x_half, p_half, hb, "x")
    if gauge == "AG_rescaled":
        s = d.cavity_scale
        cavity = _axis(0.0, q_half / s, wp_half * s, hb, "Q")
    else:
        cavity = _axis(0.0, q_half, wp_half, hb, "q")
    return ProductGrid(matter, cavity)
