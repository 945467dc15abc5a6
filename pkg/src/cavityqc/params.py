"""Coupling-dependent model parameters.

Everything that depends on the cavity coupling ``epsilon`` is computed here
from closed forms, in whatever model units the caller uses.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

WEAK_RATIO = 0.1
STRONG_RATIO = 10.0
# Past this ratio the single-mode model is suspect; reported, never enforced.
SINGLE_MODE_RATIO_NOTE = 1e6


class ParameterError(ValueError):
    """Invalid physical parameters."""


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PhysicalParams:
    """Bare model inputs: matter mass, cavity frequency, hbar and coupling."""

    m: float = 1.0
    omega: float = 1.0
    hbar: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        for name in ("m", "omega", "hbar"):
            object.__setattr__(self, name, _check_positive(name, getattr(self, name)))
        eps = float(self.epsilon)
        if not math.isfinite(eps) or eps < 0.0:
            raise ParameterError(f"epsilon must be finite and >= 0, got {eps!r}")
        object.__setattr__(self, "epsilon", eps)

    def with_epsilon(self, epsilon: float) -> "PhysicalParams":
        return PhysicalParams(self.m, self.omega, self.hbar, epsilon)

    @property
    def bare_scale(self) -> float:
        """m*hbar*omega**3, the scale 2*epsilon**2 is compared against."""
        return self.m * self.hbar * self.omega**3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DressedParams:
    varsigma: float
    M: float
    zeta: float
    mu: float
    Omega: float
    xi: float
    hbar_eff: float
    epsilon_max: float

    @property
    def cavity_scale(self) -> float:
        """Length factor s with q = s*Q for the rescaled cavity coordinate."""
        # sqrt(mu)*omega == mu*Omega
        return (self.mu * self.Omega) ** -0.5

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CouplingRegime:
    label: str
    ratio: float


def coupling_ratio(p: PhysicalParams) -> float:
    """2*epsilon**2 / (m*hbar*omega**3)."""
    return 2.0 * p.epsilon**2 / p.bare_scale


def epsilon_max(p: PhysicalParams) -> float:
    """Coupling at which the acceleration-gauge coupling zeta peaks."""
    return math.sqrt(p.bare_scale / 2.0)


def zeta_of(p: PhysicalParams, epsilon):
    """zeta(epsilon) for scalar or array epsilon, other parameters from ``p``."""
    eps = np.asarray(epsilon, dtype=float)
    out = eps * p.omega * np.sqrt(2.0 * p.hbar * p.omega) / (p.bare_scale + 2.0 * eps**2)
    return float(out) if out.ndim == 0 else out


def hbar_eff_of(p: PhysicalParams, epsilon):
    eps = np.asarray(epsilon, dtype=float)
    M = p.m + 2.0 * eps**2 / (p.hbar * p.omega**3)
    out = p.hbar * np.sqrt(p.m / M)
    return float(out) if out.ndim == 0 else out


def dressed_params(p: PhysicalParams) -> DressedParams:
    m, w, hb, eps = p.m, p.omega, p.hbar, p.epsilon
    denom = p.bare_scale + 2.0 * eps**2
    varsigma = (eps / w) * math.sqrt(2.0 / (hb * w))
    M = m + 2.0 * eps**2 / (hb * w**3)
    zeta = eps * w * math.sqrt(2.0 * hb * w) / denom
    mu = m / M
    Omega = w / math.sqrt(mu)
    xi = zeta * (math.sqrt(mu) * w) ** -0.5
    hbar_eff = hb * math.sqrt(m / M)
    ratio = 2.0 * eps**2 / p.bare_scale
    if ratio > SINGLE_MODE_RATIO_NOTE:
        log.warning(
            "coupling ratio 2eps^2/(m hbar omega^3) = %.3g; the single-mode model "
            "ignores mass renormalization from other cavity modes here", ratio)
    return DressedParams(
        varsigma=varsigma, M=M, zeta=zeta, mu=mu, Omega=Omega, xi=xi,
        hbar_eff=hbar_eff, epsilon_max=epsilon_max(p),
    )


def classify_regime(p: PhysicalParams) -> CouplingRegime:
    ratio = coupling_ratio(p)
    if ratio < WEAK_RATIO:
        label = "weak"
    elif ratio > STRONG_RATIO:
        label = "strong"
    else:
        label = "crossover"
    return CouplingRegime(label, ratio)
