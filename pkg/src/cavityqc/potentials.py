"""One-dimensional matter potentials V(x) and their displaced grid samples."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

KINDS = ("harmonic", "quartic_double_well", "morse", "polynomial")


class PotentialError(ValueError):
    pass


@dataclass(frozen=True)
class PotentialModel:
    """A matter potential.

    Parameters per kind::

        harmonic             omega0, mass      V = mass*omega0**2*x**2/2
        quartic_double_well  V_b, a            V = V_b*(x**2 - a**2)**2/a**4
        morse                D, alpha, x_e     V = D*(1 - exp(-alpha*(x - x_e)))**2
        polynomial           coefficients      V = sum_k c_k x**k
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "harmonic":
            p.setdefault("mass", 1.0)
            _require_positive(p, "omega0", "mass")
        elif self.kind == "quartic_double_well":
            _require_positive(p, "V_b", "a")
        elif self.kind == "morse":
            p.setdefault("x_e", 0.0)
            _require_positive(p, "D", "alpha")
        else:
            coeffs = [float(c) for c in p.get("coefficients", [])]
            if not coeffs:
                raise PotentialError("polynomial needs at least one coefficient")
            p["coefficients"] = coeffs
        object.__setattr__(self, "params", p)

    @classmethod
    def harmonic(cls, omega0: float = 1.0, mass: float = 1.0) -> "PotentialModel":
        return cls("harmonic", {"omega0": omega0, "mass": mass})

    @classmethod
    def double_well(cls, V_b: float = 1.0, a: float = 1.0) -> "PotentialModel":
        return cls("quartic_double_well", {"V_b": V_b, "a": a})

    @classmethod
    def morse(cls, D: float = 1.0, alpha: float = 1.0, x_e: float = 0.0) -> "PotentialModel":
        return cls("morse", {"D": D, "alpha": alpha, "x_e": x_e})

    @classmethod
    def polynomial(cls, coefficients) -> "PotentialModel":
        return cls("polynomial", {"coefficients": list(coefficients)})

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialModel":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "harmonic":
            return 0.5 * p["mass"] * p["omega0"] ** 2 * x * x
        if self.kind == "quartic_double_well":
            a2 = p["a"] ** 2
            return p["V_b"] * (x * x - a2) ** 2 / (a2 * a2)
        if self.kind == "morse":
            u = 1.0 - np.exp(-p["alpha"] * (x - p["x_e"]))
            return p["D"] * u * u
        return P.polyval(x, p["coefficients"])

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "harmonic":
            return p["mass"] * p["omega0"] ** 2 * x
        if self.kind == "quartic_double_well":
            a2 = p["a"] ** 2
            return 4.0 * p["V_b"] * x * (x * x - a2) / (a2 * a2)
        if self.kind == "morse":
            e = np.exp(-p["alpha"] * (x - p["x_e"]))
            return 2.0 * p["D"] * p["alpha"] * e * (1.0 - e)
        return P.polyval(x, P.polyder(p["coefficients"]))

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "harmonic":
            return np.full_like(x, p["mass"] * p["omega0"] ** 2)
        if self.kind == "quartic_double_well":
            a2 = p["a"] ** 2
            return 4.0 * p["V_b"] * (3.0 * x * x - a2) / (a2 * a2)
        if self.kind == "morse":
            e = np.exp(-p["alpha"] * (x - p["x_e"]))
            return 2.0 * p["D"] * p["alpha"] ** 2 * e * (2.0 * e - 1.0)
        coeffs = p["coefficients"]
        if len(coeffs) < 3:
            return np.zeros_like(x)
        return P.polyval(x, P.polyder(coeffs, 2))

    @property
    def is_even(self) -> bool:
        if self.kind in ("harmonic", "quartic_double_well"):
            return True
        if self.kind == "morse":
            return False
        return all(c == 0.0 for c in self.params["coefficients"][1::2])

    @property
    def barrier(self) -> float | None:
        """Barrier height for the double well, else None."""
        return self.params["V_b"] if self.kind == "quartic_double_well" else None

    def minimum(self) -> tuple[float, float]:
        """(x_min, V_min) of the global minimum."""
        p = self.params
        if self.kind == "harmonic":
            return 0.0, 0.0
        if self.kind == "quartic_double_well":
            return p["a"], 0.0
        if self.kind == "morse":
            return p["x_e"], 0.0
        coeffs = p["coefficients"]
        crit = P.polyroots(P.polyder(coeffs)) if len(coeffs) > 2 else np.array([0.0])
        crit = np.real(crit[np.abs(np.imag(crit)) < 1e-12]) if crit.size else np.array([0.0])
        vals = P.polyval(crit, coeffs)
        k = int(np.argmin(vals))
        return float(crit[k]), float(vals[k])


def _require_positive(p: dict, *names: str) -> None:
    for name in names:
        if name not in p:
            raise PotentialError(f"missing parameter {name!r}")
        v = float(p[name])
        if not math.isfinite(v) or v <= 0.0:
            raise PotentialError(f"{name} must be > 0, got {v!r}")
        p[name] = v


def evaluate(model: PotentialModel, x):
    return model.value(x)


def evaluate_derivative(model: PotentialModel, x):
    return model.derivative(x)


def displaced_on_grid(model: PotentialModel, grid, zeta_eff: float) -> np.ndarray:
    """V(x_i + zeta_eff*c_j) on a product grid (c = q or Q)."""
    X, C = grid.mesh()
    return model.value(X + zeta_eff * C)
