"""Periodic position grids, conjugate momentum grids and the Fock ladder.

All grids follow the periodic convention: ``n`` points starting at ``x_min``
with spacing ``(x_max - x_min)/n``; the point at ``x_max`` is excluded.
Momentum operators act spectrally through the FFT.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

AXIS_LABELS = ("x", "q", "Q")


class GridError(ValueError):
    """Invalid grid parameters."""


class GridPerformanceWarning(UserWarning):
    """Transform size with large prime factors."""


class GridSupportWarning(UserWarning):
    """A function does not fit on its grid."""


def _is_smooth(n: int) -> bool:
    for f in (2, 3, 5):
        while n % f == 0:
            n //= f
    return n == 1


def fast_size(n: int) -> int:
    """Smallest even integer >= n of the form 2**a * 3**b * 5**c."""
    n = max(int(math.ceil(n)), 8)
    while n % 2 or not _is_smooth(n):
        n += 1
    return n


@dataclass(frozen=True)
class AxisGrid:
    x_min: float
    x_max: float
    n: int
    label: str = "x"

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise GridError("axis bounds must be finite")
        if self.x_min >= self.x_max:
            raise GridError(f"x_min ({self.x_min}) must be < x_max ({self.x_max})")
        if int(self.n) != self.n or self.n < 8:
            raise GridError(f"need n >= 8 points, got {self.n}")
        if self.label not in AXIS_LABELS:
            raise GridError(f"unknown axis label {self.label!r}")
        object.__setattr__(self, "n", int(self.n))
        if not _is_smooth(self.n):
            warnings.warn(
                f"axis {self.label}: n={self.n} has prime factors > 5, FFTs will be slow",
                GridPerformanceWarning, stacklevel=3)

    @classmethod
    def centered(cls, half_width: float, n: int, label: str = "x") -> "AxisGrid":
        return cls(-float(half_width), float(half_width), n, label)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    def wavenumbers(self, nyquist: bool = True) -> np.ndarray:
        """Angular wavenumbers in FFT order; Nyquist entry zeroed if asked."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        if not nyquist and self.n % 2 == 0:
            k[self.n // 2] = 0.0
        return k

    def momenta(self, hbar: float, nyquist: bool = True) -> np.ndarray:
        """Conjugate momenta, spanning [-pi*hbar/dx, pi*hbar/dx)."""
        return hbar * self.wavenumbers(nyquist)

    def is_symmetric(self) -> bool:
        """True when the point set is closed under x -> -x modulo the period."""
        return self.n % 2 == 0 and abs(self.x_min + self.x_max) <= 1e-12 * self.length

    def mirror_index(self) -> np.ndarray:
        """Index map i -> j with x_j = -x_i (needs a symmetric axis)."""
        if not self.is_symmetric():
            raise GridError("axis is not symmetric about the origin")
        return (self.n - np.arange(self.n)) % self.n

    def refined(self, factor: int = 2) -> "AxisGrid":
        return AxisGrid(self.x_min, self.x_max, self.n * factor, self.label)

    def extended(self, factor: int = 2) -> "AxisGrid":
        c = 0.5 * (self.x_min + self.x_max)
        half = 0.5 * self.length * factor
        return AxisGrid(c - half, c + half, self.n * factor, self.label)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n": self.n, "label": self.label}


@dataclass(frozen=True)
class ProductGrid:
    """Matter axis times cavity axis; arrays are indexed [i_matter, j_cavity]."""

    matter: AxisGrid
    cavity: AxisGrid

    @property
    def axes(self) -> tuple[AxisGrid, AxisGrid]:
        return (self.matter, self.cavity)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.matter.n, self.cavity.n)

    @property
    def size(self) -> int:
        return self.matter.n * self.cavity.n

    @property
    def cell(self) -> float:
        return self.matter.dx * self.cavity.dx

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.matter.points, self.cavity.points, indexing="ij")

    def momentum_mesh(self, hbar: float, nyquist: bool = True):
        return np.meshgrid(self.matter.momenta(hbar, nyquist),
                           self.cavity.momenta(hbar, nyquist), indexing="ij")

    def to_dict(self) -> dict:
        return {"matter": self.matter.to_dict(), "cavity": self.cavity.to_dict()}


def axes_of(grid) -> tuple[AxisGrid, ...]:
    """Uniform access to the axes of an AxisGrid or ProductGrid."""
    return (grid,) if isinstance(grid, AxisGrid) else grid.axes


def cell_of(grid) -> float:
    return float(np.prod([a.dx for a in axes_of(grid)]))


def _axis_from_spec(spec, label: str) -> AxisGrid:
    if isinstance(spec, AxisGrid):
        return spec
    if isinstance(spec, dict):
        return AxisGrid(float(spec["x_min"]), float(spec["x_max"]), int(spec["n"]),
                        spec.get("label", label))
    x_min, x_max, n = spec
    return AxisGrid(float(x_min), float(x_max), int(n), label)


def build_product_grid(matter_spec, cavity_spec, cavity_label: str = "q") -> ProductGrid:
    """Build a product grid from AxisGrids, dicts or ``(x_min, x_max, n)`` tuples."""
    matter = _axis_from_spec(matter_spec, "x")
    cavity = _axis_from_spec(cavity_spec, cavity_label)
    if matter.label != "x":
        raise GridError("matter axis must carry label 'x'")
    if cavity.label not in ("q", "Q"):
        raise GridError("cavity axis must carry label 'q' or 'Q'")
    return ProductGrid(matter, cavity)


def rescaled_cavity_axis(n: int, hbar: float, n_sigma: float = 8.0) -> AxisGrid:
    """Q axis wide enough for the dressed ground Gaussian (sigma = sqrt(hbar/2))."""
    if n_sigma < 6.0:
        raise GridError("the Q axis must cover at least 6 sigma")
    sigma = math.sqrt(hbar / 2.0)
    return AxisGrid.centered(n_sigma * sigma, n, "Q")


def to_momentum(psi: np.ndarray) -> np.ndarray:
    return np.fft.fftn(psi)


def from_momentum(phi: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(phi)


def spectral_matrix(axis: AxisGrid, symbol: np.ndarray) -> np.ndarray:
    """Dense matrix of the Fourier multiplier ``symbol`` (given in FFT order).

    Returns a real array when the multiplier maps real fields to real fields.
    """
    eye = np.eye(axis.n)
    mat = np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0)
    if np.max(np.abs(mat.imag)) < 1e-12 * max(1.0, np.max(np.abs(mat.real))):
        return np.ascontiguousarray(mat.real)
    return mat


def derivative_matrix(axis: AxisGrid) -> np.ndarray:
    """Real antisymmetric spectral d/dx (Nyquist mode dropped)."""
    return spectral_matrix(axis, 1j * axis.wavenumbers(nyquist=False))


def second_derivative_matrix(axis: AxisGrid) -> np.ndarray:
    return spectral_matrix(axis, -axis.wavenumbers() ** 2)


@dataclass(frozen=True)
class FockLadder:
    n_max: int
    a: np.ndarray
    adag: np.ndarray
    q: np.ndarray
    wp: np.ndarray

    @property
    def number(self) -> np.ndarray:
        return self.adag @ self.a


def fock_ladder(n_max: int, omega: float, hbar: float) -> FockLadder:
    """Truncated ladder operators and cavity quadratures.

    q = i*sqrt(hbar/(2 omega))*(a - a^dag), wp = sqrt(hbar*omega/2)*(a + a^dag).
    The commutator [q, wp] equals i*hbar except in the last diagonal entry.
    """
    if int(n_max) != n_max or n_max < 2:
        raise GridError("n_max must be an integer >= 2")
    a = np.diag(np.sqrt(np.arange(1, n_max, dtype=float)), k=1).astype(complex)
    adag = a.conj().T
    q = 1j * math.sqrt(hbar / (2.0 * omega)) * (a - adag)
    wp = math.sqrt(hbar * omega / 2.0) * (a + adag)
    return FockLadder(int(n_max), a, adag, q, wp)


def ho_eigenfunction_on_grid(n: int, axis: AxisGrid, mass: float, freq: float,
                             hbar: float, center: float = 0.0) -> np.ndarray:
    """Normalized oscillator eigenfunction |n> sampled on ``axis``.

    Uses the stable three-term recurrence for Hermite functions.
    """
    if n < 0:
        raise ValueError("quantum number must be >= 0")
    alpha = mass * freq / hbar
    y = math.sqrt(alpha) * (axis.points - center)
    prev = np.zeros_like(y)
    cur = (alpha / math.pi) ** 0.25 * np.exp(-0.5 * y * y)
    for k in range(n):
        prev, cur = cur, math.sqrt(2.0 / (k + 1)) * y * cur - math.sqrt(k / (k + 1)) * prev
    tail = 1.0 - float(np.sum(cur * cur) * axis.dx)
    if abs(tail) > 1e-12:
        warnings.warn(f"oscillator state n={n}: {tail:.2e} of the norm lies off the grid",
                      GridSupportWarning, stacklevel=2)
    return cur
