"""Cavity-coupled matter in the momentum and acceleration gauges.

Dressed-parameter algebra, grid Hamiltonians for both gauges, spectra,
split-operator dynamics, classical counterparts and a reproducible CLI.
"""

from cavityqc.params import (
    CouplingRegime,
    DressedParams,
    PhysicalParams,
    classify_regime,
    dressed_params,
    epsilon_max,
)

__version__ = "0.1.0"

__all__ = [
    "CouplingRegime",
    "DressedParams",
    "PhysicalParams",
    "classify_regime",
    "dressed_params",
    "epsilon_max",
    "__version__",
]
