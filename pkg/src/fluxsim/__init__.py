"""Modelling toolkit for an E_J-tunable fluxonium qubit."""

__version__ = "0.1.0"

from .circuit import (  # noqa: E402
    DEVICE_PARAMS,
    CircuitParams,
    FluxBias,
    SpectrumResult,
    diagonalize,
    effective_ej,
    flux_offset,
    sweet_spot_locate,
)
from .decoherence import NoiseModel  # noqa: E402
from .errors import *  # noqa: E402,F401,F403

__all__ = [
    "DEVICE_PARAMS",
    "CircuitParams",
    "FluxBias",
    "NoiseModel",
    "SpectrumResult",
    "diagonalize",
    "effective_ej",
    "flux_offset",
    "sweet_spot_locate",
]
