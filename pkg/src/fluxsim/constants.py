"""Physical constants (CODATA, via scipy) and unit helpers.

Conventions used throughout the package: energies are E/h in GHz, fluxes in
units of the flux quantum, phases in radians, rates in 1/s, temperatures in K.
"""

import numpy as np
from scipy import constants as _c

h = _c.h
hbar = _c.hbar
k_B = _c.k
e = _c.e
PHI0 = _c.physical_constants["mag. flux quantum"][0]
phi0 = PHI0 / (2 * np.pi)  # reduced flux quantum

GHZ = 1e9
MICRO_PHI0 = 1e-6


def ghz_to_joule(x):
    return x * h * GHZ


def ghz_to_rad(f_ghz):
    """Angular frequency in rad/s for a frequency in GHz."""
    return 2 * np.pi * GHZ * f_ghz
