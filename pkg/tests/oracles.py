"""Reference calculations that share no code with the package."""

import numpy as np
from scipy.linalg import eigh_tridiagonal

H = 6.62607015e-34
HBAR = H / (2 * np.pi)
KB = 1.380649e-23


def grid_spectrum(ec, el, ej, phi_ext, n_levels=4, half_width=40.0, n=8001):
    """Fluxonium levels (GHz) by finite differences in the phase representation.

    H = -4 Ec d^2/dphi^2 + El/2 (phi + 2 pi phi_ext)^2 - Ej cos(phi), fourth-order
    accurate via Richardson extrapolation of two grids.
    """

    def levels(m):
        x = np.linspace(-half_width, half_width, m)
        h = x[1] - x[0]
        diag = 8 * ec / h**2 + 0.5 * el * (x + 2 * np.pi * phi_ext) ** 2 - ej * np.cos(x)
        off = np.full(m - 1, -4 * ec / h**2)
        return eigh_tridiagonal(diag, off, select="i", select_range=(0, n_levels - 1))[0], h

    e1, h1 = levels(n)
    e2, h2 = levels(2 * n - 1)
    return (e2 * h1**2 - e1 * h2**2) / (h1**2 - h2**2)


def ej_closed_form(ej1, ej2, phi_j):
    pj = 2 * np.pi * phi_j
    mag = np.sqrt(ej1**2 + ej2**2 + 2 * ej1 * ej2 * np.cos(pj))
    return mag


def offset_closed_form(ej1, ej2, phi_j):
    return np.arctan((ej1 - ej2) / (ej1 + ej2) * np.tan(np.pi * phi_j)) / (2 * np.pi)


def dielectric_rate_scalar(f_ghz, phi01_sq, ec_ghz, tan_delta, t_eff):
    w = 2 * np.pi * f_ghz * 1e9
    ec = ec_ghz * 1e9 * H
    return HBAR * w**2 / (4 * ec) * phi01_sq * tan_delta / np.tanh(HBAR * w / (2 * KB * t_eff))


def effective_temperature_scalar(p, f_ghz):
    return H * f_ghz * 1e9 / (KB * np.log((1 - p) / p))


def mean_sin2_theta(d_lo, d_hi, d0_lo, d0_hi):
    """E[(D0/E)^2] for D ~ U(d_lo, d_hi), D0 log-uniform, by 2-D quadrature in (D, log D0)."""
    from scipy.integrate import dblquad

    def integrand(d, u):
        d0 = np.exp(u)
        return d0**2 / (d**2 + d0**2)

    val, _ = dblquad(integrand, np.log(d0_lo), np.log(d0_hi), d_lo, d_hi, epsabs=1e-10, epsrel=1e-8)
    return val / ((d_hi - d_lo) * np.log(d0_hi / d0_lo))


def lorentzian_rate(g_hz, detuning_hz, gamma):
    """2 g^2 G / (G^2 + D^2) with g and D given as ordinary frequencies."""
    g = 2 * np.pi * g_hz
    d = 2 * np.pi * detuning_hz
    return 2 * g * g * gamma / (gamma * gamma + d * d)


def s_plus_scalar(t1_s, phi01, el_ghz):
    """Symmetric flux PSD in Phi0^2/Hz from T1: (hbar / E_L)^2 (phi0 / Phi0)^2 / (|phi01|^2 T1)."""
    el = el_ghz * 1e9 * H
    return (HBAR / el) ** 2 / (2 * np.pi) ** 2 / (phi01**2 * t1_s)
