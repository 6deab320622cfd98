"""EJ-tunable fluxonium: Hamiltonian construction, diagonalization and flux derivatives.

The Hamiltonian is represented in the harmonic-oscillator basis of the
(E_C, E_L) oscillator, ``phi = phi_zpf (a + a^dag)``.  External flux is
placed in the Josephson term,

    H = 4 E_C n^2 + E_L/2 phi^2 - E_J1 cos(phi - th1) - E_J2 cos(phi - th2),

with ``th1 = 2 pi (phi_l - phi_j/2)`` and ``th2 = 2 pi (phi_l + phi_j/2)``,
which is the same operator as ``-E_J(phi_j) cos(phi - 2 pi phi_ext)`` with
``phi_ext = phi_l - flux_offset(phi_j)``.  Moving the flux into the inductive
term is a translation of ``phi`` and leaves every off-diagonal matrix element
unchanged.

Charge sign convention: ``[n, phi] = i``, so that
``<i|n|j> = i (E_j - E_i) <i|phi|j> / (8 E_C)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .errors import ConfigError, ConvergenceError, NoMinimumError

TWO_PI = 2 * np.pi

DEFAULT_BASIS_DIM = 120
MAX_BASIS_DIM = 400
CONVERGENCE_STEP = 20
CONVERGENCE_TOL_GHZ = 1e-6  # 1 kHz
DERIVATIVE_STEP = 1e-5  # flux quanta


@dataclass(frozen=True)
class CircuitParams:
    """Circuit energies (E/h, GHz) and oscillator-basis truncation."""

    ec_ghz: float
    el_ghz: float
    ej1_ghz: float
    ej2_ghz: float
    basis_dim: int = DEFAULT_BASIS_DIM

    def __post_init__(self):
        for name in ("ec_ghz", "el_ghz"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        # junction energies may vanish (bare inductively shunted box)
        for name in ("ej1_ghz", "ej2_ghz"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value!r}")
        if int(self.basis_dim) != self.basis_dim or self.basis_dim < 10:
            raise ConfigError(f"basis_dim must be an integer >= 10, got {self.basis_dim!r}")

    @property
    def ej_sum(self) -> float:
        return self.ej1_ghz + self.ej2_ghz

    @property
    def asymmetry(self) -> float:
        """(E_J1 - E_J2) / (E_J1 + E_J2)."""
        if self.ej_sum == 0:
            return 0.0
        return (self.ej1_ghz - self.ej2_ghz) / self.ej_sum

    def with_basis(self, basis_dim: int) -> CircuitParams:
        return replace(self, basis_dim=int(basis_dim))

    def to_dict(self) -> dict:
        return {
            "ec_ghz": self.ec_ghz,
            "el_ghz": self.el_ghz,
            "ej1_ghz": self.ej1_ghz,
            "ej2_ghz": self.ej2_ghz,
            "basis_dim": self.basis_dim,
        }

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text: str) -> CircuitParams:
        """Parse ``key = value`` lines (``:`` also accepted, ``#`` starts a comment)."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split(sep, 1))
            values[key.lower()] = value
        known = {"ec_ghz", "el_ghz", "ej1_ghz", "ej2_ghz", "basis_dim"}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown device keys: {sorted(unknown)}")
        missing = known - {"basis_dim"} - set(values)
        if missing:
            raise ConfigError(f"missing device keys: {sorted(missing)}")
        try:
            kwargs = {k: float(values[k]) for k in known - {"basis_dim"}}
            if "basis_dim" in values:
                kwargs["basis_dim"] = int(values["basis_dim"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> CircuitParams:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read device file {path}: {exc}") from exc
        return cls.from_text(text)


#: Energies fitted to the measured device.
DEVICE_PARAMS = CircuitParams(ec_ghz=1.49, el_ghz=0.65, ej1_ghz=7.12, ej2_ghz=7.07)


def _reduce_half_open(phi_j):
    """Map phi_j into (-0.5, 0.5]."""
    phi_j = np.asarray(phi_j, dtype=float)
    return phi_j - np.ceil(phi_j - 0.5)


def effective_ej(params: CircuitParams, phi_j):
    """Signed effective Josephson energy of the SQUID in GHz.

    ``sign(cos(pi phi_j)) * sqrt(E_J1^2 + E_J2^2 + 2 E_J1 E_J2 cos(2 pi phi_j))``.
    At the singular points ``phi_j = 1/2 + n`` the sign is taken as +1.
    """
    phi_j = np.asarray(phi_j, dtype=float)
    a, b = params.ej1_ghz, params.ej2_ghz
    mag = np.sqrt(np.maximum(a * a + b * b + 2 * a * b * np.cos(TWO_PI * phi_j), 0.0))
    wrapped = np.mod(phi_j, 2.0)
    sign = np.where((wrapped <= 0.5) | (wrapped >= 1.5), 1.0, -1.0)
    out = sign * mag
    return float(out) if out.ndim == 0 else out


def effective_ej_derivative(params: CircuitParams, phi_j):
    """d E_J / d phi_j in GHz per flux quantum."""
    ej = effective_ej(params, phi_j)
    a, b = params.ej1_ghz, params.ej2_ghz
    return -TWO_PI * a * b * np.sin(TWO_PI * np.asarray(phi_j, dtype=float)) / ej


def flux_offset(params: CircuitParams, phi_j):
    """phi_j-dependent loop-flux offset ``Phi_L^(0)`` in flux quanta.

    ``arctan(r tan(pi phi_j)) / 2 pi`` with ``r = (E_J1-E_J2)/(E_J1+E_J2)``,
    continuous on (-1/2, 1/2) and periodic with period 1.  At
    ``phi_j = 1/2 + n`` the limit from below, ``sign(r)/4``, is returned.
    """
    r = params.asymmetry
    red = _reduce_half_open(phi_j)
    at_edge = red == 0.5
    with np.errstate(over="ignore"):
        inner = np.arctan(r * np.tan(np.pi * np.where(at_edge, 0.0, red)))
    out = np.where(at_edge, np.sign(r) * np.pi / 2, inner) / TWO_PI
    return float(out) if out.ndim == 0 else out


def flux_offset_derivative(params: CircuitParams, phi_j):
    """d Phi_L^(0) / d Phi_J (dimensionless)."""
    r = params.asymmetry
    x = np.pi * np.asarray(phi_j, dtype=float)
    return r / (2 * (np.cos(x) ** 2 + r * r * np.sin(x) ** 2))


@dataclass(frozen=True)
class FluxBias:
    """A bias point given by ``phi_j`` and either ``phi_l`` or ``phi_ext`` (flux quanta).

    Exactly one of ``phi_l`` and ``phi_ext`` is stored; ``convention`` records
    which.  Conversion uses ``phi_ext = phi_l - flux_offset(phi_j)``.
    """

    phi_j: float
    phi_l: float | None = None
    phi_ext: float | None = None

    def __post_init__(self):
        if (self.phi_l is None) == (self.phi_ext is None):
            raise ConfigError("FluxBias needs exactly one of phi_l, phi_ext")

    @property
    def convention(self) -> str:
        return "phi_l" if self.phi_l is not None else "phi_ext"

    def loop_flux(self, params: CircuitParams) -> float:
        if self.phi_l is not None:
            return self.phi_l
        return self.phi_ext + flux_offset(params, self.phi_j)

    def external_flux(self, params: CircuitParams) -> float:
        if self.phi_ext is not None:
            return self.phi_ext
        return self.phi_l - flux_offset(params, self.phi_j)

    def as_phi_l(self, params: CircuitParams) -> FluxBias:
        return FluxBias(self.phi_j, phi_l=self.loop_flux(params))

    def as_phi_ext(self, params: CircuitParams) -> FluxBias:
        return FluxBias(self.phi_j, phi_ext=self.external_flux(params))

    def to_dict(self) -> dict:
        d = {"phi_j": self.phi_j}
        d[self.convention] = self.phi_l if self.phi_l is not None else self.phi_ext
        return d


class _Operators(NamedTuple):
    phi: np.ndarray
    n_imag: np.ndarray  # n = 1j * n_imag
    h_osc: np.ndarray  # 4 E_C n^2 + E_L/2 phi^2, diagonal
    phi_sq: np.ndarray
    n_sq: np.ndarray
    cos_phi: np.ndarray
    sin_phi: np.ndarray


@lru_cache(maxsize=16)
def _operators(ec: float, el: float, dim: int) -> _Operators:
    phi_zpf = (2 * ec / el) ** 0.25
    k = np.arange(dim, dtype=float)
    a = np.diag(np.sqrt(k[1:]), 1)
    a2 = a @ a
    phi = phi_zpf * (a + a.T)
    n_imag = (a - a.T) / (2 * phi_zpf)
    number = np.diag(2 * k + 1)
    # exact truncations of phi^2 and n^2 (not products of truncated matrices)
    phi_sq = phi_zpf**2 * (a2 + a2.T + number)
    n_sq = -(a2 + a2.T - number) / (4 * phi_zpf**2)
    h_osc = np.diag(np.sqrt(8 * ec * el) * (k + 0.5))
    w, u = np.linalg.eigh(phi)
    cos_phi = (u * np.cos(w)) @ u.T
    sin_phi = (u * np.sin(w)) @ u.T
    ops = _Operators(phi, n_imag, h_osc, phi_sq, n_sq, cos_phi, sin_phi)
    for arr in ops:
        arr.setflags(write=False)
    return ops


def _josephson_phases(params: CircuitParams, bias: FluxBias):
    """(E_Jk, theta_k) pairs so the potential is -sum E_Jk cos(phi - theta_k)."""
    if bias.phi_l is not None:
        t1 = TWO_PI * (bias.phi_l - bias.phi_j / 2)
        t2 = TWO_PI * (bias.phi_l + bias.phi_j / 2)
        return ((params.ej1_ghz, t1), (params.ej2_ghz, t2))
    return ((effective_ej(params, bias.phi_j), TWO_PI * bias.phi_ext),)


def hamiltonian(params: CircuitParams, bias: FluxBias, dim: int | None = None) -> np.ndarray:
    """Dense real-symmetric Hamiltonian matrix in GHz."""
    dim = params.basis_dim if dim is None else dim
    ops = _operators(params.ec_ghz, params.el_ghz, dim)
    cos_coef = sin_coef = 0.0
    for ej, theta in _josephson_phases(params, bias):
        cos_coef += ej * np.cos(theta)
        sin_coef += ej * np.sin(theta)
    return ops.h_osc - cos_coef * ops.cos_phi - sin_coef * ops.sin_phi


def _loop_flux_generator(params: CircuitParams, bias: FluxBias, dim: int) -> np.ndarray:
    """dH/dphi_l in the gauge used by `hamiltonian` (GHz per flux quantum)."""
    ops = _operators(params.ec_ghz, params.el_ghz, dim)
    out = np.zeros_like(ops.phi)
    for ej, theta in _josephson_phases(params, bias):
        # d/dtheta of -E_J cos(phi - theta) = -E_J sin(phi - theta)
        out -= TWO_PI * ej * (ops.sin_phi * np.cos(theta) - ops.cos_phi * np.sin(theta))
    return out


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _solve(params: CircuitParams, bias: FluxBias, dim: int, n_levels: int):
    ham = hamiltonian(params, bias, dim)
    evals, evecs = scipy.linalg.eigh(ham, subset_by_index=[0, n_levels - 1])
    return evals, _fix_phases(evecs)


@dataclass(frozen=True)
class SpectrumResult:
    """Spectrum and matrix elements at one bias point.

    ``phi_mat`` is real symmetric; ``n_mat`` is purely imaginary and Hermitian.
    ``eigenvectors`` are columns in the oscillator basis of size ``basis_dim``.
    """

    energies_ghz: np.ndarray
    phi_mat: np.ndarray
    n_mat: np.ndarray
    bias: FluxBias
    basis_dim: int
    params: CircuitParams | None = None
    eigenvectors: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def f01_ghz(self) -> float:
        return float(self.energies_ghz[1] - self.energies_ghz[0])

    @property
    def f02_ghz(self) -> float:
        return float(self.energies_ghz[2] - self.energies_ghz[0])

    @property
    def phi01(self) -> float:
        return float(abs(self.phi_mat[0, 1]))

    @property
    def n01(self) -> float:
        return float(abs(self.n_mat[0, 1]))

    def to_dict(self) -> dict:
        return {
            "energies_ghz": self.energies_ghz.tolist(),
            "f01_ghz": self.f01_ghz,
            "phi_mat": self.phi_mat.tolist(),
            "n_mat_real": self.n_mat.real.tolist(),
            "n_mat_imag": self.n_mat.imag.tolist(),
            "bias": self.bias.to_dict(),
            "basis_dim": self.basis_dim,
            "params": None if self.params is None else self.params.to_dict(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> SpectrumResult:
        bias = FluxBias(**d["bias"])
        n_mat = np.asarray(d["n_mat_real"]) + 1j * np.asarray(d["n_mat_imag"])
        return cls(
            energies_ghz=np.asarray(d["energies_ghz"], dtype=float),
            phi_mat=np.asarray(d["phi_mat"], dtype=float),
            n_mat=n_mat,
            bias=bias,
            basis_dim=int(d["basis_dim"]),
            params=CircuitParams(**d["params"]) if d.get("params") else None,
        )

    @classmethod
    def from_json(cls, text: str) -> SpectrumResult:
        return cls.from_dict(json.loads(text))


def _spectrum_at_dim(params, bias, dim, n_levels) -> SpectrumResult:
    evals, evecs = _solve(params, bias, dim, n_levels)
    ops = _operators(params.ec_ghz, params.el_ghz, dim)
    phi_mat = evecs.T @ ops.phi @ evecs
    phi_mat = 0.5 * (phi_mat + phi_mat.T)
    n_imag = evecs.T @ ops.n_imag @ evecs
    n_imag = 0.5 * (n_imag - n_imag.T)
    for arr in (evals, phi_mat, n_imag, evecs):
        arr.setflags(write=False)
    return SpectrumResult(
        energies_ghz=evals,
        phi_mat=phi_mat,
        n_mat=1j * n_imag,
        bias=bias,
        basis_dim=dim,
        params=params,
        eigenvectors=evecs,
    )


def converged_dim(params: CircuitParams, bias: FluxBias, max_dim: int = MAX_BASIS_DIM) -> int:
    """Smallest dimension in the doubling sequence meeting the 1 kHz f01 contract."""
    dim = params.basis_dim
    while True:
        e_lo, _ = _solve(params, bias, dim, 2)
        e_hi, _ = _solve(params, bias, dim + CONVERGENCE_STEP, 2)
        if abs((e_hi[1] - e_hi[0]) - (e_lo[1] - e_lo[0])) < CONVERGENCE_TOL_GHZ:
            return dim
        if dim >= max_dim:
            raise ConvergenceError(
                f"f01 not converged to 1 kHz at basis_dim={dim} for bias {bias.to_dict()}"
            )
        dim = min(2 * dim, max_dim)


def diagonalize(
    params: CircuitParams,
    bias: FluxBias,
    n_levels: int = 6,
    check_convergence: bool = True,
    max_dim: int = MAX_BASIS_DIM,
) -> SpectrumResult:
    """Diagonalize the circuit at ``bias`` and return the lowest ``n_levels`` states.

    With ``check_convergence`` the basis is doubled from ``params.basis_dim``
    (capped at ``max_dim``) until f01 moves by less than 1 kHz when 20 more
    oscillator states are added.
    """
    if n_levels < 2:
        raise ValueError("n_levels must be at least 2")
    dim = converged_dim(params, bias, max_dim) if check_convergence else params.basis_dim
    return _spectrum_at_dim(params, bias, dim, n_levels)


def f01(params: CircuitParams, bias: FluxBias, check_convergence: bool = False) -> float:
    """Qubit frequency in GHz (no matrix elements)."""
    dim = converged_dim(params, bias) if check_convergence else params.basis_dim
    evals, _ = _solve(params, bias, dim, 2)
    return float(evals[1] - evals[0])


def f01_derivatives(params: CircuitParams, bias: FluxBias, step: float = DERIVATIVE_STEP):
    """(d omega01/d Phi_L, d omega01/d Phi_J) in rad/s per flux quantum.

    Second-order central differences in the physical control axes
    (phi_l, phi_j) with step ``step``.
    """
    dim = converged_dim(params, bias)
    p = params.with_basis(dim)
    phi_j = bias.phi_j
    phi_l = bias.loop_flux(params)

    def f(pj, pl):
        return f01(p, FluxBias(pj, phi_l=pl))

    d_l = (f(phi_j, phi_l + step) - f(phi_j, phi_l - step)) / (2 * step)
    d_j = (f(phi_j + step, phi_l) - f(phi_j - step, phi_l)) / (2 * step)
    scale = TWO_PI * 1e9
    return d_l * scale, d_j * scale


def f01_and_gradient(params: CircuitParams, bias: FluxBias, dim: int | None = None):
    """(f01, d f01/d phi_l, d f01/d phi_j) in GHz and GHz per flux quantum.

    Exact Hellmann-Feynman derivatives in the physical (phi_j, phi_l) axes.
    No convergence check; ``dim`` defaults to ``params.basis_dim``.
    """
    dim = params.basis_dim if dim is None else dim
    b = bias if bias.phi_l is not None else bias.as_phi_l(params)
    evals, vecs = _solve(params, b, dim, 2)
    ops = _operators(params.ec_ghz, params.el_ghz, dim)
    v0, v1 = vecs[:, 0], vecs[:, 1]
    grads = []
    for ej, theta in _josephson_phases(params, b):
        # -E_J sin(phi - theta), the derivative of the term with respect to theta
        op = -ej * (ops.sin_phi * np.cos(theta) - ops.cos_phi * np.sin(theta))
        grads.append(v1 @ op @ v1 - v0 @ op @ v0)
    g1, g2 = grads
    # theta_1 = 2 pi (phi_l - phi_j / 2), theta_2 = 2 pi (phi_l + phi_j / 2)
    d_l = TWO_PI * (g1 + g2)
    d_j = np.pi * (g2 - g1)
    return float(evals[1] - evals[0]), float(d_l), float(d_j)


def flux_couplings(params: CircuitParams, bias: FluxBias, spec: SpectrumResult | None = None):
    """(V_L, V_J) = |<0|dH/dPhi_beta|1>| in GHz per flux quantum.

    Derivatives are taken with the external flux in the inductive term, the
    gauge in which flux noise couples through ``E_L phi``.
    """
    if spec is None:
        spec = diagonalize(params, bias)
    dim = spec.basis_dim
    ops = _operators(params.ec_ghz, params.el_ghz, dim)
    vecs = spec.eigenvectors
    v0, v1 = vecs[:, 0], vecs[:, 1]
    theta = TWO_PI * bias.external_flux(params)
    cos_shift = ops.cos_phi * np.cos(theta) + ops.sin_phi * np.sin(theta)  # cos(phi - theta)
    dh_dl = TWO_PI * params.el_ghz * ops.phi
    dh_dj = (
        -TWO_PI * params.el_ghz * flux_offset_derivative(params, bias.phi_j) * ops.phi
        - effective_ej_derivative(params, bias.phi_j) * cos_shift
    )
    return float(abs(v0 @ dh_dl @ v1)), float(abs(v0 @ dh_dj @ v1))


def sweet_spot_locate(
    params: CircuitParams,
    phi_j: float,
    bracket: tuple[float, float] = (0.4, 0.6),
    n_scan: int = 41,
    xtol: float = 1e-10,
) -> float:
    """Loop flux phi_l (flux quanta) minimizing f01 at fixed phi_j.

    A coarse scan brackets the minimum; the root of d f01/d phi_l (exact
    Hellmann-Feynman derivative) is then refined with Brent's method.
    """
    lo, hi = bracket
    dim = converged_dim(params, FluxBias(phi_j, phi_l=0.5 * (lo + hi)))
    p = params.with_basis(dim)
    grid = np.linspace(lo, hi, n_scan)
    freqs = np.array([f01(p, FluxBias(phi_j, phi_l=x)) for x in grid])
    i = int(np.argmin(freqs))
    if i == 0 or i == n_scan - 1:
        raise NoMinimumError(
            f"f01 has no interior minimum in phi_l in [{lo}, {hi}] at phi_j={phi_j}"
        )

    def slope(x):
        b = FluxBias(phi_j, phi_l=x)
        _, vecs = _solve(p, b, dim, 2)
        gen = _loop_flux_generator(p, b, dim)
        return vecs[:, 1] @ gen @ vecs[:, 1] - vecs[:, 0] @ gen @ vecs[:, 0]

    a, b = grid[i - 1], grid[i + 1]
    sa, sb = slope(a), slope(b)
    if sa == 0:
        return float(a)
    if sb == 0:
        return float(b)
    if np.sign(sa) == np.sign(sb):
        raise NoMinimumError(f"slope does not change sign around the scanned minimum at phi_j={phi_j}")
    return float(brentq(slope, a, b, xtol=xtol))


def sweet_spot_bias(params: CircuitParams, phi_j: float) -> FluxBias:
    return FluxBias(phi_j, phi_ext=0.5)


def spectrum_sweep(params: CircuitParams, biases, n_levels: int = 6, threads: int = 1):
    """Diagonalize at each bias, preserving input order."""
    biases = list(biases)
    if threads <= 1:
        return [diagonalize(params, b, n_levels) for b in biases]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: diagonalize(params, b, n_levels), biases))
