"""Flux-control calibration: crosstalk, voltage-to-flux map, combined Ramsey fit.

Voltages are the flux-pulse amplitudes ``(Z_L, Z_J)``.  The map is

    (Phi_L, Phi_J) = (M Z - Z0) / S,   M = [[1, o1], [o2, 1]]

with fluxes in flux quanta and ``S`` in volts per flux quantum.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .circuit import CircuitParams, FluxBias, f01_and_gradient, flux_offset
from .errors import ConfigError, DegenerateSignalError, FitError, SingularMatrixError

SINGULAR_MARGIN = 1e-6
# phi_L = phi_1 + phi_2 / 2 for the two-loop geometry
NATIVE_CROSSTALK = 0.5


@dataclass(frozen=True)
class CrosstalkMatrix:
    o1: float = 0.0
    o2: float = 0.0

    def __post_init__(self):
        if abs(self.det) < SINGULAR_MARGIN:
            raise SingularMatrixError(f"crosstalk matrix is singular (det = {self.det:.3g})")

    @property
    def det(self) -> float:
        return 1.0 - self.o1 * self.o2

    def matrix(self) -> np.ndarray:
        return np.array([[1.0, self.o1], [self.o2, 1.0]])

    def apply(self, z):
        z = np.asarray(z, dtype=float)
        return np.stack([z[0] + self.o1 * z[1], self.o2 * z[0] + z[1]])

    def solve(self, z_eff):
        """M^-1 z_eff by the 2x2 adjugate."""
        z = np.asarray(z_eff, dtype=float)
        return np.stack([z[0] - self.o1 * z[1], -self.o2 * z[0] + z[1]]) / self.det


DEVICE_CROSSTALK = CrosstalkMatrix(0.57621, 0.02358)


def apply_crosstalk_correction(z_eff, m: CrosstalkMatrix):
    """Physical voltages ``Z = M^-1 Z_eff`` that realise the orthogonal request ``Z_eff``."""
    return m.solve(z_eff)


@dataclass(frozen=True)
class FluxMapParams:
    o1: float
    o2: float
    z0_l: float
    z0_j: float
    s_l: float
    s_j: float

    def __post_init__(self):
        if self.s_l == 0 or self.s_j == 0:
            raise ConfigError("flux scale factors must be non-zero")
        CrosstalkMatrix(self.o1, self.o2)

    @property
    def crosstalk(self) -> CrosstalkMatrix:
        return CrosstalkMatrix(self.o1, self.o2)

    def as_array(self) -> np.ndarray:
        return np.array([self.o1, self.o2, self.z0_l, self.z0_j, self.s_l, self.s_j])

    @classmethod
    def from_array(cls, x) -> FluxMapParams:
        return cls(*(float(v) for v in x))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> FluxMapParams:
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})

    @classmethod
    def default_guess(cls, z0_l=0.0, z0_j=0.0, s_l=1.0, s_j=1.0) -> FluxMapParams:
        return cls(NATIVE_CROSSTALK, 0.0, z0_l, z0_j, s_l, s_j)


PARAM_NAMES = ("o1", "o2", "z0_l", "z0_j", "s_l", "s_j")


def voltages_to_fluxes(z, p: FluxMapParams):
    """(Phi_L, Phi_J) for voltages ``z = (Z_L, Z_J)``; arrays broadcast."""
    mz = p.crosstalk.apply(z)
    return (mz[0] - p.z0_l) / p.s_l, (mz[1] - p.z0_j) / p.s_j


def fluxes_to_voltages(fluxes, p: FluxMapParams):
    phi_l, phi_j = (np.asarray(v, dtype=float) for v in fluxes)
    z_eff = np.stack([phi_l * p.s_l + p.z0_l, phi_j * p.s_j + p.z0_j])
    zl, zj = p.crosstalk.solve(z_eff)
    return zl, zj


# Combined fit


@dataclass(frozen=True)
class FluxMapFit:
    params: FluxMapParams
    circuit: CircuitParams
    mad_mhz: float
    rms_mhz: float
    stderr: dict
    n_points: int

    def to_dict(self) -> dict:
        return {
            "flux_map": self.params.to_dict(),
            "circuit": self.circuit.to_dict(),
            "stderr": self.stderr,
            "mad_MHz": self.mad_mhz,
            "rms_MHz": self.rms_mhz,
            "n_points": self.n_points,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


_CIRCUIT_FIELDS = ("ec_ghz", "el_ghz", "ej1_ghz", "ej2_ghz")


def model_f01(z_l, z_j, p: FluxMapParams, circuit: CircuitParams) -> np.ndarray:
    """Model qubit frequency (GHz) at each voltage pair."""
    phi_l, phi_j = voltages_to_fluxes((np.asarray(z_l, float), np.asarray(z_j, float)), p)
    return np.array([f01_and_gradient(circuit, FluxBias(pj, phi_l=pl))[0] for pl, pj in zip(phi_l, phi_j)])


def _residuals_and_jac(x, zl, zj, f_meas, circuit, cofit):
    p = FluxMapParams.from_array(x[:6])
    c = circuit
    if cofit:
        c = replace(circuit, **dict(zip(_CIRCUIT_FIELDS, x[6:])))
    phi_l, phi_j = voltages_to_fluxes((zl, zj), p)
    n = zl.size
    r = np.empty(n)
    J = np.zeros((n, x.size))
    for i in range(n):
        f, dl, dj = f01_and_gradient(c, FluxBias(phi_j[i], phi_l=phi_l[i]))
        r[i] = f - f_meas[i]
        # phi_L = (Z_L + o1 Z_J - z0_l) / s_l ; phi_J = (o2 Z_L + Z_J - z0_j) / s_j
        J[i, 0] = dl * zj[i] / p.s_l
        J[i, 1] = dj * zl[i] / p.s_j
        J[i, 2] = -dl / p.s_l
        J[i, 3] = -dj / p.s_j
        J[i, 4] = -dl * phi_l[i] / p.s_l
        J[i, 5] = -dj * phi_j[i] / p.s_j
    if cofit:
        for k, name in enumerate(_CIRCUIT_FIELDS):
            h = 1e-6 * max(abs(x[6 + k]), 1e-3)
            cp = replace(c, **{name: x[6 + k] + h})
            cm = replace(c, **{name: x[6 + k] - h})
            J[:, 6 + k] = (model_f01(zl, zj, p, cp) - model_f01(zl, zj, p, cm)) / (2 * h)
    return r, J


def fit_flux_map(
    data,
    circuit: CircuitParams,
    initial: FluxMapParams,
    cofit_circuit: bool = False,
    l1_scale_mhz: float = 0.05,
) -> FluxMapFit:
    """Fit the six-parameter voltage-to-flux map to measured qubit frequencies.

    ``data`` rows are ``(Z_L, Z_J, f01_GHz)``.  A least-squares pass from
    ``initial`` is followed by a smoothed-L1 pass (``soft_l1`` with a scale of
    ``l1_scale_mhz``), which approaches the minimum of sum |residual|.
    Derivatives with respect to the map come from Hellmann-Feynman gradients.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ConfigError("data must be rows of (Z_L, Z_J, f01_GHz)")
    if len(arr) < 20:
        raise FitError("at least 20 calibration points are required")
    zl, zj, f_meas = arr.T
    if np.ptp(zl) == 0 or np.ptp(zj) == 0:
        raise FitError("calibration data must span both voltage axes")

    x0 = initial.as_array()
    if cofit_circuit:
        x0 = np.concatenate([x0, [getattr(circuit, k) for k in _CIRCUIT_FIELDS]])

    cache = {}

    def eval_(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = _residuals_and_jac(x, zl, zj, f_meas, circuit, cofit_circuit)
        return cache[key]

    def fun(x):
        try:
            return eval_(x)[0]
        except (SingularMatrixError, ConfigError):
            return np.full(len(zl), 1e3)

    def jac(x):
        try:
            return eval_(x)[1]
        except (SingularMatrixError, ConfigError):
            return np.zeros((len(zl), x.size))

    try:
        stage1 = least_squares(fun, x0, jac=jac, x_scale="jac", xtol=1e-12, ftol=1e-12, max_nfev=500)
        stage2 = least_squares(
            fun,
            stage1.x,
            jac=jac,
            loss="soft_l1",
            f_scale=l1_scale_mhz * 1e-3,
            x_scale="jac",
            xtol=1e-12,
            ftol=1e-12,
            max_nfev=500,
        )
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitError(f"flux-map fit failed: {exc}") from exc
    if stage2.status <= 0 or not np.all(np.isfinite(stage2.x)):
        raise FitError(f"flux-map fit did not converge: {stage2.message}")

    x = stage2.x
    try:
        p = FluxMapParams.from_array(x[:6])
    except (SingularMatrixError, ConfigError) as exc:
        raise FitError(f"fit diverged to an invalid map: {exc}") from exc
    c = replace(circuit, **dict(zip(_CIRCUIT_FIELDS, x[6:]))) if cofit_circuit else circuit
    r, J = _residuals_and_jac(x, zl, zj, f_meas, circuit, cofit_circuit)
    if np.max(np.abs(r)) > 1.0:
        warnings.warn("some residuals exceed 1 GHz; the fit may sit in a wrong basin", stacklevel=2)

    dof = max(len(r) - x.size, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
        sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        sd = np.full(x.size, np.nan)
    names = PARAM_NAMES + (_CIRCUIT_FIELDS if cofit_circuit else ())
    stderr = {k: float(v) for k, v in zip(names, sd)}
    return FluxMapFit(p, c, float(np.mean(np.abs(r)) * 1e3), float(np.sqrt(np.mean(r**2)) * 1e3), stderr, len(r))


def synthetic_calibration(
    truth: FluxMapParams,
    circuit: CircuitParams,
    phi_j=None,
    dphi_l=None,
    noise_mhz: float = 0.0,
    rng=None,
) -> np.ndarray:
    """Calibration rows ``(Z_L, Z_J, f01_GHz)`` generated from a known map.

    Points sit on the product grid of ``phi_j`` and loop-flux detunings
    ``dphi_l`` measured from the sweet spot ``1/2 + offset(phi_j)``.
    Gaussian frequency noise has standard deviation ``noise_mhz``.
    """
    phi_j = np.linspace(0.02, 0.45, 10) if phi_j is None else np.asarray(phi_j, dtype=float)
    dphi_l = np.linspace(-0.3, 0.3, 10) if dphi_l is None else np.asarray(dphi_l, dtype=float)
    pj, dl = np.meshgrid(phi_j, dphi_l, indexing="ij")
    pj = pj.ravel()
    pl = 0.5 + flux_offset(circuit, pj) + dl.ravel()
    zl, zj = fluxes_to_voltages((pl, pj), truth)
    f = np.array([f01_and_gradient(circuit, FluxBias(b, phi_l=a))[0] for a, b in zip(pl, pj)])
    if noise_mhz:
        f = f + (rng or np.random.default_rng()).normal(0, noise_mhz * 1e-3, f.size)
    return np.column_stack([zl, zj, f])


# Ramsey


def frequency_from_ramsey_fft(delays_us, p1) -> float:
    """Dominant oscillation frequency (MHz) of a Ramsey trace on a uniform delay grid.

    The largest non-DC bin of the mean-removed real FFT is refined by a
    parabola through it and its two neighbours.
    """
    t = np.asarray(delays_us, dtype=float)
    y = np.asarray(p1, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ConfigError("delays and p1 must be 1-D arrays of equal length")
    if t.size < 32:
        raise ConfigError("at least 32 delays are required")
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ConfigError("delay grid must be uniform and increasing")
    mag = np.abs(np.fft.rfft(y - y.mean()))
    scale = max(np.abs(y).max(), np.finfo(float).tiny)
    if mag[1:].max() <= 1e-9 * scale * y.size:
        raise DegenerateSignalError("trace has no oscillating component")
    k = 1 + int(np.argmax(mag[1:]))
    shift = 0.0
    if 1 <= k - 1 and k + 1 < mag.size:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        den = a - 2 * b + c
        if den != 0:
            shift = 0.5 * (a - c) / den
    return float((k + shift) / (t.size * dt[0]))


# I/O


def read_calibration_csv(text: str) -> np.ndarray:
    """Rows (Z_L, Z_J, f01_GHz) from CSV columns ``Z_L_V, Z_J_V, f01_MHz``."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    need = ("Z_L_V", "Z_J_V", "f01_MHz")
    if reader.fieldnames is None or not set(need) <= set(reader.fieldnames):
        raise ConfigError(f"calibration CSV needs columns {list(need)}")
    try:
        rows = [(float(r["Z_L_V"]), float(r["Z_J_V"]), float(r["f01_MHz"]) / 1e3) for r in reader]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"calibration CSV: {exc}") from exc
    return np.array(rows, dtype=float).reshape(-1, 3)


def calibration_to_csv(data) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Z_L_V", "Z_J_V", "f01_MHz"])
    for zl, zj, f in np.asarray(data, dtype=float):
        w.writerow([repr(float(zl)), repr(float(zj)), repr(float(f * 1e3))])
    return buf.getvalue()
