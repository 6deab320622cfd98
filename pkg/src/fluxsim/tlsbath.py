"""Monte Carlo model of qubit relaxation in a bath of standard-tunneling-model TLS.

Energies of the defects are in GHz (E/h), couplings in MHz (g/h), rates in 1/s.
Each defect adds a Lorentzian ``2 g^2 G / (G^2 + D^2)`` to the qubit relaxation
rate, where ``g`` and the detuning ``D`` are angular frequencies and
``G = 1/T2_qubit + 1/T2_tls``.  The TLS transition frequency is
``sqrt(delta^2 + delta0^2)``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import find_peaks

from .circuit import CircuitParams, FluxBias, diagonalize
from .errors import ConfigError, DomainError, GridError

MHZ_TO_RAD = 2 * np.pi * 1e6
GHZ_TO_RAD = 2 * np.pi * 1e9


@dataclass(frozen=True)
class TlsBathConfig:
    """Distribution bounds and qubit lifetimes for bath sampling."""

    n_defects: int = 10_000
    delta_min_ghz: float = 3e-4
    delta_max_ghz: float = 3.0
    delta0_min_ghz: float = 3e-4
    delta0_max_ghz: float = 3.0
    t2_tls_min: float = 5e-9
    t2_tls_max: float = 100e-9
    s_max_mhz: float = 0.5
    qubit_t1: float = 1e-3
    qubit_t2: float = 50e-6

    def __post_init__(self):
        if int(self.n_defects) != self.n_defects or self.n_defects < 0:
            raise ConfigError("n_defects must be a non-negative integer")
        for lo, hi in (
            ("delta_min_ghz", "delta_max_ghz"),
            ("delta0_min_ghz", "delta0_max_ghz"),
            ("t2_tls_min", "t2_tls_max"),
        ):
            a, b = getattr(self, lo), getattr(self, hi)
            if not (a > 0 and b > 0):
                raise ConfigError(f"{lo} and {hi} must be positive")
            if a > b:
                raise ConfigError(f"{lo} exceeds {hi}")
        for name in ("s_max_mhz", "qubit_t1", "qubit_t2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> TlsBathConfig:
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class TlsDefect:
    delta: float
    delta0: float
    cos_eta: float
    gamma2_d: float

    @property
    def e_tls(self) -> float:
        return float(np.hypot(self.delta, self.delta0))

    @property
    def sin_theta(self) -> float:
        return self.delta0 / self.e_tls

    @property
    def theta(self) -> float:
        return float(np.arctan2(self.delta0, self.delta))

    @property
    def eta(self) -> float:
        return float(np.arccos(self.cos_eta))


@dataclass(frozen=True, eq=False)
class TlsEnsemble:
    """Sampled defects, stored column-wise."""

    delta: np.ndarray
    delta0: np.ndarray
    cos_eta: np.ndarray
    gamma2_d: np.ndarray
    qubit_t1_intrinsic: float = 1e-3
    qubit_t2_intrinsic: float = 50e-6
    s_max: float = 0.5
    seed: int | None = None
    e_tls: np.ndarray = field(init=False, repr=False)
    sin_theta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in ("delta", "delta0", "cos_eta", "gamma2_d")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ConfigError("defect arrays must be 1-D and equally long")
        for k, a in zip(("delta", "delta0", "cos_eta", "gamma2_d"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, k, a)
        e = np.hypot(arrays[0], arrays[1])
        sin_theta = np.divide(arrays[1], e, out=np.zeros_like(e), where=e > 0)
        e.setflags(write=False)
        sin_theta.setflags(write=False)
        object.__setattr__(self, "e_tls", e)
        object.__setattr__(self, "sin_theta", sin_theta)

    def __len__(self) -> int:
        return self.delta.size

    @property
    def defects(self) -> list[TlsDefect]:
        return [
            TlsDefect(float(a), float(b), float(c), float(d))
            for a, b, c, d in zip(self.delta, self.delta0, self.cos_eta, self.gamma2_d)
        ]

    @property
    def qubit_gamma2(self) -> float:
        return 1.0 / self.qubit_t2_intrinsic

    @classmethod
    def from_defects(cls, defects, **kwargs) -> TlsEnsemble:
        cols = np.array([[d.delta, d.delta0, d.cos_eta, d.gamma2_d] for d in defects], dtype=float).reshape(-1, 4)
        return cls(cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3], **kwargs)

    def merge(self, other: TlsEnsemble) -> TlsEnsemble:
        return TlsEnsemble(
            np.concatenate([self.delta, other.delta]),
            np.concatenate([self.delta0, other.delta0]),
            np.concatenate([self.cos_eta, other.cos_eta]),
            np.concatenate([self.gamma2_d, other.gamma2_d]),
            self.qubit_t1_intrinsic,
            self.qubit_t2_intrinsic,
            self.s_max,
            self.seed,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta_ghz", "delta0_ghz", "e_tls_ghz", "cos_eta", "gamma2_d_per_s"])
        for row in zip(self.delta, self.delta0, self.e_tls, self.cos_eta, self.gamma2_d):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "delta_ghz": self.delta.tolist(),
            "delta0_ghz": self.delta0.tolist(),
            "cos_eta": self.cos_eta.tolist(),
            "gamma2_d_per_s": self.gamma2_d.tolist(),
            "qubit_t1_intrinsic": self.qubit_t1_intrinsic,
            "qubit_t2_intrinsic": self.qubit_t2_intrinsic,
            "s_max_mhz": self.s_max,
            "seed": self.seed,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def sample_bath(config: TlsBathConfig, seed: int) -> TlsEnsemble:
    """Draw a defect ensemble.

    Uses a PCG64 generator (128-bit state).  For every defect four uniforms
    are consumed in the order (delta, delta0, eta, T2): delta is uniform,
    delta0 log-uniform, cos(eta) uniform on [-1, 1] and the TLS T2 uniform.
    """
    if seed is None:
        raise ConfigError("an explicit seed is required")
    rng = np.random.Generator(np.random.PCG64(seed))
    u = 1.0 - rng.random((config.n_defects, 4))  # (0, 1]
    c = config
    delta = c.delta_min_ghz + (c.delta_max_ghz - c.delta_min_ghz) * u[:, 0]
    delta0 = c.delta0_min_ghz * (c.delta0_max_ghz / c.delta0_min_ghz) ** u[:, 1]
    cos_eta = 2 * u[:, 2] - 1
    t2 = c.t2_tls_min + (c.t2_tls_max - c.t2_tls_min) * u[:, 3]
    return TlsEnsemble(
        delta,
        delta0,
        cos_eta,
        1.0 / t2,
        qubit_t1_intrinsic=c.qubit_t1,
        qubit_t2_intrinsic=c.qubit_t2,
        s_max=c.s_max_mhz,
        seed=seed,
    )


def coupling(defect, n01, s_max):
    """Qubit-TLS coupling g/h in MHz: ``|<0|n|1>| S_max cos(eta) sin(theta)``."""
    if np.any(np.asarray(n01) < 0):
        raise DomainError("n01 must be non-negative")
    return n01 * s_max * defect.cos_eta * defect.sin_theta


def rate_contribution(g_mhz, detuning_ghz, gamma2_d, qubit_gamma2):
    """Lorentzian relaxation rate (1/s) from one defect."""
    gamma = gamma2_d + qubit_gamma2
    g = MHZ_TO_RAD * np.asarray(g_mhz)
    d = GHZ_TO_RAD * np.asarray(detuning_ghz)
    return 2 * g**2 * gamma / (gamma**2 + d**2)


def tls_rate(ensemble: TlsEnsemble, f01_ghz: float, n01: float) -> float:
    """Summed defect contribution to the relaxation rate at one qubit frequency."""
    if len(ensemble) == 0:
        return 0.0
    g = coupling(ensemble, n01, ensemble.s_max)
    rates = rate_contribution(g, f01_ghz - ensemble.e_tls, ensemble.gamma2_d, ensemble.qubit_gamma2)
    return float(np.sum(rates))


def total_rate(ensemble: TlsEnsemble, f01_ghz, n01):
    """Intrinsic plus defect relaxation rate; vectorized over frequencies."""
    f = np.atleast_1d(np.asarray(f01_ghz, dtype=float))
    n = np.broadcast_to(np.asarray(n01, dtype=float), f.shape)
    out = np.array([tls_rate(ensemble, fi, ni) for fi, ni in zip(f, n)]) + 1.0 / ensemble.qubit_t1_intrinsic
    return out if np.ndim(f01_ghz) else float(out[0])


def dense_bath_rate(config: TlsBathConfig, n01):
    """Defect rate in the limit of a dense, weakly coupled bath.

    Valid for qubit frequencies well inside both distribution ranges; the
    sin^2(theta)-weighted density of defects is then flat in frequency.
    """
    density = config.n_defects / (
        (config.delta_max_ghz - config.delta_min_ghz) * np.log(config.delta0_max_ghz / config.delta0_min_ghz)
    )
    g0 = MHZ_TO_RAD * config.s_max_mhz * np.asarray(n01)
    return density * g0**2 / (3 * 1e9)


class SweetSpotBranch(NamedTuple):
    phi_j: np.ndarray
    f01_ghz: np.ndarray
    n01: np.ndarray
    phi01: np.ndarray


def sweet_spot_branch(params: CircuitParams, n_points: int = 241, phi_j=None) -> SweetSpotBranch:
    """f01 and matrix elements along phi_ext = 1/2 for phi_j in [0, 1/2).

    By default the points are spaced uniformly in |E_J| so the frequency
    coverage is even across the branch.
    """
    if phi_j is None:
        a, b = params.ej1_ghz, params.ej2_ghz
        ej = np.linspace(a + b, abs(a - b), n_points + 1)[:-1]
        phi_j = np.arccos(np.clip((ej**2 - a * a - b * b) / (2 * a * b), -1, 1)) / (2 * np.pi)
    phi_j = np.asarray(phi_j, dtype=float)
    specs = [diagonalize(params, FluxBias(float(x), phi_ext=0.5)) for x in phi_j]
    return SweetSpotBranch(
        phi_j,
        np.array([s.f01_ghz for s in specs]),
        np.array([s.n01 for s in specs]),
        np.array([s.phi01 for s in specs]),
    )


def interpolate_branch(branch: SweetSpotBranch, f_grid_ghz):
    """(phi_j, n01, phi01) at the requested frequencies by monotone interpolation in f01."""
    f = branch.f01_ghz
    order = np.argsort(f)
    if np.any(np.diff(f[order]) <= 0):
        raise DomainError("f01 is not strictly monotone along the branch")
    f_grid_ghz = np.asarray(f_grid_ghz, dtype=float)
    if f_grid_ghz.min() < f[order][0] or f_grid_ghz.max() > f[order][-1]:
        raise DomainError(
            f"frequency grid [{f_grid_ghz.min()}, {f_grid_ghz.max()}] GHz outside the tunable range "
            f"[{f[order][0]:.4g}, {f[order][-1]:.4g}] GHz"
        )
    out = []
    for y in (branch.phi_j, branch.n01, branch.phi01):
        out.append(PchipInterpolator(f[order], y[order])(f_grid_ghz))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class P1Curve:
    f01_ghz: np.ndarray
    p1: np.ndarray
    rate: np.ndarray
    n01: np.ndarray
    phi_j: np.ndarray
    tau: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frequency_GHz", "P1"])
        for f, p in zip(self.f01_ghz, self.p1):
            w.writerow([repr(float(f)), repr(float(p))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "frequency_GHz": self.f01_ghz.tolist(),
            "P1": self.p1.tolist(),
            "rate_per_s": self.rate.tolist(),
            "n01": self.n01.tolist(),
            "phi_j": self.phi_j.tolist(),
            "tau_s": self.tau,
        }


def p1_curve(ensemble: TlsEnsemble, f_grid_ghz, n01, tau: float) -> np.ndarray:
    """P1 after delay ``tau`` (s) for given frequencies and charge matrix elements."""
    if not tau > 0:
        raise DomainError("tau must be positive")
    return np.exp(-tau * np.atleast_1d(total_rate(ensemble, f_grid_ghz, n01)))


def p1_sweep(
    ensemble: TlsEnsemble,
    params: CircuitParams,
    f_grid_ghz,
    tau: float = 15e-6,
    branch: SweetSpotBranch | None = None,
) -> P1Curve:
    """Fixed-delay P1 versus qubit frequency, tuning E_J at the phi_ext = 1/2 sweet spot."""
    if branch is None:
        branch = sweet_spot_branch(params)
    f_grid_ghz = np.asarray(f_grid_ghz, dtype=float)
    phi_j, n01, _ = interpolate_branch(branch, f_grid_ghz)
    rate = np.atleast_1d(total_rate(ensemble, f_grid_ghz, n01))
    if not tau > 0:
        raise DomainError("tau must be positive")
    return P1Curve(f_grid_ghz, np.exp(-tau * rate), rate, n01, phi_j, tau)


class Dip(NamedTuple):
    index: int
    frequency_ghz: float
    p1: float
    prominence: float


def find_dips(f_grid_ghz, p1, prominence: float = 0.02) -> list[Dip]:
    """Local minima of ``p1`` whose topographic prominence is at least ``prominence``.

    Flat-bottomed dips report their middle sample, rounded toward lower frequency.
    """
    f = np.asarray(f_grid_ghz, dtype=float)
    y = np.asarray(p1, dtype=float)
    if f.shape != y.shape:
        raise GridError("frequency and P1 arrays differ in shape")
    if f.size > 2:
        step = np.diff(f)
        if np.any(step <= 0) or not np.allclose(step, step[0], rtol=1e-6, atol=0):
            raise GridError("frequency grid must be uniform and increasing")
    idx, props = find_peaks(-y, prominence=prominence)
    return [Dip(int(i), float(f[i]), float(y[i]), float(p)) for i, p in zip(idx, props["prominences"])]
