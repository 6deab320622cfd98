"""Closed-form relaxation and dephasing models.

Rates are in 1/s.  Flux-noise amplitudes are stored in flux quanta per
root hertz; the ``*_uphi0`` constructors and dict keys accept the customary
micro-flux-quantum quoting.  The 1/f spectrum is ``S(omega) = 2 pi A^2 / omega^alpha``
with omega in rad/s, so that ``S(2 pi rad/s) = A^2`` for alpha = 1.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import constants as C
from .circuit import SpectrumResult
from .errors import ConfigError, DomainError, NegativeRateError

OMEGA_REF = 2 * np.pi * 1e9


@dataclass(frozen=True)
class NoiseModel:
    """Flux-noise, dielectric-loss and temperature parameters.

    Attributes
    ----------
    a_l, a_j : float
        1/f amplitudes of Phi_L and Phi_J noise in Phi0/sqrt(Hz).
    alpha : float
        Flux-noise exponent.
    c_lj : float
        Correlation factor between Phi_L and Phi_J noise, within [-1, 1].
    tan_delta_ref : float
        Loss tangent at ``omega_r``.
    epsilon : float
        Frequency exponent of the loss tangent in the phenomenological model.
    gamma_exp : float
        Frequency exponent of the dielectric term in the spectral fit model.
    omega_r : float
        Reference angular frequency (rad/s).
    t_eff : float
        Effective temperature (K) used by the relaxation models.
    t_a : float
        Temperature (K) of the two-sided spectral model.
    """

    a_l: float = 14e-6
    a_j: float = 0.0
    alpha: float = 1.0
    c_lj: float = 0.0
    tan_delta_ref: float = 2.0e-6
    epsilon: float = 0.2
    gamma_exp: float = 2.0
    omega_r: float = OMEGA_REF
    t_eff: float = 0.015
    t_a: float = 0.015

    def __post_init__(self):
        for name in ("a_l", "a_j"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("tan_delta_ref", "t_eff", "t_a", "omega_r"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not abs(self.c_lj) <= 1:
            raise ConfigError(f"|c_lj| must be <= 1, got {self.c_lj}")

    @classmethod
    def from_uphi0(cls, a_l_uphi0=14.0, a_j_uphi0=0.0, **kwargs) -> NoiseModel:
        return cls(a_l=a_l_uphi0 * C.MICRO_PHI0, a_j=a_j_uphi0 * C.MICRO_PHI0, **kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["a_l_uphi0"] = d.pop("a_l") / C.MICRO_PHI0
        d["a_j_uphi0"] = d.pop("a_j") / C.MICRO_PHI0
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NoiseModel:
        d = dict(d)
        for key in ("a_l", "a_j"):
            if f"{key}_uphi0" in d:
                if key in d:
                    raise ConfigError(f"give {key} or {key}_uphi0, not both")
                d[key] = d.pop(f"{key}_uphi0") * C.MICRO_PHI0
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> NoiseModel:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"noise model is not valid JSON: {exc}") from exc


#: Relaxation-model values (T1 fit).
DEVICE_T1_MODEL = NoiseModel(a_l=14e-6, alpha=1.0, tan_delta_ref=2.0e-6, epsilon=0.2, t_eff=0.015)
#: Spin-echo fit with correlated two-loop flux noise.
DEVICE_ECHO_MODEL = NoiseModel(a_l=12.0e-6, a_j=7.6e-6, c_lj=0.51)


@dataclass(frozen=True)
class TlsMicroParams:
    """Microscopic TLS-bath quantities (SI units).

    rho0 : TLS density of states per unit energy and dipole moment.
    p_max : maximum dipole moment (C m).
    x_norm : normalized electrode distance (m).
    c_qubit : qubit capacitance (F).
    """

    rho0: float
    p_max: float
    x_norm: float
    c_qubit: float

    def __post_init__(self):
        for name in ("rho0", "p_max", "x_norm", "c_qubit"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


def omega(f_ghz):
    return 2 * np.pi * C.GHZ * np.asarray(f_ghz, dtype=float)


def flux_psd(omega_rad, amplitude, alpha=1.0):
    """One-sided 1/f flux noise ``2 pi A^2 / omega^alpha`` (units of A^2)."""
    return 2 * np.pi * amplitude**2 / np.asarray(omega_rad, dtype=float) ** alpha


def tan_delta(omega_rad, model: NoiseModel):
    return model.tan_delta_ref * (np.asarray(omega_rad, dtype=float) / model.omega_r) ** model.epsilon


def boltzmann_ratio(f_ghz, temperature):
    """exp(-hbar omega / k_B T)."""
    return np.exp(-C.h * C.GHZ * np.asarray(f_ghz, dtype=float) / (C.k_B * temperature))


def _energy_scale(f_ghz, ec_ghz):
    """hbar omega01^2 / (4 E_C) in 1/s."""
    w = omega(f_ghz)
    return C.hbar * w**2 / (4 * C.h * C.GHZ * ec_ghz)


def _check_f01(f_ghz):
    if np.any(np.asarray(f_ghz) <= 0):
        raise DomainError("qubit frequency must be positive")


def dielectric_rate(f01_ghz, phi01_sq, ec_ghz, model: NoiseModel):
    """Phenomenological dielectric relaxation with a coth thermal factor."""
    _check_f01(f01_ghz)
    w = omega(f01_ghz)
    x = C.hbar * w / (2 * C.k_B * model.t_eff)
    return _energy_scale(f01_ghz, ec_ghz) * phi01_sq * tan_delta(w, model) / np.tanh(x)


def flux_rate_single(f01_ghz, phi01_sq, el_ghz, model: NoiseModel):
    """Relaxation from 1/f noise in the loop flux alone."""
    _check_f01(f01_ghz)
    w = omega(f01_ghz)
    coupling = (2 * np.pi * 2 * np.pi * C.GHZ * el_ghz) ** 2  # (E_L / hbar phi0)^2 in 1/(s^2 Phi0^2)
    thermal = 1 + boltzmann_ratio(f01_ghz, model.t_eff)
    return coupling * phi01_sq * flux_psd(w, model.a_l, model.alpha) * thermal


def _correlated_form(x, y, c):
    value = x * x + y * y + 2 * c * x * y
    if np.any(value < 0):
        raise NegativeRateError(f"correlated noise form is negative ({value}); check c_lj")
    return value


def flux_rate_twoloop(f01_ghz, v_l, v_j, model: NoiseModel):
    """Relaxation from correlated 1/f noise in both loops.

    ``v_l, v_j`` are ``|<0|dH/dPhi_beta|1>|`` in GHz per flux quantum.  The
    same ``1 + exp(-hbar omega/k_B T)`` factor as the single-loop rate is
    applied, so the two agree when ``v_j = 0``.
    """
    _check_f01(f01_ghz)
    w = omega(f01_ghz)
    to_rad = 2 * np.pi * C.GHZ
    s_l = flux_psd(w, model.a_l, model.alpha)
    s_j = flux_psd(w, model.a_j, model.alpha)
    form = _correlated_form(to_rad * v_l * np.sqrt(s_l), to_rad * v_j * np.sqrt(s_j), model.c_lj)
    return form * (1 + boltzmann_ratio(f01_ghz, model.t_eff))


def echo_dephasing_rate(d_l, d_j, a_l, a_j, c_lj):
    """Gaussian spin-echo dephasing rate from correlated 1/f noise.

    ``d_l, d_j`` in rad/s per flux quantum, ``a_l, a_j`` in Phi0/sqrt(Hz).
    The echo envelope is ``exp(-(rate t)^2)``.
    """
    form = _correlated_form(np.asarray(d_l) * a_l, np.asarray(d_j) * a_j, c_lj)
    return np.sqrt(np.log(2) * form)


def gamma_phi_echo(derivs, model: NoiseModel):
    d_l, d_j = derivs
    return echo_dephasing_rate(d_l, d_j, model.a_l, model.a_j, model.c_lj)


def clj_predicted(model: NoiseModel | None = None, a_l=None, a_j=None) -> float:
    """Correlation factor for uncorrelated physical loops: ``A_J / (2 A_L)``."""
    if model is not None:
        a_l, a_j = model.a_l, model.a_j
    if not a_l > 0:
        raise DomainError("a_l must be positive")
    return a_j / (2 * a_l)


def golden_rule_rates(f01_ghz, phi01_sq, ec_ghz, model: NoiseModel):
    """(down, up, total) relaxation rates from a thermal charge-TLS bath.

    The total is temperature independent; down/up obey detailed balance at
    ``model.t_eff``.  The loss tangent is evaluated at the qubit frequency.
    """
    _check_f01(f01_ghz)
    total = _energy_scale(f01_ghz, ec_ghz) * phi01_sq * tan_delta(omega(f01_ghz), model)
    b = boltzmann_ratio(f01_ghz, model.t_eff)
    down = total / (1 + b)
    up = total * b / (1 + b)
    return down, up, total


def golden_rule_rate_charge_form(n01_sq, ec_ghz, tan_delta_value):
    """Total TLS rate written with the charge matrix element.

    ``2 (2e)^2 tan_delta |<0|d/dphi|1>|^2 / (hbar C)`` with ``C = e^2 / 2E_C``.
    """
    cap = C.e**2 / (2 * C.h * C.GHZ * ec_ghz)
    return 2 * (2 * C.e) ** 2 * tan_delta_value * n01_sq / (C.hbar * cap)


def tan_delta_from_micro(micro: TlsMicroParams) -> float:
    return (
        np.pi
        * micro.rho0
        / (24 * (2 * C.e) ** 2 * micro.c_qubit)
        * (C.hbar * micro.p_max / (C.phi0 * micro.x_norm)) ** 2
    )


def rho0_for_tan_delta(target: float, p_max: float, x_norm: float, c_qubit: float) -> float:
    """Density of states that yields loss tangent ``target``."""
    unit = tan_delta_from_micro(TlsMicroParams(1.0, p_max, x_norm, c_qubit))
    return target / unit


def effective_temperature(p_stray, f01_ghz):
    """Temperature (K) at which a two-level system at f01 has excited population p_stray."""
    p = np.asarray(p_stray, dtype=float)
    if np.any((p <= 0) | (p >= 0.5)):
        raise DomainError("p_stray must lie in (0, 0.5)")
    out = C.h * C.GHZ * np.asarray(f01_ghz) / (C.k_B * np.log((1 - p) / p))
    return float(out) if np.ndim(out) == 0 else out


def stray_population(temperature, f01_ghz):
    """Inverse of `effective_temperature`."""
    b = boltzmann_ratio(f01_ghz, temperature)
    out = b / (1 + b)
    return float(out) if np.ndim(out) == 0 else out


def rabi12_population(a0, a1) -> float:
    """Excited-state population from 1-2 Rabi amplitudes, ``A1 / (A0 + A1)``."""
    if a0 < 0 or a1 < 0:
        raise DomainError("amplitudes must be non-negative")
    if a0 == 0 and a1 == 0:
        raise DomainError("both amplitudes are zero")
    return a1 / (a0 + a1)


# SpectrumResult front ends


def _circuit(spec: SpectrumResult):
    if spec.params is None:
        raise ValueError("SpectrumResult carries no circuit parameters")
    return spec.params


def gamma1_dielectric(spec: SpectrumResult, model: NoiseModel) -> float:
    return float(dielectric_rate(spec.f01_ghz, spec.phi01**2, _circuit(spec).ec_ghz, model))


def gamma1_flux_single(spec: SpectrumResult, model: NoiseModel) -> float:
    return float(flux_rate_single(spec.f01_ghz, spec.phi01**2, _circuit(spec).el_ghz, model))


def gamma1_flux_twoloop(spec: SpectrumResult, model: NoiseModel, couplings=None) -> float:
    """Two-loop flux relaxation; couplings default to `circuit.flux_couplings`."""
    if couplings is None:
        from .circuit import flux_couplings

        couplings = flux_couplings(_circuit(spec), spec.bias, spec)
    v_l, v_j = couplings
    return float(flux_rate_twoloop(spec.f01_ghz, v_l, v_j, model))


def tls_golden_rule_rates(spec: SpectrumResult, model: NoiseModel):
    down, up, total = golden_rule_rates(spec.f01_ghz, spec.phi01**2, _circuit(spec).ec_ghz, model)
    return float(down), float(up), float(total)


def t1_model(spec: SpectrumResult, model: NoiseModel) -> float:
    """T1 in seconds from dielectric plus single-loop flux relaxation."""
    return 1.0 / (gamma1_dielectric(spec, model) + gamma1_flux_single(spec, model))
