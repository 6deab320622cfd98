"""Noise spectroscopy: relaxation traces to two-sided flux-noise spectra and model fits.

Spectral densities are one-sided-per-sign flux PSDs in (uPhi0)^2/Hz, with
``S+ = S(w) + S(-w)`` and ``S- = S(w) - S(-w)``.  The relaxation rates obey
``Gamma_down/up = (E_L / hbar phi0)^2 |<0|phi|1>|^2 S(+-w)``.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, least_squares

from . import constants as C
from .circuit import DEVICE_PARAMS, CircuitParams, SpectrumResult
from .decoherence import NoiseModel, effective_temperature
from .errors import ConfigError, DomainError, FitError, IdentifiabilityWarning

T1_MAX_US = 100e3  # 100 ms
UPHI0_SQ = 1e12  # Phi0^2 -> (uPhi0)^2
PHI01_MIN = 1e-6

EXCITED, GROUND = "excited", "ground"


@dataclass(frozen=True, eq=False)
class DecayTrace:
    """Excited-state population versus delay (us) after preparing ``prepared_state``."""

    times: np.ndarray
    p1: np.ndarray
    prepared_state: str = EXCITED

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.p1, dtype=float)
        if t.ndim != 1 or t.shape != p.shape:
            raise ConfigError("times and p1 must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("delay times must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ConfigError("p1 values must lie in [0, 1]")
        if self.prepared_state not in (EXCITED, GROUND):
            raise ConfigError(f"prepared_state must be '{EXCITED}' or '{GROUND}'")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "p1", p)

    def __len__(self):
        return self.times.size

    def truncate(self, t_max: float) -> DecayTrace:
        keep = self.times <= t_max
        return DecayTrace(self.times[keep], self.p1[keep], self.prepared_state)


def decay_curve(times, t1, p_stray, p0):
    """``p_stray + (p0 - p_stray) exp(-t / T1)``."""
    return p_stray + (p0 - p_stray) * np.exp(-np.asarray(times, dtype=float) / t1)


def synthetic_pair(times, t1, p_stray, p0_up=1.0, p0_down=0.0, noise=0.0, rng=None):
    """Excited- and ground-state decay traces with optional Gaussian noise, clipped to [0, 1]."""
    times = np.asarray(times, dtype=float)
    out = []
    for p0, state in ((p0_up, EXCITED), (p0_down, GROUND)):
        p = decay_curve(times, t1, p_stray, p0)
        if noise:
            p = p + (rng or np.random.default_rng()).normal(0, noise, p.shape)
        out.append(DecayTrace(times, np.clip(p, 0, 1), state))
    return tuple(out)


class RelaxationFit(NamedTuple):
    t1: float  # us
    p_stray: float
    p0_up: float
    p0_down: float
    residual_rms: float


def _stack(up: DecayTrace, down: DecayTrace):
    t = np.concatenate([up.times, down.times])
    y = np.concatenate([up.p1, down.p1])
    is_up = np.concatenate([np.ones(len(up), bool), np.zeros(len(down), bool)])
    return t, y, is_up


def _linear_part(t, y, is_up, t1):
    """Best (p_stray, p0_up, p0_down) at fixed T1 and the residual."""
    e = np.exp(-t / t1)
    A = np.column_stack([1 - e, e * is_up, e * ~is_up])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef, y - A @ coef


def fit_relaxation_pair(up: DecayTrace, down: DecayTrace) -> RelaxationFit:
    """Joint fit of relaxation from the excited and ground state.

    Both traces share T1 and the stray population; each has its own initial
    population.  T1 is seeded by a coarse scan of the separable problem.
    """
    if up.prepared_state != EXCITED or down.prepared_state != GROUND:
        raise ConfigError("expected (excited, ground) traces")
    if len(up) < 6 or len(down) < 6:
        raise FitError("each trace needs at least 6 points")
    t, y, is_up = _stack(up, down)
    positive = t[t > 0]
    lo = max(positive.min() if positive.size else 1e-3, 1e-3) / 10
    grid = np.geomspace(lo, min(t.max() * 100, T1_MAX_US), 200)
    costs = [np.sum(_linear_part(t, y, is_up, g)[1] ** 2) for g in grid]
    t1_0 = grid[int(np.argmin(costs))]
    coef0, _ = _linear_part(t, y, is_up, t1_0)

    def resid(x):
        lt1, p, pu, pd = x
        e = np.exp(-t / np.exp(lt1))
        return p + (np.where(is_up, pu, pd) - p) * e - y

    res = least_squares(resid, [np.log(t1_0), *coef0], xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10_000)
    if not res.success:
        raise FitError(f"relaxation fit did not converge: {res.message}")
    t1 = float(np.exp(res.x[0]))
    if not (0 < t1 < T1_MAX_US) or not np.isfinite(t1):
        raise FitError(f"fitted T1 = {t1:g} us outside (0, 100 ms)")
    rms = float(np.sqrt(np.mean(res.fun**2)))
    return RelaxationFit(t1, float(res.x[1]), float(res.x[2]), float(res.x[3]), rms)


# Spectra


@dataclass(frozen=True)
class SpectraPoint:
    f01: float  # GHz
    t1: float  # us
    p_stray: float
    s_plus: float  # (uPhi0)^2/Hz
    s_minus: float
    t_eff: float  # K

    def to_dict(self) -> dict:
        return asdict(self)


def _flux_coupling_sq(el_ghz, phi01):
    """(E_L / hbar phi0)^2 |<0|phi|1>|^2 in 1/(s^2 Phi0^2)."""
    return (2 * np.pi * 2 * np.pi * C.GHZ * el_ghz) ** 2 * phi01**2


def _t_eff(p, f01):
    if p <= 0:
        return 0.0
    if p >= 0.5:
        return float("inf")
    return float(effective_temperature(p, f01))


def spectra_from_fit(fit, spec: SpectrumResult, el_ghz: float | None = None) -> SpectraPoint:
    """Convert (T1 in us, p_stray) at a bias point into S+/S-.

    ``S+ = 1 / (T1 (E_L / hbar phi0)^2 |<0|phi|1>|^2)`` and ``S- = (1 - 2 p) S+``.
    """
    t1_us, p = float(fit[0]), float(fit[1])
    if not t1_us > 0:
        raise DomainError("T1 must be positive")
    if el_ghz is None:
        if spec.params is None:
            raise ConfigError("el_ghz is required when the spectrum carries no circuit parameters")
        el_ghz = spec.params.el_ghz
    if spec.phi01 < PHI01_MIN:
        raise DomainError(f"|<0|phi|1>| = {spec.phi01:.3g} too small to convert rates to spectra")
    s_plus = UPHI0_SQ / (t1_us * 1e-6 * _flux_coupling_sq(el_ghz, spec.phi01))
    return SpectraPoint(spec.f01_ghz, t1_us, p, s_plus, (1 - 2 * p) * s_plus, _t_eff(p, spec.f01_ghz))


def relaxation_from_spectra(s_plus, s_minus, spec: SpectrumResult, el_ghz: float | None = None):
    """Inverse of `spectra_from_fit`: (T1 in us, p_stray) from S+/S- in (uPhi0)^2/Hz."""
    el_ghz = spec.params.el_ghz if el_ghz is None else el_ghz
    t1_us = UPHI0_SQ / (s_plus * _flux_coupling_sq(el_ghz, spec.phi01)) * 1e6
    return t1_us, 0.5 * (1 - s_minus / s_plus)


# Spectral model


@dataclass(frozen=True)
class SpectralModel:
    """``S+ = 2 pi A^2 / w^alpha (1 + exp(-hbar w / k T_A)) + D tan_delta w_r^2 (w / w_r)^gamma``.

    ``D = hbar^3 / (4 E_C E_L^2 (2 pi)^2)`` puts the dielectric term in Phi0^2/Hz.
    ``a_l`` is in Phi0/sqrt(Hz) and ``t_a`` in K.
    """

    a_l: float = 14e-6
    alpha: float = 1.0
    tan_delta: float = 2e-6
    gamma: float = 2.5
    t_a: float = 0.013
    ec_ghz: float = DEVICE_PARAMS.ec_ghz
    el_ghz: float = DEVICE_PARAMS.el_ghz
    omega_r: float = 2 * np.pi * 1e9

    def _w(self, f_ghz):
        return 2 * np.pi * C.GHZ * np.asarray(f_ghz, dtype=float)

    def flux_term(self, f_ghz):
        w = self._w(f_ghz)
        return UPHI0_SQ * 2 * np.pi * self.a_l**2 / w**self.alpha * (1 + np.exp(-C.hbar * w / (C.k_B * self.t_a)))

    def dielectric_term(self, f_ghz):
        w = self._w(f_ghz)
        ec, el = C.ghz_to_joule(self.ec_ghz), C.ghz_to_joule(self.el_ghz)
        d = C.hbar**3 / (4 * ec * el**2 * (2 * np.pi) ** 2)
        return UPHI0_SQ * d * self.tan_delta * self.omega_r**2 * (w / self.omega_r) ** self.gamma

    def s_plus(self, f_ghz):
        return self.flux_term(f_ghz) + self.dielectric_term(f_ghz)

    def s_minus(self, f_ghz):
        w = self._w(f_ghz)
        return self.s_plus(f_ghz) * np.tanh(C.hbar * w / (2 * C.k_B * self.t_a))

    def crossover_ghz(self, lo: float = 1e-3, hi: float = 100.0) -> float:
        """Frequency where the flux and dielectric terms of S+ are equal."""
        g = lambda f: np.log(self.flux_term(f)) - np.log(self.dielectric_term(f))  # noqa: E731
        if g(lo) * g(hi) > 0:
            raise DomainError("no crossover in the search interval")
        return float(brentq(g, lo, hi, xtol=1e-12))

    def to_noise_model(self, base: NoiseModel | None = None) -> NoiseModel:
        return replace(
            base or NoiseModel(),
            a_l=float(self.a_l),
            alpha=float(self.alpha),
            tan_delta_ref=float(self.tan_delta),
            gamma_exp=float(self.gamma),
            t_a=float(self.t_a),
        )

    def to_dict(self) -> dict:
        return asdict(self)


_NAMES = ("a_l", "alpha", "tan_delta", "gamma", "t_a")
_LOGGED = {"a_l", "tan_delta", "t_a"}


def _unpack(x, template: SpectralModel) -> SpectralModel:
    vals = {n: (np.exp(v) if n in _LOGGED else v) for n, v in zip(_NAMES, x)}
    return SpectralModel(**vals, ec_ghz=template.ec_ghz, el_ghz=template.el_ghz, omega_r=template.omega_r)


@dataclass(frozen=True)
class NoiseFit:
    model: SpectralModel
    stderr: dict
    crossover_ghz: float
    residual_rms: float  # in natural-log units
    n_points: int
    covariance: np.ndarray = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "stderr": self.stderr,
            "crossover_GHz": self.crossover_ghz,
            "residual_rms_log": self.residual_rms,
            "n_points": self.n_points,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def fit_noise_model(
    points,
    params: CircuitParams = DEVICE_PARAMS,
    initial: SpectralModel | None = None,
) -> NoiseFit:
    """Fit S+ and S- jointly in log space.

    Positive quantities are fitted as logarithms; ``S-`` samples that are not
    positive are dropped from the S- residuals.  Standard errors come from the
    Gauss-Newton covariance scaled by the residual variance.
    """
    points = list(points)
    if len(points) < 8:
        raise FitError("at least 8 spectral points are required")
    f = np.array([p.f01 for p in points], dtype=float)
    sp = np.array([p.s_plus for p in points], dtype=float)
    sm = np.array([p.s_minus for p in points], dtype=float)
    if np.any(sp <= 0) or np.any(f <= 0):
        raise FitError("S+ and frequencies must be positive")
    use_m = sm > 0
    template = initial or SpectralModel(ec_ghz=params.ec_ghz, el_ghz=params.el_ghz)

    # Seed tan_delta and A_L from the high/low ends so the start is in the right decade.
    seed = SpectralModel(**{**asdict(template), "tan_delta": 1.0, "a_l": 1.0})
    hi, lo = np.argmax(f), np.argmin(f)
    td0 = sp[hi] / seed.dielectric_term(f[hi])
    al0 = np.sqrt(sp[lo] / seed.flux_term(f[lo]))
    x0 = np.array([np.log(al0), template.alpha, np.log(td0), template.gamma, np.log(template.t_a)])

    def resid(x):
        m = _unpack(x, template)
        r1 = np.log(m.s_plus(f)) - np.log(sp)
        r2 = np.log(m.s_minus(f[use_m])) - np.log(sm[use_m])
        return np.concatenate([r1, r2])

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        best = None
        for shift in (0.0, np.log(10), -np.log(10)):
            start = x0 + np.array([0, 0, shift, 0, 0])
            try:
                res = least_squares(resid, start, x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=5000)
            except ValueError:
                continue
            if np.all(np.isfinite(res.fun)) and (best is None or res.cost < best.cost):
                best = res
    if best is None or best.status <= 0:
        raise FitError("noise-model fit did not converge")
    model = _unpack(best.x, template)

    n, k = best.fun.size, best.x.size
    dof = max(n - k, 1)
    s2 = 2 * best.cost / dof
    J = best.jac
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.full((k, k), np.nan)
    stderr = {}
    for i, name in enumerate(_NAMES):
        sd = float(np.sqrt(max(cov[i, i], 0)))
        stderr[name] = sd * getattr(model, name) if name in _LOGGED else sd

    try:
        xover = model.crossover_ghz()
    except DomainError:
        xover = float("nan")
    if not np.isfinite(xover) or xover <= f.min() or xover >= f.max():
        warnings.warn(
            "spectral points cover only one side of the flux/dielectric crossover; "
            "parameters of the other regime are poorly constrained",
            IdentifiabilityWarning,
            stacklevel=2,
        )
    return NoiseFit(model, stderr, xover, float(np.sqrt(np.mean(best.fun**2))), len(points), cov)


def synthetic_points(model: SpectralModel, f_ghz, scatter: float = 0.0, rng=None) -> list[SpectraPoint]:
    """Spectral points from a model with independent log-normal scatter of width ``scatter``."""
    f = np.asarray(f_ghz, dtype=float)
    sp, sm = model.s_plus(f), model.s_minus(f)
    if scatter:
        rng = rng or np.random.default_rng()
        sp = sp * np.exp(rng.normal(0, scatter, f.size))
        sm = sm * np.exp(rng.normal(0, scatter, f.size))
    out = []
    for fi, a, b in zip(f, sp, sm):
        p = 0.5 * (1 - b / a)
        out.append(SpectraPoint(float(fi), float("nan"), float(p), float(a), float(b), _t_eff(p, fi)))
    return out


# I/O


def read_traces_csv(text: str) -> list[tuple[dict, DecayTrace, DecayTrace]]:
    """Parse decay traces grouped by bias.

    Required columns: ``delay_us, p1, prepared_state``.  Every other column is
    treated as bias context (for example ``phi_j, phi_l``); rows sharing the
    same context form one (excited, ground) pair.  ``#`` lines are comments.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    need = {"delay_us", "p1", "prepared_state"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ConfigError(f"trace CSV needs columns {sorted(need)}")
    ctx_cols = [c for c in reader.fieldnames if c not in need]
    groups: dict = {}
    for line_no, row in enumerate(reader, start=2):
        try:
            key = tuple((c, float(row[c])) for c in ctx_cols)
            point = (float(row["delay_us"]), float(row["p1"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"trace CSV row {line_no}: {exc}") from exc
        state = (row["prepared_state"] or "").strip().lower()
        groups.setdefault(key, {}).setdefault(state, []).append(point)
    out = []
    for key, states in groups.items():
        if set(states) != {EXCITED, GROUND}:
            raise ConfigError(f"bias {dict(key)} lacks an excited or ground trace")
        pair = []
        for s in (EXCITED, GROUND):
            rows = sorted(states[s])
            pair.append(DecayTrace([r[0] for r in rows], [r[1] for r in rows], s))
        out.append((dict(key), pair[0], pair[1]))
    return out


def traces_to_csv(groups) -> str:
    buf = io.StringIO()
    ctx_cols = list(groups[0][0]) if groups else []
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["delay_us", "p1", "prepared_state", *ctx_cols])
    for ctx, *traces in groups:
        for tr in traces:
            for t, p in zip(tr.times, tr.p1):
                w.writerow([repr(float(t)), repr(float(p)), tr.prepared_state, *[repr(float(ctx[c])) for c in ctx_cols]])
    return buf.getvalue()


def points_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f01_GHz", "T1_us", "p_stray", "S_plus_uphi0sq_per_Hz", "S_minus_uphi0sq_per_Hz", "T_eff_K"])
    for p in points:
        w.writerow([repr(float(v)) for v in (p.f01, p.t1, p.p_stray, p.s_plus, p.s_minus, p.t_eff)])
    return buf.getvalue()


def tilt_corrected(p1_map, z_l, t, a: float, b: float):
    """Optional preprocessing of long-delay P1 maps; see `pulsecomp.correct_p1_tilt`."""
    from .pulsecomp import correct_p1_tilt

    return correct_p1_tilt(p1_map, z_l, t, a, b)
