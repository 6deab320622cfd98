"""Flux-pulse distortion: multi-exponential step response, inverse filter, tilt correction.

Times are in ns unless noted; amplitudes are fractions of the step height.
The channel model has step response ``1 + sum_i a_i exp(-t / tau_i)``.  Each
exponential is discretized by pole matching, ``p_i = exp(-T_s / tau_i)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter, sosfilt

from .errors import ConfigError, FitError, GridError, InstabilityError, RankWarning

DEFAULT_SAMPLE_RATE = 1e9
MAX_COMPONENTS = 4


@dataclass(frozen=True)
class StepResponseModel:
    """Exponential settling tail of a control line.

    ``components`` holds ``(a_i, tau_i_ns)`` pairs, kept sorted by tau.
    """

    components: tuple = ()
    sample_rate: float = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        comps = tuple(sorted(((float(a), float(t)) for a, t in self.components), key=lambda c: c[1]))
        for a, tau in comps:
            if not tau > 0:
                raise ConfigError("settling times must be positive")
            if not abs(a) < 1:
                raise ConfigError("component amplitudes must satisfy |a| < 1")
        if not self.sample_rate > 0:
            raise ConfigError("sample_rate must be positive")
        object.__setattr__(self, "components", comps)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([c[0] for c in self.components])

    @property
    def taus_ns(self) -> np.ndarray:
        return np.array([c[1] for c in self.components])

    @property
    def sample_period_ns(self) -> float:
        return 1e9 / self.sample_rate

    def poles(self) -> np.ndarray:
        return np.exp(-self.sample_period_ns / self.taus_ns)

    def step_response(self, t_ns):
        t = np.asarray(t_ns, dtype=float)
        out = np.ones_like(t)
        for a, tau in self.components:
            out = out + a * np.exp(-t / tau)
        return out

    def to_dict(self) -> dict:
        return {
            "components": [{"amplitude": a, "tau_ns": t} for a, t in self.components],
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StepResponseModel:
        comps = []
        for c in d.get("components", []):
            if isinstance(c, dict):
                comps.append((c["amplitude"], c["tau_ns"]))
            else:
                comps.append(tuple(c))
        return cls(tuple(comps), d.get("sample_rate", DEFAULT_SAMPLE_RATE))


# Calibrated tails of the two flux lines.
DEVICE_ZL_MODEL = StepResponseModel(((-0.0287, 60.5), (-0.0152, 420.8), (-0.0106, 1533.7)))
DEVICE_ZJ_MODEL = StepResponseModel(((-0.0492, 30.2), (-0.0240, 113.2), (-0.0199, 869.0)))


def simulate_distortion(model: StepResponseModel, waveform) -> np.ndarray:
    """Pass ``waveform`` (one sample per period) through the distorting channel.

    The channel transfer function is ``1 + sum_i a_i (1 - w) / (1 - p_i w)``
    with ``w`` the unit delay, so a unit step returns ``1 + sum_i a_i p_i^n``.
    """
    x = np.asarray(waveform, dtype=float)
    y = x.copy()
    for a, p in zip(model.amplitudes, model.poles()):
        y += a * lfilter([1.0, -1.0], [1.0, -p], x)
    return y


@dataclass
class PredistortionFilter:
    """Cascade of recursive sections that inverts a `StepResponseModel`.

    Sections are stored in second-order form ``[b0, b1, b2, 1, a1, a2]``;
    first-order sections have ``b2 = a2 = 0``.  ``process`` keeps state between
    calls so a long waveform may be streamed in chunks; use one instance per
    channel.
    """

    gain: float
    sos: np.ndarray
    sample_rate: float = DEFAULT_SAMPLE_RATE
    _zi: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_sections(self) -> int:
        return len(self.sos)

    @property
    def leading_gain(self) -> float:
        """First tap of the impulse response, ``1 / (1 + sum a_i)``."""
        return self.gain

    @property
    def dc_gain(self) -> float:
        g = self.gain
        for b0, b1, b2, _, a1, a2 in self.sos:
            g *= (b0 + b1 + b2) / (1 + a1 + a2)
        return float(g)

    def reset(self):
        self._zi = None

    def process(self, chunk) -> np.ndarray:
        x = self.gain * np.asarray(chunk, dtype=float)
        if self.n_sections == 0:
            return x
        if self._zi is None:
            self._zi = np.zeros((self.n_sections, 2))
        y, self._zi = sosfilt(self.sos, x, zi=self._zi)
        return y

    def apply(self, waveform) -> np.ndarray:
        """Filter a complete waveform from rest without touching the stream state."""
        x = self.gain * np.asarray(waveform, dtype=float)
        if self.n_sections == 0:
            return x
        return sosfilt(self.sos, x)

    def to_dict(self) -> dict:
        sections = []
        for row in self.sos:
            b, a = row[:3], row[3:]
            order = 2 if (b[2] != 0 or a[2] != 0) else 1
            sections.append(
                {"feedforward": [float(v) for v in b[: order + 1]], "feedback": [float(v) for v in a[: order + 1]]}
            )
        return {"sample_rate": self.sample_rate, "gain": self.gain, "sections": sections}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> PredistortionFilter:
        rows = []
        for s in d["sections"]:
            b = list(s["feedforward"]) + [0.0] * (3 - len(s["feedforward"]))
            a = list(s["feedback"]) + [0.0] * (3 - len(s["feedback"]))
            rows.append(b + a)
        sos = np.array(rows, dtype=float).reshape(-1, 6)
        return cls(float(d["gain"]), sos, float(d.get("sample_rate", DEFAULT_SAMPLE_RATE)))


def _numerator(amps, poles) -> np.ndarray:
    """Coefficients (ascending powers of w) of ``prod(1 - p w) + sum a_i (1 - w) prod_{j!=i}(1 - p_j w)``."""
    P = np.polynomial.polynomial
    den = np.array([1.0])
    for p in poles:
        den = P.polymul(den, [1.0, -p])
    num = den.copy()
    for i, a in enumerate(amps):
        term = np.array([a, -a])
        for j, p in enumerate(poles):
            if j != i:
                term = P.polymul(term, [1.0, -p])
        num = P.polyadd(num, term)
    return np.pad(num, (0, len(poles) + 1 - len(num)))


def design_predistortion(model: StepResponseModel) -> PredistortionFilter:
    """Exact inverse of the channel as a cascade of recursive sections.

    The channel numerator factors as ``c prod_k (1 - r_k w)`` with
    ``c = 1 + sum a_i``; the inverse is ``(1/c) prod_k (1 - p_k w) / (1 - r_k w)``.
    Real ``r_k`` give first-order sections, complex pairs are merged.
    """
    amps, poles = model.amplitudes, model.poles()
    if len(amps) == 0:
        return PredistortionFilter(1.0, np.zeros((0, 6)), model.sample_rate)
    c = 1.0 + amps.sum()
    if c <= 0:
        raise InstabilityError(f"channel step response starts at {c:.3g}; inverse is unbounded")
    # Roots of z^K N(1/z) are the z-plane zeros r_k.
    r = np.roots(_numerator(amps, poles))
    if np.any(np.abs(r) >= 1):
        raise InstabilityError(f"inverse filter pole at |r|={np.abs(r).max():.6f} >= 1")

    real = np.sort(r[np.abs(r.imag) <= 1e-12 * np.maximum(1, np.abs(r))].real)
    cplx = r[r.imag > 1e-12 * np.maximum(1, np.abs(r))]
    pz = list(np.sort(poles))
    rows = []
    for rk in real:
        pk = pz.pop(0)
        rows.append([1.0, -pk, 0.0, 1.0, -rk, 0.0])
    for rk in cplx:
        p1, p2 = pz.pop(0), pz.pop(0)
        rows.append([1.0, -(p1 + p2), p1 * p2, 1.0, -2 * rk.real, abs(rk) ** 2])
    return PredistortionFilter(1.0 / c, np.array(rows, dtype=float), model.sample_rate)


def predistort(model: StepResponseModel, waveform) -> np.ndarray:
    return design_predistortion(model).apply(waveform)


# Step-response fitting


def _design(t, taus):
    return np.exp(-t[:, None] / np.asarray(taus)[None, :])


def _linear_amps(t, y, taus):
    A = _design(t, taus)
    amps, *_ = np.linalg.lstsq(A, y, rcond=None)
    return amps, y - A @ amps


def _fit_k(t, y, k, rng):
    """Variable-projection fit of ``k`` exponentials; returns (taus, amps, rss)."""
    lo, hi = np.log(max(t.min(), 1e-3) / 3), np.log(t.max() * 3)
    best = None
    starts = [np.linspace(lo + 1, hi - 1, k)]
    starts += [np.sort(rng.uniform(lo, hi, k)) for _ in range(4)]
    for x0 in starts:
        try:
            res = least_squares(
                lambda lt: _linear_amps(t, y, np.exp(lt))[1],
                x0,
                bounds=(lo - 3, hi + 3),
                xtol=1e-14,
                ftol=1e-14,
                gtol=1e-14,
                max_nfev=2000,
            )
        except np.linalg.LinAlgError:
            continue
        rss = float(res.fun @ res.fun)
        if best is None or rss < best[2]:
            taus = np.exp(res.x)
            best = (taus, _linear_amps(t, y, taus)[0], rss)
    if best is None:
        raise FitError(f"{k}-component fit failed")
    return best


@dataclass(frozen=True)
class StepFit:
    model: StepResponseModel
    n_components: int
    rss: float
    bic: dict


def fit_step_response(
    delay_ns,
    phase_error,
    scale: float = 1.0,
    max_components: int = MAX_COMPONENTS,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
) -> StepFit:
    """Fit ``phase_error / scale = sum_i a_i exp(-t / tau_i)`` with BIC order selection.

    ``scale`` converts the measured phase error into fractional flux error.
    """
    t = np.asarray(delay_ns, dtype=float)
    y = np.asarray(phase_error, dtype=float) / scale
    if t.shape != y.shape or t.ndim != 1:
        raise FitError("delay and phase-error arrays must be 1-D and equal length")
    if np.any(t <= 0):
        raise FitError("delays must be positive")
    n = t.size
    # RSS floor keeps exact (noiseless) fits from competing on round-off.
    floor = max(n * (1e-12 * np.abs(y).max(initial=0.0)) ** 2, np.finfo(float).tiny)
    rng = np.random.default_rng(seed)

    fits = {0: ((), (), float(y @ y))}
    for k in range(1, max_components + 1):
        if n < 5 * 2 * k:
            break
        taus, amps, rss = _fit_k(t, y, k, rng)
        fits[k] = (taus, amps, rss)
    bic = {k: n * np.log(max(f[2], floor) / n) + 2 * k * np.log(n) for k, f in fits.items()}
    k_best = min(bic, key=lambda k: (bic[k], k))
    taus, amps, rss = fits[k_best]
    if k_best and not np.all(np.abs(amps) < 1):
        raise FitError("fitted amplitude magnitude reaches 1")
    s = np.sort(np.asarray(taus))
    if len(s) > 1 and np.any(s[1:] / s[:-1] < 1.1):
        warnings.warn("two fitted settling times lie within 10%", RankWarning, stacklevel=2)
    model = StepResponseModel(tuple(zip(amps, taus)), sample_rate)
    return StepFit(model, k_best, rss, {int(k): float(v) for k, v in bic.items()})


# P1 map tilt correction


def tilt_shift(t, a: float, b: float):
    """Common pulse-tail shape ``Z_c = a (1 - exp(b t))``."""
    return a * (1 - np.exp(b * np.asarray(t, dtype=float)))


def correct_p1_tilt(p1_map, z_l, t, a: float, b: float) -> np.ndarray:
    """Resample each time row of ``p1_map[t, z]`` at ``z + Z_c(t)``.

    Cells that fall outside the Z_L grid become NaN.
    """
    m = np.asarray(p1_map, dtype=float)
    z = np.asarray(z_l, dtype=float)
    t = np.asarray(t, dtype=float)
    if m.shape != (t.size, z.size):
        raise GridError(f"map shape {m.shape} does not match (len(t), len(z_l)) = {(t.size, z.size)}")
    dz = np.diff(z)
    if z.size < 2 or not (np.all(dz > 0) or np.all(dz < 0)):
        raise GridError("Z_L axis must be strictly monotone")
    if not np.allclose(dz, dz[0], rtol=1e-6, atol=0):
        raise GridError("Z_L axis must be uniform")
    if dz[0] < 0:
        return correct_p1_tilt(m[:, ::-1], z[::-1], t, a, b)[:, ::-1]
    out = np.empty_like(m)
    for i, zc in enumerate(tilt_shift(t, a, b)):
        out[i] = np.interp(z + zc, z, m[i], left=np.nan, right=np.nan)
    return out
