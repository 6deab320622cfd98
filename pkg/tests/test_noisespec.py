import json
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxsim import constants as C
from fluxsim.circuit import DEVICE_PARAMS, FluxBias, diagonalize
from fluxsim.errors import ConfigError, DomainError, FitError, IdentifiabilityWarning
from fluxsim.noisespec import (
    DecayTrace,
    SpectralModel,
    decay_curve,
    fit_noise_model,
    fit_relaxation_pair,
    points_to_csv,
    read_traces_csv,
    relaxation_from_spectra,
    spectra_from_fit,
    synthetic_pair,
    synthetic_points,
    traces_to_csv,
)
from oracles import effective_temperature_scalar, s_plus_scalar

TIMES = np.geomspace(0.5, 1500, 30)
READOUT = diagonalize(DEVICE_PARAMS, FluxBias(0.376, phi_ext=0.5))


@pytest.fixture(scope="module")
def readout():
    return READOUT


# traces


def test_trace_validation():
    with pytest.raises(ConfigError):
        DecayTrace([1, 1, 2], [0.1, 0.2, 0.3])
    with pytest.raises(ConfigError):
        DecayTrace([1, 2], [0.1, 1.2])
    with pytest.raises(ConfigError):
        DecayTrace([1, 2], [0.1, 0.2], "middle")


def test_decay_curve_endpoints():
    assert decay_curve(0.0, 50, 0.1, 0.9) == pytest.approx(0.9)
    assert decay_curve(1e6, 50, 0.1, 0.9) == pytest.approx(0.1)


# relaxation fit


def test_noiseless_recovery():
    up, down = synthetic_pair(TIMES, 100.0, 0.1)
    fit = fit_relaxation_pair(up, down)
    assert fit.t1 == pytest.approx(100.0, rel=1e-9)
    assert fit.p_stray == pytest.approx(0.1, rel=1e-9)
    assert fit.residual_rms < 1e-12


def test_unequal_initial_populations():
    up, down = synthetic_pair(TIMES, 37.0, 0.04, p0_up=0.93, p0_down=0.02)
    fit = fit_relaxation_pair(up, down)
    assert fit.t1 == pytest.approx(37.0, rel=1e-9)
    assert (fit.p0_up, fit.p0_down) == pytest.approx((0.93, 0.02), abs=1e-9)


def test_noisy_recovery_monte_carlo():
    """1% Gaussian noise: the 3% / 0.01 bounds hold in at least 95 of 100 realizations."""
    rng = np.random.default_rng(0)
    t1_ok = p_ok = 0
    for _ in range(100):
        fit = fit_relaxation_pair(*synthetic_pair(TIMES, 100.0, 0.1, noise=0.01, rng=rng))
        t1_ok += abs(fit.t1 / 100 - 1) < 0.03
        p_ok += abs(fit.p_stray - 0.1) < 0.01
    assert t1_ok >= 95 and p_ok >= 95


def test_truncation_stability():
    up, down = synthetic_pair(TIMES, 100.0, 0.1)
    full = fit_relaxation_pair(up, down)
    short = fit_relaxation_pair(up.truncate(300), down.truncate(300))
    assert short.t1 == pytest.approx(full.t1, rel=0.01)
    assert short.p_stray == pytest.approx(full.p_stray, rel=0.01)


def test_fit_errors():
    up, down = synthetic_pair(TIMES[:5], 100.0, 0.1)
    with pytest.raises(FitError):
        fit_relaxation_pair(up, down)
    up, down = synthetic_pair(TIMES, 100.0, 0.1)
    with pytest.raises(ConfigError):
        fit_relaxation_pair(down, up)
    # nearly flat traces drive T1 far past 100 ms
    slow_up = DecayTrace(TIMES, 0.9 - 1e-6 * TIMES)
    slow_down = DecayTrace(TIMES, 0.05 + 1e-6 * TIMES, "ground")
    with pytest.raises(FitError):
        fit_relaxation_pair(slow_up, slow_down)


# spectra


def test_spectra_vs_oracle(readout):
    pt = spectra_from_fit((100.0, 0.2314), readout)
    ref = s_plus_scalar(100e-6, readout.phi01, DEVICE_PARAMS.el_ghz) * 1e12
    assert pt.s_plus == pytest.approx(ref, rel=1e-12)
    assert pt.s_minus == pytest.approx((1 - 2 * 0.2314) * ref, rel=1e-12)


def test_spectra_stray_limits(readout):
    a = spectra_from_fit((50.0, 0.0), readout)
    assert a.s_minus == a.s_plus and a.t_eff == 0.0
    b = spectra_from_fit((50.0, 0.5), readout)
    assert b.s_minus == 0.0


def test_readout_effective_temperature(readout):
    pt = spectra_from_fit((100.0, 0.2314), readout)
    assert pt.t_eff == pytest.approx(effective_temperature_scalar(0.2314, readout.f01_ghz), rel=1e-12)
    assert pt.t_eff == pytest.approx(15e-3, abs=0.6e-3)


def test_spectra_domain_errors(readout):
    with pytest.raises(DomainError):
        spectra_from_fit((0.0, 0.1), readout)
    mat = readout.phi_mat.copy()
    mat[0, 1] = mat[1, 0] = 1e-8
    tiny = replace(readout, phi_mat=mat)
    with pytest.raises(DomainError):
        spectra_from_fit((10.0, 0.1), tiny)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.02, 0.4))
def test_round_trip_through_traces(log_s, p):
    spec = READOUT
    s_plus = 10**log_s
    s_minus = (1 - 2 * p) * s_plus
    t1, p_stray = relaxation_from_spectra(s_plus, s_minus, spec)
    times = np.geomspace(t1 / 200, 15 * t1, 30)
    fit = fit_relaxation_pair(*synthetic_pair(times, t1, p_stray))
    pt = spectra_from_fit(fit, spec)
    assert pt.s_plus == pytest.approx(s_plus, rel=1e-7)
    assert pt.s_minus == pytest.approx(s_minus, rel=1e-6, abs=1e-9 * s_plus)


# spectral model


def test_model_tanh_relation():
    m = SpectralModel()
    f = np.geomspace(0.01, 5, 50)
    ratio = m.s_minus(f) / m.s_plus(f)
    assert np.allclose(ratio, np.tanh(C.h * f * 1e9 / (2 * C.k_B * m.t_a)), rtol=1e-14)


def test_model_limits():
    m = SpectralModel()
    assert m.s_minus(50.0) / m.s_plus(50.0) == pytest.approx(1.0, abs=1e-12)
    f = 1e-4
    assert m.s_minus(f) / m.s_plus(f) == pytest.approx(C.h * f * 1e9 / (2 * C.k_B * m.t_a), rel=1e-4)


def test_flux_term_anchor():
    # at w = 1 rad/s and negligible emission the flux term is 2 pi A^2
    m = SpectralModel(t_a=1e-15)
    assert m.flux_term(1.0 / (2 * np.pi * C.GHZ)) == pytest.approx(2 * np.pi * 196.0, rel=1e-12)


def test_crossover_near_400_mhz():
    assert 0.3 <= SpectralModel().crossover_ghz() <= 0.5


def test_noiseless_model_recovery():
    truth = SpectralModel()
    fit = fit_noise_model(synthetic_points(truth, np.geomspace(0.08, 2.0, 25)))
    for name in ("a_l", "alpha", "tan_delta", "gamma", "t_a"):
        assert getattr(fit.model, name) == pytest.approx(getattr(truth, name), rel=1e-6)
    assert fit.crossover_ghz == pytest.approx(truth.crossover_ghz(), rel=1e-6)
    nm = fit.model.to_noise_model()
    assert nm.a_l == pytest.approx(14e-6, rel=1e-6) and nm.gamma_exp == pytest.approx(2.5, rel=1e-6)
    json.loads(fit.to_json())


def test_fitted_model_tanh():
    rng = np.random.default_rng(3)
    fit = fit_noise_model(synthetic_points(SpectralModel(), np.geomspace(0.08, 2.0, 25), 0.2, rng))
    f = np.geomspace(0.08, 2.0, 40)
    t = fit.model.t_a
    assert np.allclose(fit.model.s_minus(f) / fit.model.s_plus(f), np.tanh(C.h * f * 1e9 / (2 * C.k_B * t)), rtol=1e-14)
    assert all(np.isfinite(v) for v in fit.stderr.values())


def test_identifiability_warning():
    pts = synthetic_points(SpectralModel(), np.geomspace(0.9, 2.0, 12))
    with pytest.warns(IdentifiabilityWarning):
        fit_noise_model(pts)


def test_no_warning_when_both_regimes_covered():
    with warnings.catch_warnings():
        warnings.simplefilter("error", IdentifiabilityWarning)
        fit_noise_model(synthetic_points(SpectralModel(), np.geomspace(0.08, 2.0, 25)))


def test_too_few_points():
    with pytest.raises(FitError):
        fit_noise_model(synthetic_points(SpectralModel(), np.geomspace(0.1, 1, 5)))


# I/O


def test_trace_csv_round_trip():
    a = synthetic_pair(TIMES, 20.0, 0.05)
    b = synthetic_pair(TIMES, 60.0, 0.1)
    groups = [({"phi_j": 0.3}, *a), ({"phi_j": 0.35}, *b)]
    text = "# comment line\n" + traces_to_csv(groups)
    back = read_traces_csv(text)
    assert [g[0] for g in back] == [{"phi_j": 0.3}, {"phi_j": 0.35}]
    assert np.array_equal(back[1][1].p1, b[0].p1)
    assert back[0][2].prepared_state == "ground"


def test_trace_csv_errors():
    with pytest.raises(ConfigError):
        read_traces_csv("delay_us,p1\n1,0.5\n")
    with pytest.raises(ConfigError):
        read_traces_csv("delay_us,p1,prepared_state\n1,0.5,excited\n2,0.4,excited\n")


def test_points_csv():
    text = points_to_csv(synthetic_points(SpectralModel(), [0.1, 0.2]))
    rows = text.splitlines()
    assert rows[0].startswith("f01_GHz,T1_us") and len(rows) == 3
