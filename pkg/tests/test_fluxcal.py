import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fluxsim.circuit import DEVICE_PARAMS
from fluxsim.errors import ConfigError, DegenerateSignalError, FitError, SingularMatrixError
from fluxsim.fluxcal import (
    NATIVE_CROSSTALK,
    DEVICE_CROSSTALK,
    CrosstalkMatrix,
    FluxMapParams,
    apply_crosstalk_correction,
    calibration_to_csv,
    fit_flux_map,
    fluxes_to_voltages,
    frequency_from_ramsey_fft,
    model_f01,
    read_calibration_csv,
    synthetic_calibration,
    voltages_to_fluxes,
)

TRUTH = FluxMapParams(0.57621, 0.02358, -0.42, 0.31, 1.25, 0.85)
GUESS = FluxMapParams(0.5, 0.0, -0.441, 0.2945, 1.5, 0.68)


@pytest.fixture(scope="module")
def clean_data():
    return synthetic_calibration(TRUTH, DEVICE_PARAMS)


@pytest.fixture(scope="module")
def clean_fit(clean_data):
    return fit_flux_map(clean_data, DEVICE_PARAMS, GUESS)


def objective(data, p):
    return float(np.sum(np.abs(model_f01(data[:, 0], data[:, 1], p, DEVICE_PARAMS) - data[:, 2])))


# crosstalk


def test_identity_correction():
    z = np.array([0.3, -1.2])
    assert np.array_equal(apply_crosstalk_correction(z, CrosstalkMatrix()), z)


def test_device_matrix_inverse_by_hand():
    det = 1 - 0.57621 * 0.02358
    z = apply_crosstalk_correction([1.0, 0.0], DEVICE_CROSSTALK)
    assert z == pytest.approx([1 / det, -0.02358 / det], rel=1e-14)
    assert DEVICE_CROSSTALK.apply(z) == pytest.approx([1.0, 0.0], abs=1e-12)


@pytest.mark.parametrize("eps", [1e-3, 1e-5])
def test_near_singular(eps):
    o = 1 - eps
    if 1 - o * o < 1e-6:
        with pytest.raises(SingularMatrixError):
            CrosstalkMatrix(o, o)
    else:
        m = CrosstalkMatrix(o, o)
        assert m.det == pytest.approx(1 - o * o)
    with pytest.raises(SingularMatrixError):
        CrosstalkMatrix(1.0, 1.0)


def test_native_crosstalk_seed():
    assert NATIVE_CROSSTALK == 0.5
    assert FluxMapParams.default_guess().o1 == 0.5


# voltage map


def test_map_zero_point():
    p = FluxMapParams(0.0, 0.0, 0.2, -0.1, 1.3, 0.7)
    assert voltages_to_fluxes((0.2, -0.1), p) == pytest.approx((0.0, 0.0))


def test_scale_doubling_halves_flux():
    z = (0.8, 0.4)
    a = np.array(voltages_to_fluxes(z, TRUTH))
    doubled = FluxMapParams(TRUTH.o1, TRUTH.o2, TRUTH.z0_l, TRUTH.z0_j, 2 * TRUTH.s_l, 2 * TRUTH.s_j)
    assert np.array(voltages_to_fluxes(z, doubled)) == pytest.approx(a / 2, rel=1e-14)


@given(
    st.floats(-0.9, 0.9),
    st.floats(-0.9, 0.9),
    st.floats(-2, 2),
    st.floats(-2, 2),
    st.floats(0.1, 5),
    st.floats(-5, -0.1),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_map_round_trip(o1, o2, z0l, z0j, sl, sj, phi_l, phi_j):
    p = FluxMapParams(o1, o2, z0l, z0j, sl, sj)
    back = voltages_to_fluxes(fluxes_to_voltages((phi_l, phi_j), p), p)
    assert back[0] == pytest.approx(phi_l, abs=1e-12 * max(1, abs(phi_l)) * 10)
    assert back[1] == pytest.approx(phi_j, abs=1e-12 * max(1, abs(phi_j)) * 10)


def test_params_validation_and_dict():
    with pytest.raises(ConfigError):
        FluxMapParams(0, 0, 0, 0, 0.0, 1.0)
    with pytest.raises(SingularMatrixError):
        FluxMapParams(1.0, 1.0, 0, 0, 1, 1)
    assert FluxMapParams.from_dict(TRUTH.to_dict()) == TRUTH
    assert FluxMapParams.from_array(TRUTH.as_array()) == TRUTH


# combined fit


def test_synthetic_data_self_consistent(clean_data):
    assert clean_data.shape == (100, 3)
    assert objective(clean_data, TRUTH) < 1e-9


def test_noiseless_recovery(clean_fit):
    assert clean_fit.params.as_array() == pytest.approx(TRUTH.as_array(), rel=1e-4)
    assert clean_fit.mad_mhz < 1e-3
    d = json.loads(clean_fit.to_json())
    assert set(d["stderr"]) == {"o1", "o2", "z0_l", "z0_j", "s_l", "s_j"}


def test_basin_scales_off_by_20_percent(clean_data):
    start = FluxMapParams(0.5, 0.0, -0.42, 0.31, 1.25 * 1.2, 0.85 * 0.8)
    fit = fit_flux_map(clean_data, DEVICE_PARAMS, start)
    assert fit.params.as_array() == pytest.approx(TRUTH.as_array(), rel=1e-4)


def test_truth_is_minimum_among_random_points(clean_data):
    rng = np.random.default_rng(0)
    at_truth = objective(clean_data, TRUTH)
    x = TRUTH.as_array()
    for _ in range(100):
        trial = x * (1 + rng.uniform(-0.2, 0.2, 6))
        assert objective(clean_data, FluxMapParams.from_array(trial)) > at_truth


@pytest.mark.slow
def test_random_restarts_do_not_beat_truth(clean_data):
    rng = np.random.default_rng(1)
    at_truth = objective(clean_data, TRUTH)
    for _ in range(100):
        start = FluxMapParams.from_array(TRUTH.as_array() * (1 + rng.uniform(-0.2, 0.2, 6)))
        fit = fit_flux_map(clean_data, DEVICE_PARAMS, start)
        assert objective(clean_data, fit.params) >= at_truth - 1e-12


def test_fit_input_errors(clean_data):
    with pytest.raises(FitError):
        fit_flux_map(clean_data[:10], DEVICE_PARAMS, GUESS)
    flat = clean_data.copy()
    flat[:, 1] = 0.3
    with pytest.raises(FitError):
        fit_flux_map(flat, DEVICE_PARAMS, GUESS)
    with pytest.raises(ConfigError):
        fit_flux_map(clean_data[:, :2], DEVICE_PARAMS, GUESS)


def test_cofit_flag_runs(clean_data):
    fit = fit_flux_map(clean_data, DEVICE_PARAMS, TRUTH, cofit_circuit=True)
    assert fit.circuit.el_ghz == pytest.approx(DEVICE_PARAMS.el_ghz, rel=1e-4)
    assert "el_ghz" in fit.stderr


def test_calibration_csv_round_trip(clean_data):
    back = read_calibration_csv(calibration_to_csv(clean_data))
    assert np.allclose(back, clean_data, rtol=1e-14)
    with pytest.raises(ConfigError):
        read_calibration_csv("a,b\n1,2\n")


# Ramsey


def test_ramsey_pure_cosine():
    t = np.linspace(0, 20, 256, endpoint=False)
    p1 = 0.5 + 0.5 * np.cos(2 * np.pi * 2.0 * t)
    assert frequency_from_ramsey_fft(t, p1) == pytest.approx(2.0, abs=0.02)


def test_ramsey_gaussian_decay():
    t = np.linspace(0, 20, 256, endpoint=False)
    p1 = 0.5 + 0.5 * np.cos(2 * np.pi * 2.3 * t) * np.exp(-((t / 8.0) ** 2))
    assert frequency_from_ramsey_fft(t, p1) == pytest.approx(2.3, abs=0.05)


def test_ramsey_errors():
    t = np.linspace(0, 20, 256, endpoint=False)
    with pytest.raises(DegenerateSignalError):
        frequency_from_ramsey_fft(t, np.full(t.size, 0.4))
    with pytest.raises(ConfigError):
        frequency_from_ramsey_fft(t[:20], t[:20])
    with pytest.raises(ConfigError):
        frequency_from_ramsey_fft(t**2, np.cos(t))
