"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""

import time
import warnings

import numpy as np
import pytest

from fluxsim import constants as C
from fluxsim.circuit import DEVICE_PARAMS, FluxBias, diagonalize, effective_ej, flux_offset, sweet_spot_locate
from fluxsim.decoherence import DEVICE_T1_MODEL, NoiseModel, clj_predicted, effective_temperature, golden_rule_rates, t1_model
from fluxsim.errors import FitError, IdentifiabilityWarning
from fluxsim.fluxcal import FluxMapParams, fit_flux_map, synthetic_calibration
from fluxsim.noisespec import SpectralModel, fit_noise_model, synthetic_points
from fluxsim.pulsecomp import DEVICE_ZJ_MODEL, DEVICE_ZL_MODEL, predistort, simulate_distortion
from fluxsim.tlsbath import TlsBathConfig, find_dips, p1_sweep, sample_bath


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def test_criterion_01_ej_range(acceptance):
    with Timer() as t:
        ej = np.abs(effective_ej(DEVICE_PARAMS, np.linspace(0.0, 1.0, 20001)))
        lo, hi = ej.min(), ej.max()
    ok = abs(lo - 0.05) < 1e-12 and abs(hi - 14.19) < 1e-12 and t.seconds < 1
    acceptance(1, ok, f"|E_J| in [{lo:.12g}, {hi:.12g}] GHz, {t.seconds:.3f} s")
    assert ok


def test_criterion_02_readout_frequency(acceptance):
    with Timer() as t:
        f = diagonalize(DEVICE_PARAMS, FluxBias(0.376, phi_ext=0.5), check_convergence=True).f01_ghz
    ok = abs(f - 0.385) <= 0.040 and t.seconds < 5
    acceptance(2, ok, f"f01 = {f * 1e3:.2f} MHz, {t.seconds:.2f} s")
    assert ok


def test_criterion_03_commutator_identity(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    with Timer() as t:
        for phi_j, phi_ext in zip(rng.uniform(0, 0.5, 50), rng.uniform(0, 1, 50)):
            spec = diagonalize(DEVICE_PARAMS, FluxBias(phi_j, phi_ext=phi_ext))
            e = spec.energies_ghz
            expected = 1j * (e[None, :] - e[:, None]) * spec.phi_mat / (8 * DEVICE_PARAMS.ec_ghz)
            # off-diagonal only; the floor keeps symmetry-forbidden zeros from dominating
            mask = ~np.eye(e.size, dtype=bool)
            scale = np.maximum(np.abs(expected), 1e-3 * np.abs(spec.n_mat).max())
            worst = max(worst, float(np.max(np.abs(spec.n_mat - expected)[mask] / scale[mask])))
    ok = worst <= 1e-6 and t.seconds < 30
    acceptance(3, ok, f"max relative deviation {worst:.2e} over 50 biases, {t.seconds:.1f} s")
    assert ok


def test_criterion_04_t1_crossover(acceptance):
    with Timer() as t:
        phi_j = np.linspace(0.0, 0.45, 181)
        specs = [diagonalize(DEVICE_PARAMS, FluxBias(j, phi_ext=0.5)) for j in phi_j]
        f = np.array([s.f01_ghz for s in specs])
        t1 = np.array([t1_model(s, DEVICE_T1_MODEL) for s in specs])
        peak = f[int(np.argmax(t1))]
    ok = 0.3 <= peak <= 0.5 and t.seconds < 120
    acceptance(4, ok, f"sweet-spot T1 peaks at {peak * 1e3:.0f} MHz ({t1.max() * 1e6:.0f} us), {t.seconds:.1f} s")
    assert ok


def test_criterion_05_detailed_balance(acceptance):
    worst_ratio = worst_total = 0.0
    with Timer() as t:
        for f in np.geomspace(0.05, 5.0, 15):
            cold = golden_rule_rates(f, 1.0, DEVICE_PARAMS.ec_ghz, NoiseModel(t_eff=1e-3))[2]
            for temp in np.geomspace(0.005, 1.0, 15):
                down, up, total = golden_rule_rates(f, 1.0, DEVICE_PARAMS.ec_ghz, NoiseModel(t_eff=temp))
                x = C.h * f * 1e9 / (C.k_B * temp)
                worst_ratio = max(worst_ratio, abs(down / up / np.exp(x) - 1))
                worst_total = max(worst_total, abs(total / cold - 1))
    ok = worst_ratio < 1e-12 and worst_total < 1e-14 and t.seconds < 1
    acceptance(5, ok, f"ratio error {worst_ratio:.1e}, total-rate drift {worst_total:.1e}, {t.seconds:.3f} s")
    assert ok


def test_criterion_06_effective_temperature(acceptance):
    with Timer() as t:
        t_eff = effective_temperature(0.2314, 0.385)
    ok = abs(t_eff - 15.4e-3) <= 0.1e-3 and t.seconds < 1
    acceptance(6, ok, f"T_eff = {t_eff * 1e3:.3f} mK")
    assert ok


def test_criterion_07_clj_prediction(acceptance):
    with Timer() as t:
        c = clj_predicted(a_l=12.0e-6, a_j=7.6e-6)
    ok = abs(c - 0.3167) <= 0.0005 and t.seconds < 1
    acceptance(7, ok, f"c_LJ = {c:.5f}")
    assert ok


@pytest.mark.slow
def test_criterion_08_noise_model_recovery(acceptance):
    truth = SpectralModel(a_l=14e-6, alpha=1.0, gamma=2.5, t_a=0.013)
    f = np.geomspace(0.08, 2.0, 25)
    rng = np.random.default_rng(0)
    ok_alpha = ok_gamma = ok_amp = ok_all = 0
    with Timer() as t, warnings.catch_warnings():
        warnings.simplefilter("ignore", IdentifiabilityWarning)
        for _ in range(100):
            try:
                m = fit_noise_model(synthetic_points(truth, f, 0.2, rng)).model
            except FitError:
                continue
            a = abs(m.alpha - 1.0) <= 0.15
            g = abs(m.gamma - 2.5) <= 0.4
            amp = abs(m.a_l / 14e-6 - 1) <= 0.15
            ok_alpha += a
            ok_gamma += g
            ok_amp += amp
            ok_all += a and g and amp
    ok = ok_all >= 95 and t.seconds < 300
    acceptance(
        8,
        ok,
        f"{ok_all}/100 trials within all bounds (alpha {ok_alpha}, gamma {ok_gamma}, A_L {ok_amp}), {t.seconds:.0f} s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_09_tls_monte_carlo(acceptance):
    f = np.linspace(0.2, 2.0, 3601)
    with Timer() as t:
        curve = p1_sweep(sample_bath(TlsBathConfig(), 0), DEVICE_PARAMS, f, tau=15e-6)
        edges = np.linspace(0.2, 2.0, 10)
        medians = np.array([np.median(curve.p1[(f >= a) & (f < b)]) for a, b in zip(edges[:-1], edges[1:])])
        dips = find_dips(f, curve.p1)
        lower = [d.prominence for d in dips if d.frequency_ghz < 1.1]
        upper = [d.prominence for d in dips if d.frequency_ghz >= 1.1]
    monotone = bool(np.all(np.diff(medians) < 0))
    deeper_up = bool(lower and upper and np.mean(lower) < np.mean(upper))
    ok = monotone and deeper_up and t.seconds < 600
    acceptance(
        9,
        ok,
        f"bin medians decreasing: {monotone}; mean dip depth {np.mean(lower) if lower else 0:.3f} "
        f"({len(lower)} dips) below 1.1 GHz vs {np.mean(upper) if upper else 0:.3f} ({len(upper)}) above, "
        f"{t.seconds:.1f} s",
    )
    assert ok


def test_criterion_10_predistortion_round_trip(acceptance):
    step = np.ones(5000)
    errs = {}
    with Timer() as t:
        for name, model in (("Z_L", DEVICE_ZL_MODEL), ("Z_J", DEVICE_ZJ_MODEL)):
            y = simulate_distortion(model, predistort(model, step))
            errs[name] = float(np.max(np.abs(y[10:] - 1)))
    ok = max(errs.values()) <= 2e-3 and t.seconds < 10
    acceptance(10, ok, ", ".join(f"{k} max error {v:.1e}" for k, v in errs.items()) + f", {t.seconds:.2f} s")
    assert ok


@pytest.mark.slow
def test_criterion_11_flux_map_fit(acceptance):
    truth = FluxMapParams(0.57621, 0.02358, -0.42, 0.31, 1.25, 0.85)
    guess = FluxMapParams(0.5, 0.0, -0.441, 0.2945, 1.5, 0.68)
    # Gaussian width chosen so the expected mean absolute deviation is 4 MHz
    sigma = 4.0 * np.sqrt(np.pi / 2)
    with Timer() as t:
        data = synthetic_calibration(truth, DEVICE_PARAMS, noise_mhz=sigma, rng=np.random.default_rng(0))
        fit = fit_flux_map(data, DEVICE_PARAMS, guess)
    rel = np.abs(fit.params.as_array() / truth.as_array() - 1)
    ok = abs(fit.mad_mhz - 4.0) <= 1.0 and np.all(rel <= 0.02) and t.seconds < 120
    acceptance(11, ok, f"MAD {fit.mad_mhz:.2f} MHz, worst parameter error {rel.max() * 100:.2f}%, {t.seconds:.1f} s")
    assert ok


def test_criterion_12_sweet_spot_consistency(acceptance):
    worst = 0.0
    with Timer() as t:
        for phi_j in np.linspace(0.0, 0.45, 20):
            worst = max(worst, abs(sweet_spot_locate(DEVICE_PARAMS, phi_j) - (0.5 + flux_offset(DEVICE_PARAMS, phi_j))))
    ok = worst <= 1e-4 and t.seconds < 120
    acceptance(12, ok, f"max |locate - (1/2 + offset)| = {worst:.1e} Phi0, {t.seconds:.1f} s")
    assert ok
