import math

import numpy as np
import pytest

from nvqpt.pulses import PhysicsModel, PulseSettings
from nvqpt.ramsey import (
    PARAM_NAMES,
    FringeSeries,
    amplitude_at_excitation,
    fidelity_from_amplitude,
    fit_fringe,
    fringe_model,
    read_fringe_csv,
    simulate_fringe,
    with_counts_noise,
    write_fringe_csv,
)

TRUE = dict(
    amplitude=0.89, tau_star_ns=6.0, t0_ns=1.35, f_ghz=2.14,
    phi0_rad=0.7, turnon_width_ns=0.4,
)


def synthetic_series(rng, noise=0.01, t=None, **overrides):
    params = {**TRUE, **overrides}
    if t is None:
        t = np.arange(-2.0, 19.0, 0.15)
    p = fringe_model(t, *[params[k] for k in PARAM_NAMES])
    if noise:
        p = p + rng.normal(scale=noise, size=t.shape)
    sigma = np.full_like(t, float(noise))
    return FringeSeries(t_es_ns=t, p0=np.clip(p, -0.2, 1.2), sigma_p0=sigma)


@pytest.fixture(scope="module")
def default_sim():
    model = PhysicsModel()
    grid = np.arange(-3.0, 18.0 + 1e-9, 0.15)
    series = simulate_fringe(grid, model)
    return model, series, fit_fringe(series)


class TestFringeSeries:
    def test_requires_increasing_time(self):
        with pytest.raises(ValueError):
            FringeSeries(np.array([0.0, 0.0]), np.array([0.5, 0.5]), np.zeros(2))

    def test_rejects_wild_normalization(self):
        with pytest.raises(ValueError):
            FringeSeries(np.array([0.0, 1.0]), np.array([0.5, 1.5]), np.zeros(2))

    def test_csv_round_trip(self, tmp_path, rng):
        series = synthetic_series(rng)
        path = tmp_path / "fringe.csv"
        write_fringe_csv(path, series)
        assert path.read_text().splitlines()[0] == "t_es_ns,p0,sigma_p0"
        restored = read_fringe_csv(path)
        assert np.array_equal(restored.t_es_ns, series.t_es_ns)
        assert np.array_equal(restored.p0, series.p0)
        assert np.array_equal(restored.sigma_p0, series.sigma_p0)


class TestSimulateFringe:
    def test_baseline_before_excitation(self, default_sim):
        _, series, _ = default_sim
        early = series.p0[series.t_es_ns <= -1.5]
        assert early.size >= 5
        np.testing.assert_allclose(early, 0.5, atol=0.02)

    def test_decayed_limit(self):
        # Several decay constants out the envelope is fully gone.
        series = simulate_fringe(np.arange(21.0, 23.0, 0.11), PhysicsModel())
        np.testing.assert_allclose(series.p0, 0.5, atol=0.02)

    def test_fringe_frequency_by_fft(self):
        # Periodogram oracle on a densely sampled clean window.
        model = PhysicsModel()
        grid = np.arange(2.0, 6.0 + 1e-9, 0.05)
        series = simulate_fringe(grid, model)
        y = series.p0 - series.p0.mean()
        padded = 1 << 16
        spectrum = np.abs(np.fft.rfft(y, n=padded))
        freqs = np.fft.rfftfreq(padded, d=0.05)
        peak = freqs[1 + np.argmax(spectrum[1:])]
        assert peak == pytest.approx(2.14, rel=0.005)

    def test_rejects_out_of_range_grid(self):
        with pytest.raises(ValueError):
            simulate_fringe([-6.0, 0.0], PhysicsModel())

    def test_counts_noise_layer(self, rng):
        series = simulate_fringe(np.arange(1.0, 3.0, 0.25), PhysicsModel())
        noisy = with_counts_noise(series, 1e5, 5e4, rng)
        assert np.all(noisy.sigma_p0 > 0)
        np.testing.assert_allclose(noisy.p0, series.p0, atol=0.05)


class TestFitFringe:
    def test_round_trip_recovery_within_errors(self, rng):
        series = synthetic_series(rng)
        fit = fit_fringe(series)
        recovered = fit.values
        truth = np.array([TRUE[k] for k in PARAM_NAMES])
        pulls = np.abs(recovered - truth) / fit.sigmas
        assert np.all(pulls <= 3.0), f"pulls {dict(zip(PARAM_NAMES, pulls))}"
        assert fit.reduced_chisq == pytest.approx(1.0, abs=0.4)

    def test_flat_data_has_no_significant_amplitude(self, rng):
        t = np.arange(-2.0, 19.0, 0.15)
        p = 0.5 + rng.normal(scale=0.01, size=t.shape)
        series = FringeSeries(t, np.clip(p, -0.2, 1.2), np.full_like(t, 0.01))
        fit = fit_fringe(series)
        assert fit.amplitude <= 2.0 * fit.sigmas[0] + 1e-9

    def test_requires_enough_points(self, rng):
        short = synthetic_series(rng, t=np.arange(0.0, 3.0, 0.15))
        with pytest.raises(ValueError, match="40"):
            fit_fringe(short)

    def test_recovers_tau_from_full_simulation(self, default_sim):
        model, _, fit = default_sim
        assert fit.tau_star_ns == pytest.approx(model.tau_star_ns, rel=0.15)
        assert fit.f_ghz == pytest.approx(model.f_es_ghz, rel=0.005)

    def test_estimator_is_unbiased_at_desk_scale(self, rng):
        # Mean amplitude error over 200 noisy realizations below sigma_A / 3.
        estimates = []
        sigmas = []
        for _ in range(200):
            fit = fit_fringe(synthetic_series(rng))
            estimates.append(fit.amplitude)
            sigmas.append(fit.sigmas[0])
        bias = abs(np.mean(estimates) - TRUE["amplitude"])
        assert bias <= np.median(sigmas) / 3.0

    def test_no_residual_structure_at_fringe_frequency(self, default_sim):
        # In the decay region the model must absorb the oscillation: the
        # residual quadrature amplitude at f_fit stays below the 2-sigma
        # scale of even a noise-free fit tolerance.
        _, series, fit = default_sim
        resid = series.p0 - fringe_model(series.t_es_ns, *fit.values)
        sel = series.t_es_ns > fit.t0_ns + 2.0 * fit.turnon_width_ns
        t, r = series.t_es_ns[sel], resid[sel]
        c = 2.0 * np.mean(r * np.cos(2 * math.pi * fit.f_ghz * t))
        s = 2.0 * np.mean(r * np.sin(2 * math.pi * fit.f_ghz * t))
        assert math.hypot(c, s) <= 5e-4

    def test_noiseless_self_consistency(self, rng):
        # Data generated from the model itself must be reproduced to the
        # optimizer tolerance.
        series = synthetic_series(rng, noise=0.0)
        fit = fit_fringe(series)
        resid = series.p0 - fringe_model(series.t_es_ns, *fit.values)
        assert np.sqrt(np.mean(resid**2)) <= 1e-3


class TestAmplitudeFidelity:
    def test_spec_arithmetic(self, rng):
        fit = fit_fringe(synthetic_series(rng, noise=0.0))
        f, sigma = fidelity_from_amplitude(fit)
        assert f == pytest.approx(0.5 * (1 + fit.amplitude))
        assert sigma == pytest.approx(0.5 * fit.sigmas[0])

    def test_limits(self, rng):
        fit = fit_fringe(synthetic_series(rng, noise=0.0, amplitude=1.0))
        assert fidelity_from_amplitude(fit)[0] == pytest.approx(1.0, abs=1e-6)

    def test_extrapolation_to_excitation_instant_is_unbiased(self):
        # On the full simulation the raw amplitude parameter inherits the
        # erf-rise bias, while the decay-law value at the excitation time
        # recovers the injected transverse scale.
        model = PhysicsModel(eta=0.9)
        grid = np.arange(-3.0, 18.0 + 1e-9, 0.15)
        fit = fit_fringe(simulate_fringe(grid, model))
        a_exc, sigma = amplitude_at_excitation(fit, 0.0)
        assert a_exc == pytest.approx(0.9, abs=0.03)
        assert sigma < 0.05

    def test_monotone_in_eta(self):
        grid = np.arange(-2.0, 16.0 + 1e-9, 0.2)
        fidelities = []
        for eta in (0.5, 0.7, 0.9, 1.0):
            fit = fit_fringe(simulate_fringe(grid, PhysicsModel(eta=eta)))
            fidelities.append(fidelity_from_amplitude(fit, t_exc_ns=0.0)[0])
        assert all(b > a for a, b in zip(fidelities, fidelities[1:]))
