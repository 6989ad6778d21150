import math

import numpy as np
import pytest

from qdsim.emitter import (ConfigError, EmitterConfig, OUParams, PlateauParams,
                           TelegraphParams, brightness_factor, charge_state,
                           cotunnel_rate, pulse_occupation, rabi_curve,
                           simulate_emission, stark_frequency)

import oracles


# ---------------------------------------------------------------------------
# voltage maps
# ---------------------------------------------------------------------------

def test_stark_is_linear_and_anchored(calibrated):
    assert stark_frequency(calibrated, calibrated.reference_voltage) == \
        calibrated.base_frequency
    assert stark_frequency(calibrated, -0.670) == pytest.approx(-72.7e9 * 0.1)


def test_stark_slope_recovered_from_voltage_map(calibrated):
    v = np.arange(-0.70, -0.399, 0.01)
    f = np.array([stark_frequency(calibrated, x) for x in v])
    slope = np.polyfit(v, f, 1)[0]
    assert slope == pytest.approx(72.7e9, rel=1e-12)


def test_cotunnel_rate_shape(calibrated):
    pl = calibrated.plateau
    center = cotunnel_rate(pl, pl.center_voltage)
    edge = cotunnel_rate(pl, pl.center_voltage + pl.half_width)
    far = cotunnel_rate(pl, pl.center_voltage + 10.0)
    assert center < 1e-3 * pl.cotunnel_rate_edge
    assert edge == pytest.approx(pl.cotunnel_rate_edge, rel=1e-9)
    assert far <= 2.0 * pl.cotunnel_rate_edge
    # symmetric and monotone in |V - center|
    dv = np.linspace(0, 0.5, 200)
    up = np.array([cotunnel_rate(pl, pl.center_voltage + d) for d in dv])
    dn = np.array([cotunnel_rate(pl, pl.center_voltage - d) for d in dv])
    assert np.allclose(up, dn)
    assert np.all(np.diff(up) >= -1e-6 * pl.cotunnel_rate_edge)


def test_brightness_anticorrelates_with_cotunneling(calibrated):
    b_center = brightness_factor(calibrated, -0.570)
    b_edge = brightness_factor(calibrated, -0.450)
    assert b_center > 0.99
    assert 0.4 < b_edge < 0.9


def test_pulse_occupation_law():
    assert pulse_occupation(math.pi, 0.85) == pytest.approx(0.85)
    assert pulse_occupation(0.0, 0.85) == 0.0
    assert pulse_occupation(2 * math.pi, 0.85) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        pulse_occupation(-0.1, 0.85)


def test_charge_state_windows():
    assert charge_state(-0.570) == "trion"
    assert charge_state(-0.30) == "exciton"
    assert charge_state(-5.0) == "none"
    assert charge_state(0.0) == "none"
    # species changes only at the configured thresholds
    windows = (("trion", -0.6, -0.5),)
    assert charge_state(-0.6, windows) == "trion"
    assert charge_state(-0.5, windows) == "none"


def test_config_validation():
    with pytest.raises(ConfigError):
        EmitterConfig(lifetime=0.0)
    with pytest.raises(ConfigError):
        EmitterConfig(prep_fidelity=1.2)
    with pytest.raises(ConfigError):
        OUParams(1e6, 0.0)
    with pytest.raises(ConfigError):
        PlateauParams(half_width=0.0)


def test_config_text_roundtrip(calibrated):
    cfg = EmitterConfig(blinking=TelegraphParams(1e6, 2e6))
    back = EmitterConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert EmitterConfig.from_text(calibrated.to_text()) == calibrated


def test_config_text_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        EmitterConfig.from_text("lifetime=6.5e-10\nnot a pair\n")
    with pytest.raises(ConfigError, match="line 3"):
        EmitterConfig.from_text("# comment\n\nbogus_key=1\n")
    with pytest.raises(ConfigError, match="line 2"):
        EmitterConfig.from_text("lifetime=6.5e-10\nrep_rate=fast\n")


# ---------------------------------------------------------------------------
# Monte Carlo emission
# ---------------------------------------------------------------------------

def pulse_delays(stream, config):
    period_ps = 1e12 / config.rep_rate
    k = np.floor(stream.timestamp / period_ps + 1e-9).astype(np.int64)
    return stream.timestamp - k * period_ps


def test_emission_requires_positive_duration(calibrated):
    with pytest.raises(ValueError, match="duration"):
        simulate_emission(calibrated, -0.570, math.pi, 0.0, seed=0)


def test_mean_emission_delay_is_lifetime(quiet_config):
    s = simulate_emission(quiet_config, -0.570, math.pi, 0.02, seed=1)
    assert len(s) > 1e6
    delays = pulse_delays(s, quiet_config)
    assert abs(delays.mean() * 1e-12 - quiet_config.lifetime) \
        < 0.01 * quiet_config.lifetime


def test_emission_count_matches_occupation(quiet_config):
    duration = 0.01
    s = simulate_emission(quiet_config, -0.570, math.pi, duration, seed=2)
    n_pulses = math.floor(duration * quiet_config.rep_rate)
    p = quiet_config.emission_probability(-0.570, math.pi)
    sigma = math.sqrt(n_pulses * p * (1 - p))
    assert abs(len(s) - n_pulses * p) < 4 * sigma


def test_no_noise_sources_means_constant_frequency(quiet_config):
    s = simulate_emission(quiet_config, -0.570, math.pi, 1e-4, seed=3)
    assert np.all(s.truth_frequency == s.truth_frequency[0])
    assert np.all(s.truth_dephasing_rate == s.truth_dephasing_rate[0])
    assert s.truth_dephasing_rate[0] == pytest.approx(
        cotunnel_rate(quiet_config.plateau, -0.570))


def test_ou_stationary_moments(calibrated):
    s = simulate_emission(calibrated, -0.570, math.pi, 0.02, seed=4)
    assert len(s) > 1e6
    x = s.truth_frequency - s.truth_frequency.mean()
    sigma2 = calibrated.diffusion.stationary_std ** 2
    assert abs(x.var() - sigma2) < 0.03 * sigma2


def test_ou_autocovariance_decay(calibrated):
    s = simulate_emission(calibrated, -0.570, math.pi, 0.02, seed=5)
    t = s.timestamp * 1e-12
    x = s.truth_frequency - s.truth_frequency.mean()
    tau_c = calibrated.diffusion.correlation_time
    for lag_s in (5e-9, 10e-9, 20e-9):
        # pair every photon with the first one at least lag away
        j = np.searchsorted(t, t + lag_s)
        ok = j < len(t)
        i = np.nonzero(ok)[0]
        j = j[ok]
        actual_lag = (t[j] - t[i]).mean()
        expected = oracles.ou_autocovariance(
            calibrated.diffusion.stationary_std, tau_c, actual_lag)
        measured = (x[i] * x[j]).mean()
        assert abs(measured - expected) < 0.05 * calibrated.diffusion.stationary_std**2


def test_photon_count_per_pulse_at_most_two(calibrated):
    s = simulate_emission(calibrated, -0.570, math.pi, 2e-3, seed=6)
    period_ps = 1e12 / calibrated.rep_rate
    k = np.floor(s.timestamp / period_ps).astype(np.int64)
    _, counts = np.unique(k, return_counts=True)
    assert counts.max() <= 2
    assert (counts == 2).sum() > 0  # re-excitation does fire


def test_double_pulse_structure(calibrated):
    delta = 2e-9
    s = simulate_emission(calibrated, -0.570, math.pi, 1e-3, seed=7,
                          pulse_pair_delay=delta)
    assert s.metadata["pulse_pair_delay"] == repr(delta)
    period_ps = 1e12 / calibrated.rep_rate
    within = np.mod(s.timestamp, period_ps)
    # photons cluster after 0 and after delta within each period
    frac_second = ((within > delta * 1e12) & (within < delta * 1e12 + 1500)).mean()
    frac_first = (within < 1500).mean()
    assert frac_first > 0.2 and frac_second > 0.2


def test_emission_determinism(calibrated):
    a = simulate_emission(calibrated, -0.5, 1.0, 1e-4, seed=8)
    b = simulate_emission(calibrated, -0.5, 1.0, 1e-4, seed=8)
    assert a == b
    c = simulate_emission(calibrated, -0.5, 1.0, 1e-4, seed=9)
    assert not (a == c)


def test_blinking_gates_emission():
    cfg = EmitterConfig(blinking=TelegraphParams(on_rate=1e5, off_rate=1e5))
    s = simulate_emission(cfg, -0.570, math.pi, 5e-3, seed=10)
    # duty cycle 1/2: roughly half the photons of the non-blinking emitter
    cfg0 = EmitterConfig()
    s0 = simulate_emission(cfg0, -0.570, math.pi, 5e-3, seed=10)
    ratio = len(s) / len(s0)
    assert 0.35 < ratio < 0.65


# ---------------------------------------------------------------------------
# Rabi curve
# ---------------------------------------------------------------------------

def test_rabi_curve_sin_squared(calibrated):
    areas = np.array([0.0, math.pi, 2 * math.pi, 3 * math.pi])
    proxy, counts = rabi_curve(calibrated, areas, pulses_per_point=200_000,
                               seed=11)
    assert np.allclose(proxy, areas / math.pi)
    assert counts[0] == 0.0
    assert counts[1] == pytest.approx(0.85, abs=0.01)
    assert counts[2] == pytest.approx(0.0, abs=0.01)
    assert counts[3] == pytest.approx(0.85, abs=0.01)


def test_rabi_argmax_at_pi(calibrated):
    # analytic argmax of fidelity * sin^2(a/2) over a fine grid is pi
    grid = np.linspace(0.8 * math.pi, 1.2 * math.pi, 41)
    analytic = grid[np.argmax(np.sin(grid / 2) ** 2)]
    assert abs(analytic - math.pi) <= (grid[1] - grid[0])
    _, counts = rabi_curve(calibrated, grid, pulses_per_point=400_000, seed=12)
    assert abs(grid[np.argmax(counts)] - math.pi) <= 2 * (grid[1] - grid[0])


def test_rabi_requires_areas(calibrated):
    with pytest.raises(ValueError):
        rabi_curve(calibrated, [], 100, seed=0)
