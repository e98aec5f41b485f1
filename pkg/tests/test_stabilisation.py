import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfqkd.stabilisation import (FREE_ACQUISITION_S, LOCKED_ACQUISITION_S, DriftModel, LoopConfig,
                                 PhaseTrace, qber_from_phase_noise, run_dual_band_lock,
                                 simulate_free_drift)

WINDOWS = dict(free_window_s=FREE_ACQUISITION_S, residual_window_s=LOCKED_ACQUISITION_S)


def test_free_drift_rate_std_matches_model():
    m = DriftModel.short_acquisition()
    rates = simulate_free_drift(m, 2.0, seed=1).drift_rates(FREE_ACQUISITION_S)
    assert np.std(rates) == pytest.approx(8000, rel=0.03)


@pytest.mark.parametrize("window", [1e-3, 1e-2, 1e-1])
def test_wiener_variance_is_linear_in_time(window):
    m = DriftModel(drift_rate_std=100.0, rate_window_s=1.0)
    trace = simulate_free_drift(m, 20.0, seed=2)
    inc = trace.drift_rates(window) * window
    # Var[phi(t+T) - phi(t)] = sigma^2 T with sigma = 100 rad/sqrt(s)
    rel = 4 * math.sqrt(2 / len(inc))
    assert np.var(inc) == pytest.approx(100.0 ** 2 * window, rel=rel)


def test_trace_csv_roundtrip(tmp_path):
    tr = simulate_free_drift(DriftModel(), 0.01, seed=0)
    tr.to_csv(tmp_path / "t.csv")
    back = PhaseTrace.from_csv(tmp_path / "t.csv")
    assert np.allclose(back.phase_rad, tr.phase_rad, rtol=1e-11, atol=1e-12)
    assert np.allclose(back.t_s, tr.t_s)


def test_drift_is_seed_deterministic():
    m = DriftModel()
    a = simulate_free_drift(m, 0.05, seed=4).phase_rad
    assert np.array_equal(a, simulate_free_drift(m, 0.05, seed=4).phase_rad)
    assert not np.array_equal(a, simulate_free_drift(m, 0.05, seed=5).phase_rad)


def test_leverage_factor():
    assert DriftModel().leverage == pytest.approx(1548.51 / 1.61)


def test_loops_off_leave_drift_unchanged():
    m = DriftModel.short_acquisition()
    off_f = LoopConfig.fast_default(enabled=False)
    off_s = LoopConfig.slow_default(enabled=False)
    rep = run_dual_band_lock(m, off_f, off_s, duration_s=1.0, seed=3, settle_s=0.0,
                             free_window_s=FREE_ACQUISITION_S, residual_window_s=FREE_ACQUISITION_S)
    assert rep.residual_drift_std == pytest.approx(rep.free_drift_std, rel=1e-9)
    assert rep.reduction_factor == pytest.approx(1.0)
    assert rep.status == "open" and not rep.locked


def test_ideal_fast_lock_leaves_differential_drift():
    # without counting noise the slow residual is the lambda_1 / lambda_2 differential term
    m = DriftModel.short_acquisition()
    rep = run_dual_band_lock(m, LoopConfig.fast_default(), LoopConfig.slow_default(enabled=False),
                             duration_s=2.0, seed=1, counting_noise=False,
                             free_window_s=LOCKED_ACQUISITION_S, residual_window_s=LOCKED_ACQUISITION_S)
    assert rep.residual_drift_std / rep.free_drift_std <= 2e-3


def test_dual_lock_reduces_drift():
    m = DriftModel.short_acquisition()
    rep = run_dual_band_lock(m, LoopConfig.fast_default(), LoopConfig.slow_default(),
                             duration_s=3.0, seed=2, **WINDOWS)
    assert rep.locked
    assert rep.reduction_factor >= 1000
    assert rep.locking_error_std <= 0.08


def test_dim_reference_alone_cannot_track():
    # the slow loop sees ~150 counts per window, far too slow for 8000 rad/s drift
    m = DriftModel.short_acquisition()
    rep = run_dual_band_lock(m, LoopConfig.fast_default(enabled=False), LoopConfig.slow_default(),
                             duration_s=2.0, seed=2, **WINDOWS)
    assert rep.locking_error_std > 0.5


def test_lower_photon_rate_degrades_fast_lock():
    m = DriftModel.short_acquisition()
    kw = dict(duration_s=1.0, seed=6, **WINDOWS)
    bright = run_dual_band_lock(m, LoopConfig.fast_default(), LoopConfig.slow_default(), 1e7, **kw)
    dim = run_dual_band_lock(m, LoopConfig.fast_default(), LoopConfig.slow_default(), 1e5, **kw)
    assert dim.fast_error_std > bright.fast_error_std


def test_lock_report_histogram(tmp_path):
    rep = run_dual_band_lock(DriftModel.short_acquisition(), LoopConfig.fast_default(),
                             LoopConfig.slow_default(), duration_s=1.0, seed=0, **WINDOWS)
    rep.write_histogram_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "bin_centre_rad,count"
    assert sum(int(r.split(",")[1]) for r in rows[1:]) == len(rep.offsets)


def test_qber_small_angle_oracle():
    rng = np.random.default_rng(0)
    sigma = 0.071
    q = qber_from_phase_noise(rng.normal(0, sigma, 200_000))
    assert q < 0.02
    assert q == pytest.approx(sigma ** 2 / 4, rel=0.05)


def test_qber_uniform_phase_is_half():
    rng = np.random.default_rng(1)
    assert qber_from_phase_noise(rng.uniform(-np.pi, np.pi, 200_000)) == pytest.approx(0.5, abs=0.005)


@settings(max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.integers(-3, 3))
def test_qber_invariant_under_full_turns(samples, k):
    a = qber_from_phase_noise(samples)
    b = qber_from_phase_noise(np.asarray(samples) + 2 * np.pi * k)
    assert a == pytest.approx(b, abs=1e-12)


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(rate_hz=1e3, integration_s=1e-2)
    with pytest.raises(ValueError):
        LoopConfig(rate_hz=1e3, integration_s=1e-4, ki=float("nan"))
    with pytest.raises(ValueError):
        LoopConfig(rate_hz=1e3, integration_s=1e-4, actuator_range_rad=1.0)
    with pytest.raises(ValueError):
        DriftModel(dt=0)
