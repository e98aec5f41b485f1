import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tfqkd.channel import (ChannelParams, click_probabilities, click_probabilities_array,
                           nominal_eta, output_photon_numbers, phase_averaged_click_probabilities,
                           skc0, transmittance, PulseAmplitudes)

flux = st.floats(0.0, 2.0)
eta = st.floats(1e-6, 1.0)
phase = st.floats(-10.0, 10.0)


@given(flux, flux, phase, eta, eta)
def test_interference_conserves_energy(fa, fb, dphi, ea, eb):
    n0, n1 = output_photon_numbers(fa, fb, dphi, ea, eb)
    assert abs((n0 + n1) - (ea * fa + eb * fb)) <= 1e-12 * max(1.0, ea * fa + eb * fb)
    assert n0 >= -1e-15 and n1 >= -1e-15


def test_constructive_and_destructive_ports():
    n0, n1 = output_photon_numbers(0.5, 0.5, 0.0, 0.1, 0.1)
    assert math.isclose(n0, 0.1) and abs(n1) < 1e-15
    n0, n1 = output_photon_numbers(0.5, 0.5, math.pi, 0.1, 0.1)
    assert abs(n0) < 1e-15 and math.isclose(n1, 0.1)


def test_skc0_matches_capacity_formula():
    eta = nominal_eta(368.702)
    assert math.isclose(skc0(eta), -math.log2(1 - eta))
    assert math.isclose(skc0(eta), 7.151e-7, rel_tol=5e-3)
    assert skc0(0.0) == 0.0


def test_transmittance_uses_arm_overrides():
    ch = ChannelParams(length_km=100.0)
    assert math.isclose(transmittance(ch, "A"), 10 ** (-0.1 * 17.1) * ch.charlie_transmission_a)
    over = ch.with_arm_losses(10.0, 20.0)
    ratio = transmittance(over, "A") / transmittance(over, "B")
    assert math.isclose(ratio, 10.0 * ch.charlie_transmission_a / ch.charlie_transmission_b)


def test_vacuum_clicks_are_dark_only():
    ch = ChannelParams(length_km=50.0)
    p0, p1 = click_probabilities(PulseAmplitudes(0.0, 0.0), ch)
    assert math.isclose(p0, ch.p_dark, rel_tol=1e-6) and math.isclose(p1, ch.p_dark, rel_tol=1e-6)


@settings(max_examples=50)
@given(flux, flux)
def test_phase_average_matches_quadrature(fa, fb):
    ch = ChannelParams(length_km=20.0)
    phis = np.linspace(0, 2 * np.pi, 4001)[:-1]
    p = click_probabilities_array(fa, fb, phis, ch)
    avg = phase_averaged_click_probabilities(fa, fb, ch)
    assert np.allclose([p[0].mean(), p[1].mean()], avg, rtol=1e-6, atol=1e-15)


def test_invalid_channel_rejected():
    with pytest.raises(ValueError):
        ChannelParams(length_km=-1)
    with pytest.raises(ValueError):
        ChannelParams(det_eff_0=1.5)
