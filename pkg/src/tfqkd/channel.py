"""Optical channel and detector model for a two-arm interference node.

Alice and Bob each send a weak coherent pulse down their own fibre to a
central 50/50 beam splitter watched by two single-photon detectors.  The
functions here are deterministic and vectorise over numpy arrays, so the
Monte Carlo layer can evaluate thousands of slots in one call.

>>> round(skc0(0.5), 12)
1.0
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

NOMINAL_LOSS_DB_PER_KM = 0.171


@dataclass(frozen=True)
class ChannelParams:
    """Physical description of both arms and the detection node.

    ``length_km`` is the length of *one* arm.  When ``arm_loss_db_a`` or
    ``arm_loss_db_b`` is given it replaces the nominal
    ``length_km * loss_db_per_km + arm_extra_db`` figure for that arm, which
    is how measured spool losses (or a calibrated received rate) enter.
    """

    length_km: float = 0.0
    loss_db_per_km: float = NOMINAL_LOSS_DB_PER_KM
    arm_extra_db: float = 0.0
    charlie_transmission_a: float = 0.6286
    charlie_transmission_b: float = 0.5077
    det_eff_0: float = 0.73
    det_eff_1: float = 0.77
    dark_rate_hz: float = 14.0
    gate_s: float = 0.5e-9
    clock_hz: float = 5.0e8
    arm_loss_db_a: Optional[float] = None
    arm_loss_db_b: Optional[float] = None

    def __post_init__(self):
        for name in ("charlie_transmission_a", "charlie_transmission_b", "det_eff_0", "det_eff_1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.loss_db_per_km < 0:
            raise ValueError("loss_db_per_km must be non-negative")
        if self.length_km < 0:
            raise ValueError("length_km must be non-negative")
        if self.dark_rate_hz < 0 or self.gate_s < 0:
            raise ValueError("dark_rate_hz and gate_s must be non-negative")
        if self.p_dark >= 1.0:
            raise ValueError("dark probability per gate must be < 1")
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be positive")

    @property
    def p_dark(self) -> float:
        """Dark-click probability of one detector in one gate."""
        return self.dark_rate_hz * self.gate_s

    @property
    def det_eff(self) -> tuple[float, float]:
        return (self.det_eff_0, self.det_eff_1)

    def with_arm_losses(self, loss_a_db: float, loss_b_db: float) -> "ChannelParams":
        return replace(self, arm_loss_db_a=loss_a_db, arm_loss_db_b=loss_b_db)


def fibre_loss_db(channel: ChannelParams, arm: str) -> float:
    """Loss in dB of one arm before Charlie's receiver."""
    override = channel.arm_loss_db_a if arm == "A" else channel.arm_loss_db_b
    if override is not None:
        return float(override)
    return channel.length_km * channel.loss_db_per_km + channel.arm_extra_db


def transmittance(channel: ChannelParams, arm: str) -> float:
    """Probability that a photon from ``arm`` ('A' or 'B') reaches a detector input.

    Detector efficiency is not included; it is applied per detector at the
    click stage.
    """
    if arm not in ("A", "B"):
        raise ValueError("arm must be 'A' or 'B'")
    t_rx = channel.charlie_transmission_a if arm == "A" else channel.charlie_transmission_b
    return 10.0 ** (-fibre_loss_db(channel, arm) / 10.0) * t_rx


def nominal_eta(total_km: float, loss_db_per_km: float = NOMINAL_LOSS_DB_PER_KM) -> float:
    """End-to-end fibre transmittance over ``total_km`` at a fixed attenuation."""
    return 10.0 ** (-loss_db_per_km * total_km / 10.0)


def skc0(eta_total: float) -> float:
    """Repeaterless secret key capacity -log2(1 - eta) in bit per channel use."""
    eta_total = float(eta_total)
    if not 0.0 <= eta_total < 1.0:
        raise ValueError("eta_total must satisfy 0 <= eta < 1")
    return -np.log1p(-eta_total) / np.log(2.0)


@dataclass(frozen=True)
class PulseAmplitudes:
    flux_a: float
    flux_b: float
    phase_a: float = 0.0
    phase_b: float = 0.0

    def __post_init__(self):
        if self.flux_a < 0 or self.flux_b < 0:
            raise ValueError("fluxes must be non-negative")


def output_photon_numbers(flux_a, flux_b, dphase, eta_a: float, eta_b: float):
    """Mean photon numbers at the two beam-splitter outputs.

    ``dphase`` is phase_a - phase_b.  Output 0 is the constructive port for
    equal phases.
    """
    a2 = eta_a * np.asarray(flux_a, dtype=float)
    b2 = eta_b * np.asarray(flux_b, dtype=float)
    cross = np.sqrt(a2 * b2) * np.cos(dphase)
    n0 = 0.5 * (a2 + b2) + cross
    n1 = 0.5 * (a2 + b2) - cross
    # rounding can leave a tiny negative value in a dark port
    return np.maximum(n0, 0.0), np.maximum(n1, 0.0)


def click_probabilities_array(flux_a, flux_b, dphase, channel: ChannelParams):
    """Vectorised form of :func:`click_probabilities`."""
    n0, n1 = output_photon_numbers(
        flux_a, flux_b, dphase, transmittance(channel, "A"), transmittance(channel, "B")
    )
    keep = 1.0 - channel.p_dark
    p0 = 1.0 - keep * np.exp(-n0 * channel.det_eff_0)
    p1 = 1.0 - keep * np.exp(-n1 * channel.det_eff_1)
    return p0, p1


def click_probabilities(p: PulseAmplitudes, channel: ChannelParams) -> tuple[float, float]:
    """Click probabilities of D0 and D1 for one pair of coherent pulses.

    The detectors fire independently given the pulse pair; a double click is
    therefore possible and is counted on both detectors.
    """
    p0, p1 = click_probabilities_array(p.flux_a, p.flux_b, p.phase_a - p.phase_b, channel)
    return float(p0), float(p1)


def phase_averaged_click_probabilities(flux_a, flux_b, channel: ChannelParams):
    """Per-detector click probabilities when the relative phase is uniform.

    Uses E[exp(x cos d)] = I0(x), evaluated with the scaled Bessel function to
    stay finite for large arguments.
    """
    from scipy.special import i0e

    a2 = transmittance(channel, "A") * np.asarray(flux_a, dtype=float)
    b2 = transmittance(channel, "B") * np.asarray(flux_b, dtype=float)
    keep = 1.0 - channel.p_dark
    out = []
    for eff in channel.det_eff:
        x = eff * np.sqrt(a2 * b2)
        out.append(1.0 - keep * np.exp(-eff * (a2 + b2) / 2.0 + x) * i0e(x))
    return out[0], out[1]
