"""Ledger-to-key-rate pipelines for each protocol and regime.

These glue the decoy bounds and rate formulas together.  They never run
the simulator, so replaying a tabulated ledger is fast and deterministic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .decoy import (CutoffConfig, cal_phase_error, cal_yield_upper_bounds,
                    sns_decoy_bounds)
from .encoding import ProtocolParams
from .keyrates import (ASYMPTOTIC_CODE_PROB, CLOCK_HZ, FiniteSizeParams, KeyRateReport,
                       expected_pair_stats, skr_cal, skr_sns, skr_twcc_asymptotic,
                       skr_twcc_finite)
from .ledger import CountsLedger, params_from_ledger

N1_MISMATCH_LIMIT = 0.15


@dataclass
class ReplayOptions:
    regime: str = "asymptotic"
    f_ec: Optional[float] = None
    use_reported: bool = True
    classify_by: str = "bob"
    literal_leak: bool = False
    finite: FiniteSizeParams = FiniteSizeParams()
    cut: CutoffConfig = CutoffConfig()
    margin_sigma: float = 0.0
    cal_method: str = "lp"
    clock_hz: float = CLOCK_HZ
    loss_db_per_km: float = 0.171


def _total_km(ledger: CountsLedger) -> float:
    return ledger.fibre_length_km


def _attach_skc0(rep: KeyRateReport, ledger: CountsLedger, opts: ReplayOptions) -> KeyRateReport:
    km = _total_km(ledger)
    if km is not None and not math.isnan(km) and km > 0:
        rep.with_skc0(km, opts.loss_db_per_km)
    return rep


def sns_rate(ledger: CountsLedger, params: ProtocolParams, opts: ReplayOptions) -> KeyRateReport:
    finite = opts.finite if opts.regime == "finite" else None
    bounds = sns_decoy_bounds(ledger, params, finite)
    n_zz = ledger.zz_total
    q_z = n_zz / (ledger.n0_total * params.p_z ** 2) if ledger.n0_total else 0.0
    f = opts.f_ec if opts.f_ec is not None else params.f_ec
    rep = skr_sns(bounds, q_z, ledger.z_error_rate(), f, params, regime=opts.regime, clock_hz=opts.clock_hz)
    rep.intermediates["flags"] = "; ".join(bounds.flags)
    return _attach_skc0(rep, ledger, opts)


def twcc_rate(ledger: CountsLedger, params: ProtocolParams, opts: ReplayOptions) -> KeyRateReport:
    """TWCC-SNS rate from the ZZ counts plus single-photon estimates.

    With ``use_reported`` the tabulated "n_1 (before TWCC)" and
    "e_1^ph (before TWCC)" rows are used when present; the decoy-derived
    values are always computed and a relative n1 mismatch above 15% is
    flagged in the intermediates.
    """
    finite = opts.finite if opts.regime == "finite" else None
    bounds = sns_decoy_bounds(ledger, params, finite)
    stats = expected_pair_stats(ledger.count("ZZss"), ledger.count("ZZsn"),
                                ledger.count("ZZns"), ledger.count("ZZnn"), opts.classify_by)
    n1, e1 = bounds.n1_lower, bounds.e1ph_upper
    source = "decoy"
    rep_n1 = ledger.reported.get("n_1 (before TWCC)")
    rep_e1 = ledger.reported.get("e_1^ph (before TWCC)")
    if opts.use_reported and rep_n1 is not None and rep_e1 is not None:
        n1, e1 = float(rep_n1), float(rep_e1)
        source = "reported"
    stats.n1_before, stats.e1ph_before = n1, e1
    f = opts.f_ec if opts.f_ec is not None else params.f_ec
    if opts.regime == "finite":
        used = replace(bounds, n1_lower=n1, e1ph_upper=e1)
        rep = skr_twcc_finite(stats, opts.finite, used, ledger.n0_total, f, opts.clock_hz,
                              literal_leak=opts.literal_leak)
    else:
        rep = skr_twcc_asymptotic(stats, e1, ledger.n0_total, f, opts.clock_hz, p_z=params.p_z,
                                  literal_leak=opts.literal_leak)
    im = rep.intermediates
    im["e_z"] = ledger.z_error_rate()
    im["n1_source"] = source
    im["n1_decoy"] = bounds.n1_lower
    im["e1ph_decoy"] = bounds.e1ph_upper
    if rep_n1:
        mismatch = abs(bounds.n1_lower - float(rep_n1)) / float(rep_n1)
        im["n1_decoy_mismatch"] = mismatch
        im["n1_mismatch_flag"] = mismatch > N1_MISMATCH_LIMIT
    im["flags"] = "; ".join(bounds.flags)
    return _attach_skc0(rep, ledger, opts)


@dataclass
class CalDetectorResult:
    q: float
    e: float
    e1ph: float
    ybar: object


def cal_detector_terms(ledger: CountsLedger, params: ProtocolParams, opts: ReplayOptions,
                       detector: int, method: Optional[str] = None) -> CalDetectorResult:
    """Code-basis gain and error plus the phase-error bound of one detector."""
    code = "XXss"
    prep = ledger.prepared(params, code)
    clicks = ledger.count_detector(code, detector)
    q = clicks / prep if prep else 0.0
    errs = ledger.errors.get(code, (0, 0))[detector]
    e = errs / clicks if clicks else 0.0
    ybar = cal_yield_upper_bounds(ledger, params, opts.cut, detector, opts.margin_sigma,
                                  method or opts.cal_method)
    e1 = cal_phase_error(ybar, params.flux_s, opts.cut, q) if q > 0 else 0.5
    return CalDetectorResult(q, e, e1, ybar)


def cal_rate(ledger: CountsLedger, params: ProtocolParams, opts: ReplayOptions) -> KeyRateReport:
    d0 = cal_detector_terms(ledger, params, opts, 0)
    d1 = cal_detector_terms(ledger, params, opts, 1)
    f = opts.f_ec if opts.f_ec is not None else params.f_ec
    rep = skr_cal(d0.q, d0.e, d0.e1ph, d1.q, d1.e, d1.e1ph, f, opts.clock_hz,
                  norm=ASYMPTOTIC_CODE_PROB ** 2)
    rep.intermediates["method"] = opts.cal_method
    rep.intermediates["margin_sigma"] = opts.margin_sigma
    return _attach_skc0(rep, ledger, opts)


def replay(ledger: CountsLedger, opts: Optional[ReplayOptions] = None,
           defaults: Optional[ProtocolParams] = None) -> KeyRateReport:
    """Key rate of one ledger column, dispatched on its Protocol/Regime rows."""
    opts = opts or ReplayOptions()
    params = params_from_ledger(ledger, defaults)
    regime = ledger.reported.get("Regime")
    if isinstance(regime, str):
        opts = replace(opts, regime=regime)
    if ledger.n0_total <= 0 or ledger.zz_total + ledger.count("XXss") == 0:
        rep = KeyRateReport(protocol=params.protocol, regime=opts.regime, bits_per_signal=0.0,
                            clock_hz=opts.clock_hz, intermediates={"raw_rate": 0.0})
        return _attach_skc0(rep, ledger, opts)
    if params.protocol == "CAL":
        return cal_rate(ledger, params, opts)
    if params.protocol == "SNS":
        return sns_rate(ledger, params, opts)
    return twcc_rate(ledger, params, opts)
