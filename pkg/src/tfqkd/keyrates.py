"""Secret-key-rate formulas for the CAL, SNS and TWCC-SNS protocols.

All functions are pure.  Rates are per prepared pulse pair (bit/signal);
``bits_per_second`` multiplies by the clock.  Negative raw rates are
reported as zero with the raw value kept in ``intermediates['raw_rate']``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import skc0

CLOCK_HZ = 5.0e8
# asymptotic accounting renormalises the code-basis probability to this value
ASYMPTOTIC_CODE_PROB = 0.999


def binary_entropy(p):
    """h(p) in bits, with h(0) = h(1) = 0.  Accepts scalars or arrays."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError("binary_entropy needs 0 <= p <= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -arr * np.log2(arr) - (1 - arr) * np.log2(1 - arr)
    out = np.where((arr == 0) | (arr == 1), 0.0, out)
    return float(out) if out.ndim == 0 else out


def _h_capped(e: float) -> float:
    # a phase error above one half carries no extra information
    return binary_entropy(min(max(e, 0.0), 0.5))


@dataclass(frozen=True)
class FiniteSizeParams:
    """Failure probabilities of the finite-size analysis.

    The total security parameter composes as
    eps_ec + eps_pa + 2 eps_hat + n_pe * eps_pe, where ``n_pe`` counts the
    Chernoff estimates made during parameter estimation.
    """

    eps_ec: float = 1e-10
    eps_pa: float = 1e-10
    eps_hat: float = 1e-10
    eps_pe: float = 1e-10
    n_pe: int = 18

    def __post_init__(self):
        for name in ("eps_ec", "eps_pa", "eps_hat", "eps_pe"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.n_pe < 0:
            raise ValueError("n_pe must be non-negative")

    @property
    def security_parameter(self) -> float:
        return self.eps_ec + self.eps_pa + 2 * self.eps_hat + self.n_pe * self.eps_pe

    @property
    def delta(self) -> float:
        return finite_size_delta(self.eps_ec, self.eps_pa, self.eps_hat)


def finite_size_delta(eps_ec: float, eps_pa: float, eps_hat: float) -> float:
    """Key-length penalty log2(2/eps_ec) - 2 log2(sqrt(2) eps_pa eps_hat)."""
    return math.log2(2.0 / eps_ec) - 2.0 * math.log2(math.sqrt(2.0) * eps_pa * eps_hat)


@dataclass
class TwccStats:
    """Pair statistics of one two-way classical communication round.

    Class a holds kept odd-parity pairs (one bit from each sender group),
    class b (``n_even00``) and class c (``n_even11``) the kept even pairs.
    ``e_*`` are the error rates of the kept bit in each class.
    """

    n_odd: float
    n_even00: float
    n_even11: float
    e_a: float
    e_b: float
    e_c: float
    n_t: float
    n1_before: float = float("nan")
    e1ph_before: float = float("nan")

    @property
    def n_kept(self) -> float:
        return self.n_odd + self.n_even00 + self.n_even11

    @property
    def error_pairs(self) -> float:
        return self.n_odd * self.e_a + self.n_even00 * self.e_b + self.n_even11 * self.e_c

    @property
    def qber_after(self) -> float:
        return self.error_pairs / self.n_kept if self.n_kept else 0.0

    @property
    def n1_after(self) -> float:
        return untagged_after_twcc(self.n1_before, self.n_t)

    @property
    def e1ph_after(self) -> float:
        return phase_error_after_twcc(self.e1ph_before)

    def leak_ec(self, f_ec: float, literal: bool = False) -> float:
        """Error-correction leakage f_EC * sum_class n h(E).

        ``literal=True`` charges the even-00 class with h(e_a) instead of
        h(e_b), reproducing a variant of the formula seen in print.
        """
        eb = self.e_a if literal else self.e_b
        return f_ec * (
            self.n_odd * binary_entropy(self.e_a)
            + self.n_even00 * binary_entropy(eb)
            + self.n_even11 * binary_entropy(self.e_c)
        )


def untagged_after_twcc(n1: float, n_t: float) -> float:
    if n_t <= 0:
        raise ValueError("n_t must be positive")
    return n1 * n1 / (2.0 * n_t)


def phase_error_after_twcc(e: float) -> float:
    return 2.0 * e * (1.0 - e)


def expected_pair_stats(ss: float, sn: float, ns: float, nn: float, classify_by: str = "bob") -> TwccStats:
    """Expected TWCC pair statistics from the four ZZ detection counts.

    Events are split into two groups by one user's choice (``classify_by``):
    the group where that user sent a pulse and the group where they did not.
    Within the "sent" group the error fraction is ``ss`` over the group and
    within the other it is ``nn`` over the group.  Bits are paired uniformly
    at random; a pair is kept when both bits are right or both are wrong,
    and the kept bit is wrong only in the second case.  Class even-00 holds
    pairs drawn from the "sent" group of the classifying user, which for Bob
    are the pairs where both his bits are 0.
    """
    if classify_by not in ("alice", "bob"):
        raise ValueError("classify_by must be 'alice' or 'bob'")
    total = ss + sn + ns + nn
    if total <= 0:
        raise ValueError("no ZZ detections")
    n_pairs = float(total // 2)
    if classify_by == "bob":
        grp_a, grp_b = ss + ns, sn + nn
        a_err = ss / grp_a if grp_a else 0.0
        b_err = nn / grp_b if grp_b else 0.0
    else:
        grp_a, grp_b = ss + sn, ns + nn
        a_err = ss / grp_a if grp_a else 0.0
        b_err = nn / grp_b if grp_b else 0.0
    fa, fb = grp_a / total, grp_b / total
    a_ok, b_ok = 1 - a_err, 1 - b_err

    keep_odd = a_ok * b_ok + a_err * b_err
    keep_a = a_ok ** 2 + a_err ** 2
    keep_b = b_ok ** 2 + b_err ** 2
    return TwccStats(
        n_odd=n_pairs * 2 * fa * fb * keep_odd,
        n_even00=n_pairs * fa * fa * keep_a,
        n_even11=n_pairs * fb * fb * keep_b,
        e_a=a_err * b_err / keep_odd if keep_odd else 0.0,
        e_b=a_err ** 2 / keep_a if keep_a else 0.0,
        e_c=b_err ** 2 / keep_b if keep_b else 0.0,
        n_t=float(total),
    )


@dataclass
class KeyRateReport:
    protocol: str
    regime: str
    bits_per_signal: float
    clock_hz: float = CLOCK_HZ
    skc0_bits_per_signal: float = float("nan")
    intermediates: dict = field(default_factory=dict)
    fibre_length_km: float = float("nan")

    @property
    def bits_per_second(self) -> float:
        return self.bits_per_signal * self.clock_hz

    @property
    def skc0_ratio(self) -> float:
        if not self.skc0_bits_per_signal or math.isnan(self.skc0_bits_per_signal):
            return float("nan")
        return self.bits_per_signal / self.skc0_bits_per_signal

    def with_skc0(self, total_km: float, loss_db_per_km: float = 0.171) -> "KeyRateReport":
        from .channel import nominal_eta

        self.skc0_bits_per_signal = skc0(nominal_eta(total_km, loss_db_per_km))
        self.fibre_length_km = total_km
        return self

    def rate_row_labels(self) -> tuple[str, str]:
        if self.protocol == "SNS":
            stem = "SKR SNS (no TWCC) asympt norm"
        elif self.protocol == "CAL":
            stem = "SKR CAL asympt norm"
        elif self.regime == "finite":
            stem = "SKR"
        else:
            stem = "SKR TWCC asympt norm"
        return f"{stem} (bit/signal)", f"{stem} (bit/s)"

    def rows(self) -> list[tuple[str, object]]:
        """(row label, value) pairs, using the experiment tables' wording."""
        out: list[tuple[str, object]] = [("Fibre Length (km)", self.fibre_length_km)]
        im = self.intermediates
        named = [
            ("Z error rate (before)", "e_z"),
            ("Z error rate (after)", "qber_after"),
            ("Odd pairs in raw keys", "n_odd"),
            ("Even pairs 00 in raw keys", "n_even00"),
            ("Even pairs 11 in raw keys", "n_even11"),
            ("Error pairs in raw keys", "error_pairs"),
            ("Phase error rate", "e1ph"),
            ("n_1 (before TWCC)", "n1"),
            ("n_1 (after TWCC)", "n1_after"),
            ("e_1^ph (before TWCC)", "e1ph"),
            ("e_1^ph (after TWCC)", "e1ph_after"),
            ("Number of secure bits generated (bits)", "n_secure"),
        ]
        for label, key in named:
            if key in im:
                out.append((label, im[key]))
        sig, sec = self.rate_row_labels()
        out += [
            (sig, self.bits_per_signal),
            (sec, self.bits_per_second),
            ("Ratio SKR over SKC_0", self.skc0_ratio),
            ("SKC_0 (bit/signal)", self.skc0_bits_per_signal),
            ("SKC_0 (bit/s)", self.skc0_bits_per_signal * self.clock_hz),
        ]
        skip = {k for _, k in named}
        for k, v in im.items():
            if k not in skip:
                out.append((k, v))
        return out


_PERCENT_KEYS = {"Z error rate (before)", "Z error rate (after)", "Phase error rate",
                 "e_1^ph (before TWCC)", "e_1^ph (after TWCC)"}


def reports_to_csv(reports: list[KeyRateReport]) -> str:
    """One column per report, rows labelled as in the experiment tables."""
    cols = [dict(r.rows()) for r in reports]
    order: list[str] = []
    for r in reports:
        order += [k for k, _ in r.rows() if k not in order]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")

    def fmt(key, v):
        if v is None:
            return ""
        if isinstance(v, str):
            return v
        if isinstance(v, bool):
            return str(v)
        v = float(v)
        if math.isnan(v):
            return ""
        if key in _PERCENT_KEYS:
            return f"{100 * v:.6g}%"
        return f"{v:.6e}"

    for key in order:
        w.writerow([key] + [fmt(key, c.get(key)) for c in cols])
    return buf.getvalue()


def _finish(protocol, regime, raw, clock, im) -> KeyRateReport:
    im = dict(im)
    im["raw_rate"] = raw
    return KeyRateReport(protocol=protocol, regime=regime, bits_per_signal=max(raw, 0.0),
                         clock_hz=clock, intermediates=im)


def skr_cal(q_z_d0, e_z_d0, e1ph_d0, q_z_d1, e_z_d1, e1ph_d1, f_ec,
            clock_hz: float = CLOCK_HZ, norm: float = 1.0) -> KeyRateReport:
    """Sum of the per-detector rates Q[1 - f h(E) - h(e1ph)].

    Each detector's key is distilled separately, so a detector whose
    contribution is negative adds nothing.  ``norm`` multiplies the result
    (the asymptotic basis renormalisation).
    """
    parts = []
    for q, e, eph in ((q_z_d0, e_z_d0, e1ph_d0), (q_z_d1, e_z_d1, e1ph_d1)):
        parts.append(q * (1.0 - f_ec * binary_entropy(e) - _h_capped(eph)))
    raw = norm * sum(max(p, 0.0) for p in parts)
    if all(p <= 0 for p in parts):
        raw = norm * sum(parts)
    return _finish("CAL", "asymptotic", raw, clock_hz, {
        "q_z_d0": q_z_d0, "q_z_d1": q_z_d1, "e_z_d0": e_z_d0, "e_z_d1": e_z_d1,
        "e1ph_d0": e1ph_d0, "e1ph_d1": e1ph_d1, "rate_d0": norm * parts[0], "rate_d1": norm * parts[1],
    })


def sns_gains(y0: float, y1: float, flux_s: float, flux_n: float, eps: float) -> tuple[float, float]:
    """Zero- and single-photon ZZ gains of the sending-or-not-sending key.

    Only one-sided sending events (prob. 2 eps (1 - eps)) carry untagged
    bits.  For those the pair emits no photon with probability
    exp(-s) exp(-n) and exactly one photon with probability
    s e^-s e^-n + n e^-n e^-s.
    """
    w = 2.0 * eps * (1.0 - eps)
    q0 = w * math.exp(-flux_s - flux_n) * y0
    q1 = w * (flux_s * math.exp(-flux_s) * math.exp(-flux_n)
              + flux_n * math.exp(-flux_n) * math.exp(-flux_s)) * y1
    return q0, q1


def skr_sns(bounds, q_z: float, e_z: float, f_ec: float, params,
            regime: str = "asymptotic", clock_hz: float = CLOCK_HZ) -> KeyRateReport:
    """Q0 + Q1 [1 - h(e1ph)] - f Qz h(Ez) per ZZ pair, times the ZZ selection factor.

    In the asymptotic regime the code basis probability is renormalised to
    0.999 for both users; otherwise the pattern's own P_Z is used.
    """
    pz = ASYMPTOTIC_CODE_PROB if regime == "asymptotic" else params.p_z
    per_pair = (bounds.q0_lower + bounds.q1_lower * (1.0 - _h_capped(bounds.e1ph_upper))
                - f_ec * q_z * binary_entropy(e_z))
    raw = pz * pz * per_pair
    return _finish("SNS", regime, raw, clock_hz, {
        "q_z": q_z, "e_z": e_z, "q0": bounds.q0_lower, "q1": bounds.q1_lower,
        "y0": bounds.y0_lower, "y1": bounds.y1_lower, "e1ph": bounds.e1ph_upper,
        "leak_ec": f_ec * q_z * binary_entropy(e_z) * pz * pz,
    })


def twcc_norm(p_z: float) -> float:
    """Rescaling of counts taken at code probability ``p_z`` to the asymptotic 0.999."""
    return (ASYMPTOTIC_CODE_PROB / p_z) ** 2


def skr_twcc_asymptotic(stats: TwccStats, e1ph_before: float, n0: float, f_ec: float,
                        clock_hz: float = CLOCK_HZ, p_z: Optional[float] = None,
                        literal_leak: bool = False) -> KeyRateReport:
    """(1/N0) {n1~ [1 - h(2e(1-e))] - leak_EC}.

    ``p_z`` (the pattern's code probability) switches on the asymptotic
    renormalisation of counts to P_Z = 0.999.
    """
    if stats.n_t <= 0:
        raise ValueError("n_t must be positive")
    if n0 <= 0:
        raise ValueError("n0 must be positive")
    n1 = stats.n1_before
    n1t = untagged_after_twcc(n1, stats.n_t)
    et = phase_error_after_twcc(e1ph_before)
    leak = stats.leak_ec(f_ec, literal=literal_leak)
    norm = twcc_norm(p_z) if p_z else 1.0
    raw = (n1t * (1.0 - _h_capped(et)) - leak) / n0 * norm
    return _finish("SNS_TWCC", "asymptotic", raw, clock_hz, {
        "n1": n1, "n1_after": n1t, "n_t": stats.n_t, "e1ph": e1ph_before, "e1ph_after": et,
        "leak_ec": leak, "n_odd": stats.n_odd, "n_even00": stats.n_even00,
        "n_even11": stats.n_even11, "error_pairs": stats.error_pairs,
        "qber_after": stats.qber_after, "norm": norm,
    })


def skr_twcc_finite(stats: TwccStats, fs: FiniteSizeParams, bounds, n0: float, f_ec: float,
                    clock_hz: float = CLOCK_HZ, literal_leak: bool = False) -> KeyRateReport:
    """n_secure = n1~ [1 - h(e~)] - leak_EC - Delta, rate = n_secure / N0.

    ``bounds`` supplies the finite-size single-photon count ``n1_lower`` (and
    its phase error ``e1ph_upper``); when it is ``None`` the values stored
    in ``stats`` are used.
    """
    if stats.n_t <= 0:
        raise ValueError("n_t must be positive")
    if n0 <= 0:
        raise ValueError("n0 must be positive")
    if bounds is not None:
        n1 = bounds.n1_lower
        e = bounds.e1ph_upper
    else:
        n1, e = stats.n1_before, stats.e1ph_before
    n1t = untagged_after_twcc(n1, stats.n_t)
    et = phase_error_after_twcc(e)
    leak = stats.leak_ec(f_ec, literal=literal_leak)
    delta = fs.delta
    n_secure = n1t * (1.0 - _h_capped(et)) - leak - delta
    rep = _finish("SNS_TWCC", "finite", n_secure / n0, clock_hz, {
        "n1": n1, "n1_after": n1t, "n_t": stats.n_t, "e1ph": e, "e1ph_after": et,
        "leak_ec": leak, "delta_fs": delta, "n_secure_raw": n_secure, "n_secure": max(n_secure, 0.0),
        "security_parameter": fs.security_parameter, "n_odd": stats.n_odd,
        "n_even00": stats.n_even00, "n_even11": stats.n_even11,
        "error_pairs": stats.error_pairs, "qber_after": stats.qber_after,
    })
    return rep


def fit_f_ec(stats: TwccStats, e1ph_before: float, n0: float, target_rate: float,
             p_z: Optional[float] = None, delta: float = 0.0) -> float:
    """f_EC for which the TWCC formula reproduces ``target_rate`` exactly.

    Rate is linear in f_EC, so this is a closed-form solve.
    """
    norm = twcc_norm(p_z) if p_z else 1.0
    gain = untagged_after_twcc(stats.n1_before, stats.n_t) * (
        1.0 - _h_capped(phase_error_after_twcc(e1ph_before)))
    unit_leak = stats.leak_ec(1.0)
    return (gain - delta - target_rate * n0 / norm) / unit_leak
