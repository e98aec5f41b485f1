"""Detection tallies keyed by joint slot label, and their CSV form.

Labels follow the ``B1B2t1t2`` convention: Alice's basis, Bob's basis,
Alice's intensity, Bob's intensity (``ZZsn``, ``XXuv`` ...).  A ledger can
hold either per-detector counts (from the simulator) or only the combined
D0+D1 count per label (as printed in experiment tables); accessors fall
back gracefully.

The CSV layout puts one quantity per row and one run per column, with the
first row ``Fibre Length (km),<km>,<km>...`` acting as the header.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .encoding import ProtocolParams

SNS_LABELS = [
    "ZZss", "ZZsn", "ZZns", "ZZnn",
    "ZXsu", "ZXsv", "ZXsw", "ZXnu", "ZXnv", "ZXnw",
    "XZus", "XZun", "XZvs", "XZvn", "XZws", "XZwn",
    "XXuu", "XXuv", "XXuw", "XXvu", "XXvv", "XXvw", "XXwu", "XXwv", "XXww",
]
CAL_LABELS = ProtocolParams(protocol="CAL").labels()

HEADER_ROW = "Fibre Length (km)"
N0_ROW = "N_0"
TOTAL_ROWS = ("Total Detected D_0", "Total Detected D_1")
DETECTORS = ("D_0", "D_1")
REFERENCE_ROWS = ("Reference clicks (D_0)", "Reference clicks (D_1)")

# rows whose values are printed as percentages
PERCENT_ROWS = {
    "Z error rate", "Z error rate (before)", "Z error rate (after)",
    "Xuu error rate", "Xvv error rate", "Xww error rate", "Phase error rate",
    "e_1^ph (before TWCC)", "e_1^ph (after TWCC - asympt)", "e_1^ph (after TWCC)",
    "P_Z (code basis)", "P_s", "P_X (test basis)", "P_u", "P_v", "P_w",
}
DEGREE_ROWS = {"Phase mismatch acceptance"}


def detected_row(label: str, detector: Optional[int] = None) -> str:
    if detector is None:
        return f"Detected {label}"
    return f"Detected {label} ({DETECTORS[detector]})"


def matched_row(label: str, detector: int, correct: bool = False) -> str:
    kind = "Correct" if correct else "Detected"
    return f"{kind} {label} matching ({DETECTORS[detector]})"


def error_row(label: str, detector: int) -> str:
    return f"Errors {label} ({DETECTORS[detector]})"


def _pair(v) -> tuple[int, int]:
    a, b = v
    return int(a), int(b)


@dataclass
class CountsLedger:
    """Detected-event tallies of one run.

    ``detected`` holds combined D0+D1 counts per label.
    ``detected_by_detector`` optionally splits them per detector.
    ``matched`` and ``matched_correct`` hold phase-matched X-basis subtallies
    per detector, and ``errors`` holds per-detector error counts for labels
    whose bit value is fixed by the slot phases (CAL key slots).
    ``reported`` carries any further table rows (rates, parameters) verbatim.
    """

    n0_total: int = 0
    detected: dict = field(default_factory=dict)
    detected_by_detector: dict = field(default_factory=dict)
    matched: dict = field(default_factory=dict)
    matched_correct: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    totals_d0: int = 0
    totals_d1: int = 0
    reference_clicks: tuple = (0, 0)
    fibre_length_km: float = float("nan")
    reported: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n0_total < 0:
            raise ValueError("n0_total must be non-negative")

    # -- access ----------------------------------------------------------
    def count(self, label: str) -> int:
        if label in self.detected:
            return int(self.detected[label])
        if label in self.detected_by_detector:
            return sum(_pair(self.detected_by_detector[label]))
        return 0

    def count_detector(self, label: str, detector: int) -> int:
        if label not in self.detected_by_detector:
            raise KeyError(f"no per-detector counts for {label}")
        return _pair(self.detected_by_detector[label])[detector]

    def has_detector_split(self) -> bool:
        return bool(self.detected_by_detector)

    def labels(self) -> list[str]:
        seen = list(self.detected) + [k for k in self.detected_by_detector if k not in self.detected]
        return seen

    def prepared(self, params: ProtocolParams, label: str) -> float:
        """Number of prepared pulse pairs of ``label``, N0 times its probability."""
        return self.n0_total * params.label_probability(label)

    def gain(self, params: ProtocolParams, label: str, detector: Optional[int] = None) -> float:
        """Detection probability per prepared pair of ``label``."""
        prep = self.prepared(params, label)
        if prep <= 0:
            return 0.0
        c = self.count(label) if detector is None else self.count_detector(label, detector)
        return c / prep

    @property
    def zz_errors(self) -> int:
        """SNS key errors: both users sent or neither sent."""
        return self.count("ZZss") + self.count("ZZnn")

    @property
    def zz_correct(self) -> int:
        return self.count("ZZsn") + self.count("ZZns")

    @property
    def zz_total(self) -> int:
        return self.zz_errors + self.zz_correct

    def z_error_rate(self) -> float:
        t = self.zz_total
        return self.zz_errors / t if t else 0.0

    def matched_error_rate(self, label: str) -> Optional[float]:
        """Error fraction of phase-matched events of ``label``, if tallied."""
        if label in self.matched and label in self.matched_correct:
            det = sum(_pair(self.matched[label]))
            ok = sum(_pair(self.matched_correct[label]))
            return (det - ok) / det if det else 0.0
        return None

    def x_error_rate(self, intensity: str) -> Optional[float]:
        """Matched X-basis error rate for equal intensities, e.g. ``"vv"``.

        Uses matched subtallies when present and otherwise the reported
        ``X<ii> error rate`` row.
        """
        rate = self.matched_error_rate("XX" + intensity)
        if rate is not None:
            return rate
        return self.reported.get(f"X{intensity} error rate")

    def check(self, params: Optional[ProtocolParams] = None) -> None:
        """Raise ``ValueError`` when an accounting invariant fails."""
        for lab, v in self.detected_by_detector.items():
            if lab in self.detected and sum(_pair(v)) != int(self.detected[lab]):
                raise ValueError(f"detector split of {lab} does not add up")
        if self.detected_by_detector:
            s0 = sum(_pair(v)[0] for v in self.detected_by_detector.values())
            s1 = sum(_pair(v)[1] for v in self.detected_by_detector.values())
            if (s0, s1) != (self.totals_d0, self.totals_d1):
                raise ValueError("detector totals differ from the sum over labels")
        if params is not None:
            for lab in self.labels():
                # a pair can click on both detectors
                if self.count(lab) > 2 * self.prepared(params, lab) + 1e-9:
                    raise ValueError(f"more detections than prepared pairs for {lab}")

    # -- combination -----------------------------------------------------
    def __add__(self, other: "CountsLedger") -> "CountsLedger":
        if not isinstance(other, CountsLedger):
            return NotImplemented

        def add_int(a, b):
            out = dict(a)
            for k, v in b.items():
                out[k] = int(out.get(k, 0)) + int(v)
            return out

        def add_pair(a, b):
            out = {k: _pair(v) for k, v in a.items()}
            for k, v in b.items():
                x = out.get(k, (0, 0))
                y = _pair(v)
                out[k] = (x[0] + y[0], x[1] + y[1])
            return out

        return CountsLedger(
            n0_total=self.n0_total + other.n0_total,
            detected=add_int(self.detected, other.detected),
            detected_by_detector=add_pair(self.detected_by_detector, other.detected_by_detector),
            matched=add_pair(self.matched, other.matched),
            matched_correct=add_pair(self.matched_correct, other.matched_correct),
            errors=add_pair(self.errors, other.errors),
            totals_d0=self.totals_d0 + other.totals_d0,
            totals_d1=self.totals_d1 + other.totals_d1,
            reference_clicks=tuple(a + b for a, b in zip(_pair(self.reference_clicks), _pair(other.reference_clicks))),
            fibre_length_km=self.fibre_length_km
            if not math.isnan(self.fibre_length_km)
            else other.fibre_length_km,
            reported={**other.reported, **self.reported},
            notes={**other.notes, **self.notes},
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountsLedger):
            return NotImplemented
        return to_csv_string([self]) == to_csv_string([other])

    def scaled(self, factor: int) -> "CountsLedger":
        """Every count and N0 multiplied by an integer factor."""
        k = int(factor)
        pair = lambda d: {lab: (v[0] * k, v[1] * k) for lab, v in ((a, _pair(b)) for a, b in d.items())}
        return CountsLedger(
            n0_total=self.n0_total * k,
            detected={lab: int(v) * k for lab, v in self.detected.items()},
            detected_by_detector=pair(self.detected_by_detector),
            matched=pair(self.matched),
            matched_correct=pair(self.matched_correct),
            errors=pair(self.errors),
            totals_d0=self.totals_d0 * k,
            totals_d1=self.totals_d1 * k,
            reference_clicks=tuple(x * k for x in _pair(self.reference_clicks)),
            fibre_length_km=self.fibre_length_km,
            reported=dict(self.reported),
            notes=dict(self.notes),
        )


def empty_ledger(n0: int = 0, labels: Iterable[str] = ()) -> CountsLedger:
    led = CountsLedger(n0_total=int(n0))
    for lab in labels:
        led.detected[lab] = 0
        led.detected_by_detector[lab] = (0, 0)
    return led


# -- CSV ---------------------------------------------------------------------
def _format_value(label: str, value) -> str:
    if isinstance(value, str):
        return value
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if label in PERCENT_ROWS:
        return f"{100.0 * value:.6g}%"
    if label in DEGREE_ROWS:
        return f"{value:.6g}°"
    if isinstance(value, (int, np.integer)) or (isinstance(value, float) and value.is_integer() and abs(value) < 1e15):
        return str(int(value))
    return f"{value:.6e}"


def parse_value(text: str):
    """Numeric value of a table cell; percentages become fractions."""
    t = text.strip()
    if not t:
        return None
    try:
        if t.endswith("%"):
            return float(t[:-1]) / 100.0
        if t.endswith("°"):
            return float(t[:-1])
        if t.lstrip("-").isdigit():
            return int(t)
        return float(t)
    except ValueError:
        return t


def _ledger_rows(led: CountsLedger) -> dict[str, object]:
    rows: dict[str, object] = {HEADER_ROW: led.fibre_length_km, N0_ROW: led.n0_total}
    for k, v in led.reported.items():
        rows[k] = v
    rows[TOTAL_ROWS[0]] = led.totals_d0
    rows[TOTAL_ROWS[1]] = led.totals_d1
    if any(led.reference_clicks):
        for d in (0, 1):
            rows[REFERENCE_ROWS[d]] = _pair(led.reference_clicks)[d]
    for lab in led.labels():
        rows[detected_row(lab)] = led.count(lab)
    for lab, v in led.detected_by_detector.items():
        for d in (0, 1):
            rows[detected_row(lab, d)] = _pair(v)[d]
    for lab in led.matched:
        for d in (0, 1):
            rows[matched_row(lab, d)] = _pair(led.matched[lab])[d]
    for lab in led.matched_correct:
        for d in (0, 1):
            rows[matched_row(lab, d, correct=True)] = _pair(led.matched_correct[lab])[d]
    for lab in led.errors:
        for d in (0, 1):
            rows[error_row(lab, d)] = _pair(led.errors[lab])[d]
    return rows


def to_csv_string(ledgers: list[CountsLedger]) -> str:
    cols = [_ledger_rows(led) for led in ledgers]
    order: list[str] = []
    for c in cols:
        order += [k for k in c if k not in order]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for key in order:
        w.writerow([key] + [_format_value(key, c.get(key)) for c in cols])
    return buf.getvalue()


def write_ledger_csv(ledgers, path) -> None:
    if isinstance(ledgers, CountsLedger):
        ledgers = [ledgers]
    with open(path, "w", newline="") as fh:
        fh.write(to_csv_string(list(ledgers)))


def _parse_label_row(key: str):
    """Classify a row label; returns (kind, label, detector) or None."""
    parts = key.split()
    if len(parts) >= 2 and parts[0] in ("Detected", "Correct", "Errors"):
        lab = parts[1]
        det = None
        if parts[-1].startswith("(") and parts[-1].rstrip(")").strip("(") in DETECTORS:
            det = DETECTORS.index(parts[-1].strip("()"))
        matching = "matching" in parts
        if parts[0] == "Detected" and not matching and len(parts) in (2, 3):
            return ("detected", lab, det)
        if matching and det is not None:
            return ("correct" if parts[0] == "Correct" else "matched", lab, det)
        if parts[0] == "Errors" and det is not None:
            return ("errors", lab, det)
    return None


def from_csv_string(text: str) -> list[CountsLedger]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(x.strip() for x in r)]
    if not rows or rows[0][0].strip() != HEADER_ROW:
        raise ValueError(f"first row must be '{HEADER_ROW}'")
    ncol = len(rows[0]) - 1
    if ncol < 1:
        raise ValueError("ledger CSV has no data columns")
    ledgers = [CountsLedger() for _ in range(ncol)]
    seen = set()
    for r in rows:
        key = r[0].strip()
        if key in seen:
            raise ValueError(f"duplicate row {key!r}")
        seen.add(key)
        cells = (r[1:] + [""] * ncol)[:ncol]
        for led, cell in zip(ledgers, cells):
            val = parse_value(cell)
            if val is None:
                continue
            if key == HEADER_ROW:
                led.fibre_length_km = float(val)
                continue
            if key == N0_ROW:
                if isinstance(val, str):
                    raise ValueError(f"malformed N_0 value {cell!r}")
                led.n0_total = int(round(float(val)))
                continue
            if key in REFERENCE_ROWS:
                cur = list(led.reference_clicks)
                cur[REFERENCE_ROWS.index(key)] = int(val)
                led.reference_clicks = tuple(cur)
                continue
            if key in TOTAL_ROWS:
                setattr(led, "totals_d0" if key == TOTAL_ROWS[0] else "totals_d1", int(val))
                continue
            parsed = _parse_label_row(key)
            if parsed is None:
                led.reported[key] = val
                continue
            kind, lab, det = parsed
            if isinstance(val, str) or float(val) < 0 or float(val) != int(float(val)):
                raise ValueError(f"row {key!r} needs a non-negative integer count, got {cell!r}")
            val = int(float(val))
            if kind == "detected" and det is None:
                led.detected[lab] = val
            else:
                target = {
                    "detected": led.detected_by_detector,
                    "matched": led.matched,
                    "correct": led.matched_correct,
                    "errors": led.errors,
                }[kind]
                cur = list(target.get(lab, (0, 0)))
                cur[det] = val
                target[lab] = tuple(cur)
    for led in ledgers:
        for lab, v in led.detected_by_detector.items():
            led.detected.setdefault(lab, sum(v))
    return ledgers


def read_ledger_csv(path) -> list[CountsLedger]:
    with open(path, newline="") as fh:
        return from_csv_string(fh.read())


def params_from_ledger(led: CountsLedger, defaults: Optional[ProtocolParams] = None) -> ProtocolParams:
    """Protocol parameters from the parameter rows carried in a ledger column.

    Missing rows fall back to ``defaults``.  The flux of "not sending"
    pulses is not tabulated; it is taken equal to ``w`` unless an
    ``n (ph/pulse)`` row is present.
    """
    from dataclasses import replace

    base = defaults or ProtocolParams()
    r = led.reported
    kw = {}
    protocol = r.get("Protocol")
    if isinstance(protocol, str):
        kw["protocol"] = protocol
    for key, name in (("s (ph/pulse)", "flux_s"), ("u (ph/pulse)", "flux_u"),
                      ("v (ph/pulse)", "flux_v"), ("w (ph/pulse)", "flux_w"),
                      ("n (ph/pulse)", "flux_n"), ("P_s", "p_s_given_z"),
                      ("P_u", "p_u"), ("P_v", "p_v"), ("P_w", "p_w"), ("f_EC", "f_ec")):
        if key in r:
            kw[name] = float(r[key])
    if "P_Z (code basis)" in r:
        kw["p_z"] = float(r["P_Z (code basis)"])
        kw["p_x"] = 1.0 - kw["p_z"]
    if "n (ph/pulse)" not in r and "w (ph/pulse)" in r:
        kw["flux_n"] = float(r["w (ph/pulse)"])
    if "Phase mismatch acceptance" in r:
        # the tabulated acceptance is the full window width in degrees
        kw["delta_accept_rad"] = math.radians(float(r["Phase mismatch acceptance"])) / 2.0
    # printed probabilities are rounded (33.3%); renormalise the decoy split
    pu, pv, pw = (kw.get(k, getattr(base, k)) for k in ("p_u", "p_v", "p_w"))
    tot = pu + pv + pw
    kw.update(p_u=pu / tot, p_v=pv / tot, p_w=pw / tot)
    return replace(base, **kw)


def params_rows(params: ProtocolParams, regime: Optional[str] = None) -> dict[str, object]:
    """Parameter rows that make a ledger column self-describing for replay."""
    rows: dict[str, object] = {"Protocol": params.protocol}
    if regime:
        rows["Regime"] = regime
    rows.update({
        "s (ph/pulse)": params.flux_s, "u (ph/pulse)": params.flux_u,
        "v (ph/pulse)": params.flux_v, "w (ph/pulse)": params.flux_w,
        "n (ph/pulse)": params.flux_n,
        "P_Z (code basis)": params.p_z, "P_s": params.p_s_given_z,
        "P_u": params.p_u, "P_v": params.p_v, "P_w": params.p_w,
        "f_EC": params.f_ec,
        "Phase mismatch acceptance": math.degrees(2 * params.delta_accept_rad),
    })
    return rows
