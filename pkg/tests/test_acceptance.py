"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import sys
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
from scipy.stats import norm, poisson

sys.path.insert(0, str(Path(__file__).parent))
from conftest import data_path  # noqa: E402

from tfqkd.channel import ChannelParams, output_photon_numbers
from tfqkd.cli import main as cli_main, simulate
from tfqkd.config import ExperimentConfig, NoiseOptions, RunOptions
from tfqkd.decoy import CutoffConfig, GainConstraint, chernoff_interval, sns_decoy_bounds, yield_upper_bounds_lp
from tfqkd.detection import simulate_session
from tfqkd.encoding import ProtocolParams, build_pattern, expected_joint_counts, realized_joint_counts
from tfqkd.keyrates import FiniteSizeParams, binary_entropy, expected_pair_stats, skr_twcc_finite
from tfqkd.ledger import params_from_ledger, read_ledger_csv
from tfqkd.pipeline import ReplayOptions, replay
from tfqkd.simplex import InfeasibleError
from tfqkd.stabilisation import (FREE_ACQUISITION_S, LOCKED_ACQUISITION_S,
                                 auto_tune, qber_from_phase_noise, run_dual_band_lock,
                                 simulate_free_drift)
from tfqkd.twcc import RawKeyPair, extract_raw_keys, twcc_round

RESULTS: dict[int, tuple[bool, str]] = {}
TABLES = ("sns_asymptotic.csv", "twcc_asymptotic.csv", "twcc_finite.csv")


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (ok, detail)
    print(result_line(n))


def result_line(n: int) -> str:
    ok, detail = RESULTS[n]
    return f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


def rel_err(x: float, ref: float) -> float:
    return abs(x - ref) / abs(ref)


# -- 1: golden-table replay ------------------------------------------------------
def _rate_rows(report_csv: str) -> list[dict]:
    rows = list(csv.reader(io.StringIO(report_csv)))
    ncol = len(rows[0]) - 1
    return [{r[0]: r[i + 1] for r in rows} for i in range(ncol)]


def check_golden_replay(tmp_dir: Path) -> tuple[bool, str]:
    failures, worst = [], {}
    t0 = time.perf_counter()
    reports = {}
    for name in TABLES:
        out = tmp_dir / f"{name}.rates.csv"
        rc = cli_main(["keyrate", "--ledger", str(data_path(name)), "--out", str(out)])
        if rc != 0:
            return False, f"keyrate exited {rc} on {name}"
        reports[name] = _rate_rows(out.read_text())
    elapsed = time.perf_counter() - t0
    for name in TABLES:
        for led, got in zip(read_ledger_csv(data_path(name)), reports[name]):
            finite = led.reported.get("Regime") == "finite"
            tol = 0.15 if finite else 0.10
            keys = [k for k in led.reported if k.startswith("SKR")]
            checks = [(k, tol) for k in keys] + [("Ratio SKR over SKC_0", tol),
                                                 ("SKC_0 (bit/signal)", 0.005), ("SKC_0 (bit/s)", 0.005)]
            for key, t in checks:
                e = rel_err(float(got[key]), float(led.reported[key]))
                tag = key.split(" (")[0] if key.startswith("SKC") else key
                worst[tag] = max(worst.get(tag, 0.0), e)
                if e > t:
                    failures.append(f"{led.fibre_length_km:g} km {key} off {100 * e:.2f}% (tol {100 * t:g}%)")
    if elapsed >= 1.0:
        failures.append(f"runtime {elapsed:.2f} s")
    ok = not failures
    detail = (f"golden replay of 10 columns in {elapsed:.2f} s; worst SKR err "
              f"{100 * max(v for k, v in worst.items() if k.startswith('SKR')):.1f}%, "
              f"worst SKC0 err {100 * worst['SKC_0']:.2f}%")
    if failures:
        detail += "; " + "; ".join(failures)
    return ok, detail


def test_criterion_1_golden_table_replay(tmp_path):
    ok, detail = check_golden_replay(tmp_path)
    record(1, ok, detail)
    assert ok, detail


# -- 2: CAL pipeline ------------------------------------------------------------
CAL_TARGET_BPS = 852.7
CAL_N0 = 206_600_000_000
CAL_SCALE = 100


def check_cal_pipeline() -> tuple[bool, str]:
    t0 = time.perf_counter()
    led = read_ledger_csv(data_path("cal_asymptotic.csv"))[0]
    params = params_from_ledger(led)
    cfg = ExperimentConfig(run=RunOptions(n0=CAL_N0 // CAL_SCALE), protocol=params,
                           channel=ChannelParams(length_km=led.fibre_length_km / 2),
                           noise=NoiseOptions(source="lock"))
    sim, _, pattern, sigma = simulate(cfg)
    rates, notes = {}, []
    for method in ("lp", "analytic"):
        try:
            rates[method] = replay(sim, ReplayOptions(cal_method=method), pattern.params).bits_per_second
        except InfeasibleError as exc:
            notes.append(f"{method} infeasible ({exc})")
    elapsed = time.perf_counter() - t0
    lp, an = rates.get("lp"), rates.get("analytic")
    ok = lp is not None and an is not None
    ok = ok and rel_err(lp, CAL_TARGET_BPS) <= 0.10 and rel_err(an, CAL_TARGET_BPS) <= 0.10
    ok = ok and abs(lp - an) / max(lp, an) <= 0.05 and elapsed < 600
    fmt = lambda v: "n/a" if v is None else f"{v:.1f} bit/s"
    detail = (f"CAL at 368.7 km, n0/{CAL_SCALE}, sigma {sigma:.3f} rad: LP {fmt(lp)}, analytic {fmt(an)} "
              f"(target {CAL_TARGET_BPS} +-10%, agreement 5%), {elapsed:.0f} s")
    if notes:
        detail += "; " + "; ".join(notes)
    return ok, detail


def test_criterion_2_cal_pipeline():
    ok, detail = check_cal_pipeline()
    record(2, ok, detail)
    assert ok, detail


# -- 3: Monte Carlo fidelity ------------------------------------------------------
ALPHA_4SIGMA = 2 * norm.sf(4)


def poisson_two_sided_p(obs: int, mean: float) -> float:
    return min(1.0, 2 * min(poisson.cdf(obs, mean), poisson.sf(obs - 1, mean)))


def column_config(name: str, led, scale: int) -> ExperimentConfig:
    return ExperimentConfig(run=RunOptions(n0=led.n0_total // scale),
                            noise=NoiseOptions(source="ledger", ledger_path=str(data_path(name)),
                                               ledger_column_km=led.fibre_length_km))


def check_monte_carlo_fidelity() -> tuple[bool, str]:
    failures, n_entries, slowest = [], 0, 0.0
    for name in TABLES:
        for led in read_ledger_csv(data_path(name)):
            scale = 1000 if led.fibre_length_km < 400 else 100
            t0 = time.perf_counter()
            sim, _, _, _ = simulate(column_config(name, led, scale))
            slowest = max(slowest, time.perf_counter() - t0)
            entries = [(lab, sim.count(lab), led.count(lab)) for lab in led.labels()]
            entries += [("D0 total", sim.totals_d0, led.totals_d0), ("D1 total", sim.totals_d1, led.totals_d1)]
            for d in (0, 1):
                entries.append((f"XXuu matched D{d}", sim.matched["XXuu"][d], led.matched["XXuu"][d]))
                entries.append((f"XXuu correct D{d}", sim.matched_correct["XXuu"][d],
                                led.matched_correct["XXuu"][d]))
            for key, obs, ref in entries:
                n_entries += 1
                mean = ref / scale
                if poisson_two_sided_p(obs, mean) <= ALPHA_4SIGMA:
                    z = (obs - mean) / math.sqrt(max(mean, 1e-12))
                    failures.append(f"{name.split('.')[0]} {led.fibre_length_km:g} km {key} z={z:+.2f}")
    ok = not failures
    detail = f"{n_entries} ledger entries over 10 columns within 4 sigma Poisson; slowest column {slowest:.1f} s"
    if failures:
        detail = f"{len(failures)}/{n_entries} entries outside 4 sigma: " + "; ".join(failures)
    return ok, detail


def test_criterion_3_monte_carlo_fidelity():
    ok, detail = check_monte_carlo_fidelity()
    record(3, ok, detail)
    assert ok, detail


# -- 4: TWCC statistics ------------------------------------------------------------
TWCC_KM = 521.982
TWCC_SCALE = 100
PAIR_ROWS = (("odd", "Odd pairs in raw keys", "n_odd"),
             ("even-00", "Even pairs 00 in raw keys", "n_even00"),
             ("even-11", "Even pairs 11 in raw keys", "n_even11"),
             ("error", "Error pairs in raw keys", "error_pairs"))


def check_twcc_statistics() -> tuple[bool, str]:
    name = "twcc_asymptotic.csv"
    led = next(l for l in read_ledger_csv(data_path(name)) if abs(l.fibre_length_km - TWCC_KM) < 1e-3)
    cfg = column_config(name, led, TWCC_SCALE)
    cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, with_events=True))
    _, stream, pattern, _ = simulate(cfg)
    keys = extract_raw_keys(stream, pattern)
    out = twcc_round(keys, cfg.seed_for("twcc"), cfg.twcc.classify_by)
    n_pairs = len(keys) // 2
    table_pairs = led.zz_total / 2
    zs, parts = {}, []
    for tag, row, attr in PAIR_ROWS:
        p = led.reported[row] / table_pairs
        obs = getattr(out.stats, attr)
        zs[tag] = (obs - n_pairs * p) / math.sqrt(n_pairs * p * (1 - p))
        parts.append(f"{tag} {obs:.0f} vs {led.reported[row] / TWCC_SCALE:.1f} (z {zs[tag]:+.2f})")
    e = keys.qber
    oracle = e * e / (e * e + (1 - e) ** 2)
    m = len(out.refined_bob)
    z_q = (out.qber_after - oracle) / math.sqrt(oracle * (1 - oracle) / m)
    ok = all(abs(z) <= 3 for z in zs.values()) and abs(z_q) <= 3
    detail = (f"{TWCC_KM:g} km at n0/{TWCC_SCALE}: " + ", ".join(parts) +
              f"; QBER {100 * e:.2f}% -> {100 * out.qber_after:.2f}% vs oracle {100 * oracle:.2f}% (z {z_q:+.2f})")
    return ok, detail


def test_criterion_4_twcc_statistics():
    ok, detail = check_twcc_statistics()
    record(4, ok, detail)
    assert ok, detail


# -- 5: phase stabilisation ----------------------------------------------------------
def check_phase_stabilisation() -> tuple[bool, str]:
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    model, seed = cfg.drift, cfg.seed_for("stabilisation")
    free = simulate_free_drift(model, 10.0, seed).drift_rates(FREE_ACQUISITION_S)
    free_std = float(np.std(free))
    windows = dict(duration_s=10.0, seed=seed, free_window_s=FREE_ACQUISITION_S,
                   residual_window_s=LOCKED_ACQUISITION_S)
    default = run_dual_band_lock(model, cfg.fast_loop, cfg.slow_loop, **windows)
    fast, slow = auto_tune(model, cfg.fast_loop, cfg.slow_loop, seed=seed)
    if (fast, slow) == (cfg.fast_loop, cfg.slow_loop):
        rep = default
    else:
        rep = run_dual_band_lock(model, fast, slow, **windows)
    sigma = 0.071
    q = qber_from_phase_noise(np.random.default_rng(seed).normal(0.0, sigma, 1_000_000))
    small_angle = sigma ** 2 / 4
    elapsed = time.perf_counter() - t0
    checks = {
        "free std": rel_err(free_std, 8000) <= 0.10,
        "reduction >= 1000": rep.reduction_factor >= 1000,
        "reduction within 4x of 16000": 16000 / 4 <= rep.reduction_factor <= 16000 * 4,
        "locking error": default.locking_error_std <= 0.08,
        "qber bound": q < 0.02,
        "qber small-angle": rel_err(q, small_angle) <= 0.05,
        "runtime": elapsed < 300,
    }
    ok = all(checks.values())
    detail = (f"free drift std {free_std:.0f} rad/s, reduction {rep.reduction_factor:.0f}x "
              f"after auto-tune (fast ki {fast.ki:g}, slow ki {slow.ki:g}), "
              f"locking error {default.locking_error_std:.3f} rad at default loops, "
              f"QBER at 0.071 rad {100 * q:.3f}% (small-angle {100 * small_angle:.3f}%), {elapsed:.0f} s")
    bad = [k for k, v in checks.items() if not v]
    if bad:
        detail += "; failed: " + ", ".join(bad)
    return ok, detail


def test_criterion_5_phase_stabilisation():
    ok, detail = check_phase_stabilisation()
    record(5, ok, detail)
    assert ok, detail


# -- 6: property suites ----------------------------------------------------------------
def _energy_conservation(rng) -> bool:
    fa, fb = rng.uniform(0, 2, 10_000), rng.uniform(0, 2, 10_000)
    d = rng.uniform(-10, 10, 10_000)
    ea, eb = rng.uniform(1e-6, 1, 10_000), rng.uniform(1e-6, 1, 10_000)
    n0, n1 = output_photon_numbers(fa, fb, d, ea, eb)
    return bool(np.max(np.abs(n0 + n1 - (ea * fa + eb * fb))) <= 1e-12)


def _entropy_endpoints(rng) -> bool:
    return binary_entropy(0.0) == 0.0 and binary_entropy(1.0) == 0.0 and abs(binary_entropy(0.5) - 1) < 1e-15


def _chernoff(rng) -> bool:
    for _ in range(200):
        x = float(rng.choice([0.0, rng.uniform(0, 10), rng.uniform(0, 1e7)]))
        eps = 10 ** rng.uniform(-12, -1)
        lo, hi = chernoff_interval(x, eps)
        lo2, hi2 = chernoff_interval(x, min(10 * eps, 0.5))
        if not (0 <= lo <= x <= hi and lo2 >= lo - 1e-9 * x and hi2 <= hi + 1e-9 * max(x, 1)):
            return False
    return True


def _lp_planted(rng) -> bool:
    cut = CutoffConfig(y_cut=3, n_cut=6)
    k = cut.n_cut + 1
    fluxes = (0.0002, 0.015, 0.1)
    for _ in range(50):
        y = rng.uniform(0, 1, (k, k))
        tail_y = rng.uniform()
        cons = []
        for a in fluxes:
            for b in fluxes:
                row = np.outer(poisson.pmf(np.arange(k), a), poisson.pmf(np.arange(k), b))
                cons.append(GainConstraint(a, b, float((row * y).sum() + (1 - row.sum()) * tail_y)))
        ybar = yield_upper_bounds_lp(cons, cut)
        if any(ybar[m, n] < y[m, n] - 1e-7 for m, n in cut.bounded_indices()):
            return False
    return True


def _twcc_strings(rng) -> bool:
    b = rng.integers(0, 2, 5001).astype(np.uint8)
    same = twcc_round(RawKeyPair(b, b.copy(), None), 1)
    comp = twcc_round(RawKeyPair(b, 1 - b, None), 1)
    return same.qber_after == 0.0 and comp.qber_after == 1.0


def _fair_sampling(rng) -> bool:
    for _ in range(20):
        pz = rng.uniform(0.05, 0.95)
        w = rng.uniform(0.05, 1, 3)
        w /= w.sum()
        p = ProtocolParams(protocol=str(rng.choice(["SNS", "CAL"])), p_z=pz, p_x=1 - pz,
                           p_s_given_z=rng.uniform(0.01, 0.99), p_u=w[0], p_v=w[1], p_w=w[2])
        length = 2 * int(rng.integers(1, 2000))
        real = realized_joint_counts(build_pattern(p, length, seed=int(rng.integers(1 << 30))))
        if any(abs(real[lab] - e) > 1 for lab, e in expected_joint_counts(p, length).items()):
            return False
    return True


def _finite_convergence(rng) -> bool:
    fs = FiniteSizeParams()
    for led in read_ledger_csv(data_path("twcc_finite.csv")):
        big = led.scaled(10**6)
        p = params_from_ledger(big)
        st = expected_pair_stats(big.count("ZZss"), big.count("ZZsn"), big.count("ZZns"), big.count("ZZnn"))
        fin = skr_twcc_finite(st, fs, sns_decoy_bounds(big, p, fs), big.n0_total, p.f_ec).bits_per_signal
        asym = skr_twcc_finite(st, fs, sns_decoy_bounds(big, p), big.n0_total, p.f_ec).bits_per_signal
        if rel_err(fin, asym) > 0.02:
            return False
    return True


def _shards_and_determinism(rng) -> bool:
    pat = build_pattern(ProtocolParams(), 2000, seed=1)
    ch = ChannelParams(length_km=50.0)
    one, s1 = simulate_session(pat, ch, 0.1, 10**7, seed=5, with_events=True)
    again, s1b = simulate_session(pat, ch, 0.1, 10**7, seed=5, with_events=True)
    four, s4 = simulate_session(pat, ch, 0.1, 10**7, seed=5, with_events=True, n_shards=4)
    return (one == four == again and s1.to_bytes() == s4.to_bytes() == s1b.to_bytes())


PROPERTIES = {
    "energy conservation": _energy_conservation,
    "entropy endpoints": _entropy_endpoints,
    "Chernoff containment/monotonicity": _chernoff,
    "LP planted yields (50)": _lp_planted,
    "TWCC identical/complement": _twcc_strings,
    "fair sampling": _fair_sampling,
    "finite->asymptotic 2%": _finite_convergence,
    "shard merge and seed determinism": _shards_and_determinism,
}


def check_properties() -> tuple[bool, str]:
    rng = np.random.default_rng(20240601)
    status = {name: bool(fn(rng)) for name, fn in PROPERTIES.items()}
    ok = all(status.values())
    detail = f"{sum(status.values())}/{len(status)} property suites hold"
    bad = [k for k, v in status.items() if not v]
    if bad:
        detail += "; failed: " + ", ".join(bad)
    return ok, detail


def test_criterion_6_property_suites():
    ok, detail = check_properties()
    record(6, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp, redirect_stdout(io.StringIO()):
        runs = [lambda: check_golden_replay(Path(tmp)), check_cal_pipeline, check_monte_carlo_fidelity,
                check_twcc_statistics, check_phase_stabilisation, check_properties]
        for n, fn in enumerate(runs, 1):
            RESULTS[n] = fn()
    for n in sorted(RESULTS):
        print(result_line(n))
    sys.exit(0 if all(ok for ok, _ in RESULTS.values()) else 1)
