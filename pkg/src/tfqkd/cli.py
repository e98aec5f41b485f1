"""Command-line runner: keyrate, simulate, stabilise, twcc, print-config.

Exit codes: 0 success, 2 invalid input or configuration, 3 infeasible
analysis (for example an infeasible yield LP).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import calibrate_channel, select_pattern_seed, tune_phase_noise
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .detection import EventStream, simulate_session
from .encoding import build_pattern, load_pattern, save_pattern
from .keyrates import reports_to_csv
from .ledger import params_from_ledger, params_rows, read_ledger_csv, write_ledger_csv
from .pipeline import ReplayOptions, replay
from .simplex import InfeasibleError, LPError
from .stabilisation import auto_tune, run_dual_band_lock, simulate_free_drift
from .twcc import bias, extract_raw_keys, twcc_round, write_binary_map, xor_map

log = logging.getLogger("tfqkd")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    run = cfg.run
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if getattr(args, "n0", None) is not None:
        if args.n0 < 0:
            raise ConfigError("--n0 must be non-negative")
        run = dataclasses.replace(run, n0=args.n0)
    if getattr(args, "out_dir", None):
        run = dataclasses.replace(run, output_dir=args.out_dir)
    return dataclasses.replace(cfg, run=run)


def _replay_options(cfg: ExperimentConfig, args) -> ReplayOptions:
    k = cfg.keyrate
    opts = ReplayOptions(regime=cfg.run.regime, f_ec=k.f_ec, use_reported=k.use_reported,
                         classify_by=k.classify_by, literal_leak=k.literal_leak, finite=cfg.finite,
                         cut=cfg.cutoff, margin_sigma=k.margin_sigma, cal_method=k.cal_method,
                         clock_hz=cfg.channel.clock_hz, loss_db_per_km=cfg.channel.loss_db_per_km)
    if getattr(args, "f_ec", None) is not None:
        opts = dataclasses.replace(opts, f_ec=args.f_ec)
    if getattr(args, "literal_leak", False):
        opts = dataclasses.replace(opts, literal_leak=True)
    if getattr(args, "no_reported", False):
        opts = dataclasses.replace(opts, use_reported=False)
    if getattr(args, "classify_by", None):
        opts = dataclasses.replace(opts, classify_by=args.classify_by)
    if getattr(args, "cal_method", None):
        opts = dataclasses.replace(opts, cal_method=args.cal_method)
    if getattr(args, "margin_sigma", None) is not None:
        opts = dataclasses.replace(opts, margin_sigma=args.margin_sigma)
    return opts


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- simulation ------------------------------------------------------------------
def _phase_noise(cfg: ExperimentConfig, params, channel):
    """Residual phase-noise std and possibly calibrated channel/params."""
    src = cfg.noise.source
    if src == "fixed":
        return cfg.noise.sigma_rad, channel, params, None
    if src == "lock":
        st = cfg.stabilisation
        fast, slow = cfg.fast_loop, cfg.slow_loop
        seed = cfg.seed_for("stabilisation")
        if st.auto_tune:
            fast, slow = auto_tune(cfg.drift, fast, slow, st.photon_rate_at_d2, st.photon_rate_at_d1,
                                   seed=seed)
        rep = run_dual_band_lock(cfg.drift, fast, slow, st.photon_rate_at_d2, st.duration_s, seed,
                                 st.photon_rate_at_d1, st.settle_s, st.free_window_s,
                                 st.residual_window_s)
        return rep.locking_error_std, channel, params, None
    ledgers = read_ledger_csv(cfg.noise.ledger_path)
    led = next((l for l in ledgers if abs(l.fibre_length_km - cfg.noise.ledger_column_km) < 1e-3), None)
    if led is None:
        raise ConfigError(f"[noise] ledger_column_km: no column at {cfg.noise.ledger_column_km} km")
    params = params_from_ledger(led, params)
    channel = dataclasses.replace(channel, length_km=led.fibre_length_km / 2)
    cal = calibrate_channel(led, params, channel)
    target = led.x_error_rate(cfg.noise.target_intensity * 2)
    if target is None:
        raise ConfigError("[noise] ledger has no matched error rate for the target intensity")
    sigma = tune_phase_noise(target, cal.params, cal.channel, cfg.noise.target_intensity)
    return sigma, cal.channel, cal.params, led


def simulate(cfg: ExperimentConfig):
    """Pattern, noise, detection; returns (ledger, stream, pattern, sigma)."""
    params, channel = cfg.protocol, cfg.channel
    sigma, channel, params, led = _phase_noise(cfg, params, channel)
    if led is not None:
        pseed = select_pattern_seed(led, params, length=cfg.run.pattern_length)
    else:
        pseed = cfg.seed_for("pattern")
    pattern = build_pattern(params, cfg.run.pattern_length, seed=pseed)
    with_events = cfg.run.with_events or cfg.run.method == "event"
    ledger, stream = simulate_session(pattern, channel, sigma, cfg.run.n0, cfg.seed_for("detection"),
                                      method=cfg.run.method, with_events=with_events,
                                      n_shards=cfg.run.shards)
    ledger.fibre_length_km = 2 * channel.length_km
    ledger.reported.update(params_rows(params, cfg.run.regime))
    ledger.reported["Phase noise std (rad)"] = sigma
    return ledger, stream, pattern, sigma


def cmd_simulate(args) -> int:
    cfg = _config(args)
    ledger, stream, pattern, sigma = simulate(cfg)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_ledger_csv(ledger, out / "ledger.csv")
    save_pattern(pattern, out / "pattern.bin")
    (out / "config.ini").write_text(dump_config(dataclasses.replace(cfg, protocol=pattern.params)))
    if stream is not None:
        stream.save(out / "events.bin")
    log.info("simulated %d pulse pairs, sigma %.4g rad, wrote %s", cfg.run.n0, sigma, out)
    return EXIT_OK


def cmd_keyrate(args) -> int:
    cfg = _config(args)
    opts = _replay_options(cfg, args)
    if args.ledger:
        ledgers = read_ledger_csv(args.ledger)
        if args.column:
            wanted = set(args.column)
            ledgers = [l for l in ledgers if any(abs(l.fibre_length_km - k) < 1e-3 for k in wanted)]
            if not ledgers:
                raise ConfigError("no ledger column matches --column")
        defaults = cfg.protocol
    else:
        ledger, _, pattern, _ = simulate(cfg)
        ledgers, defaults = [ledger], pattern.params
    reports = [replay(l, opts, defaults) for l in ledgers]
    _emit(reports_to_csv(reports), args.out)
    return EXIT_OK


# -- stabilisation ---------------------------------------------------------------
def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_stabilise(args) -> int:
    cfg = _config(args)
    st, out = cfg.stabilisation, cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed_for("stabilisation")
    trace = simulate_free_drift(cfg.drift, st.duration_s, seed)
    dec = max(1, st.trace_decimation)
    type(trace)(trace.t_s[::dec], trace.phase_rad[::dec]).to_csv(out / "free_drift_trace.csv")
    rates = trace.drift_rates(cfg.drift.rate_window_s)
    if rates.size and np.ptp(rates) > 0:
        counts, edges = np.histogram(rates, bins=60)
    else:
        counts, edges = np.array([rates.size]), np.array([-0.5, 0.5]) + (rates[0] if rates.size else 0.0)
    _write_rows(out / "free_drift_histogram.csv", ["bin_centre_rad_per_s", "count"],
                [[f"{0.5 * (a + b):.6e}", int(c)] for c, a, b in zip(counts, edges[:-1], edges[1:])])
    rows = [["free_drift_rate_std_rad_per_s", f"{float(np.std(rates)) if rates.size else 0.0:.6e}"]]
    if not args.free_only:
        fast, slow = cfg.fast_loop, cfg.slow_loop
        if st.auto_tune or args.auto_tune:
            fast, slow = auto_tune(cfg.drift, fast, slow, st.photon_rate_at_d2, st.photon_rate_at_d1,
                                   seed=seed)
        rep = run_dual_band_lock(cfg.drift, fast, slow, st.photon_rate_at_d2, st.duration_s, seed,
                                 st.photon_rate_at_d1, st.settle_s, st.free_window_s,
                                 st.residual_window_s)
        rep.write_histogram_csv(out / "locked_offset_histogram.csv")
        rows += [
            ["status", rep.status],
            ["lock_free_drift_std_rad_per_s", f"{rep.free_drift_std:.6e}"],
            ["residual_drift_std_rad_per_s", f"{rep.residual_drift_std:.6e}"],
            ["reduction_factor", f"{rep.reduction_factor:.6e}"],
            ["locking_error_std_rad", f"{rep.locking_error_std:.6e}"],
            ["fast_error_std_rad", f"{rep.fast_error_std:.6e}"],
            ["fast_kp", fast.kp], ["fast_ki", fast.ki], ["fast_kd", fast.kd],
            ["slow_kp", slow.kp], ["slow_ki", slow.ki], ["slow_kd", slow.kd],
        ]
    _write_rows(out / "lock_report.csv", ["quantity", "value"], rows)
    return EXIT_OK


# -- two-way classical communication ---------------------------------------------
def cmd_twcc(args) -> int:
    cfg = _config(args)
    stream = EventStream.load(args.events)
    pattern = load_pattern(args.pattern, cfg.protocol)
    keys = extract_raw_keys(stream, pattern)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    classify = args.classify_by or cfg.twcc.classify_by
    outcome = twcc_round(keys, cfg.seed_for("twcc"), classify)
    s = outcome.stats
    rows = [
        ["Raw key length", len(keys)],
        ["Z error rate (before)", f"{keys.qber:.6e}"],
        ["Odd pairs in raw keys", f"{s.n_odd:.6e}"],
        ["Even pairs 00 in raw keys", f"{s.n_even00:.6e}"],
        ["Even pairs 11 in raw keys", f"{s.n_even11:.6e}"],
        ["Error pairs in raw keys", f"{s.error_pairs:.6e}"],
        ["Z error rate (after)", f"{outcome.qber_after:.6e}"],
        ["Refined key length", len(outcome.refined_bob)],
        ["Alice bias (before)", f"{bias(keys.alice_bits):.6e}"],
        ["Bob bias (before)", f"{bias(keys.bob_bits):.6e}"],
        ["Alice bias (after)", f"{bias(outcome.refined_alice):.6e}"],
        ["Bob bias (after)", f"{bias(outcome.refined_bob):.6e}"],
    ]
    _write_rows(out / "twcc_stats.csv", ["quantity", "value"], rows)
    outcome.write_pair_log(out / "pair_log.csv")
    for name, bits in (("alice", outcome.refined_alice), ("bob", outcome.refined_bob)):
        (out / f"refined_{name}.txt").write_text("".join(map(str, bits.tolist())) + "\n")
    width, nb = cfg.twcc.map_width, cfg.twcc.map_bits
    for tag, a, b in (("before", keys.alice_bits, keys.bob_bits),
                      ("after", outcome.refined_alice, outcome.refined_bob)):
        a, b = a[:nb], b[:nb]
        write_binary_map(out / f"map_{tag}_alice.pbm", a, width)
        write_binary_map(out / f"map_{tag}_bob.pbm", b, width)
        write_binary_map(out / f"map_{tag}_xor.pbm", xor_map(a, b), width)
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = _config(args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tfqkd", description="Twin-field QKD simulator and key-rate analysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="INI experiment config")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        sp.add_argument("--n0", type=int, help="override [run] n0")
        sp.add_argument("--out-dir", help="override [run] output_dir")

    k = sub.add_parser("keyrate", help="key rate from a ledger CSV, or simulate then rate")
    common(k)
    k.add_argument("--ledger", help="ledger CSV in the experiment-table row format")
    k.add_argument("--column", type=float, action="append", help="fibre length of a column to keep")
    k.add_argument("--out", help="report CSV path (stdout if omitted)")
    k.add_argument("--f-ec", type=float)
    k.add_argument("--literal-leak", action="store_true")
    k.add_argument("--no-reported", action="store_true", help="ignore tabulated single-photon rows")
    k.add_argument("--classify-by", choices=("alice", "bob"))
    k.add_argument("--cal-method", choices=("lp", "analytic"))
    k.add_argument("--margin-sigma", type=float)
    k.set_defaults(func=cmd_keyrate)

    s = sub.add_parser("simulate", help="simulate a session and write ledger, pattern and events")
    common(s)
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("stabilise", help="free drift and dual-band lock simulation")
    common(st)
    st.add_argument("--free-only", action="store_true")
    st.add_argument("--auto-tune", action="store_true")
    st.set_defaults(func=cmd_stabilise)

    t = sub.add_parser("twcc", help="raw keys, pairing round and binary maps from an event stream")
    common(t)
    t.add_argument("--events", required=True)
    t.add_argument("--pattern", required=True)
    t.add_argument("--classify-by", choices=("alice", "bob"))
    t.set_defaults(func=cmd_twcc)

    pc = sub.add_parser("print-config", help="print every config field with its value")
    common(pc)
    pc.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if getattr(args, "command", None) == "keyrate" and not (args.ledger or args.config):
            raise ConfigError("keyrate needs --ledger or --config")
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, ValueError, LPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
