"""Channel phase drift and the two-stage phase lock at the measurement node.

A single path-length noise process drives the phase of both wavelengths,
phi_k = 2 pi L / lambda_k.  The fast loop reads bright lambda_2 reference
counts at D2 and drives a phase modulator whose phase adds equally to both
wavelengths; locking lambda_2 therefore leaves lambda_1 drifting only with
the small differential term 2 pi L (1/lambda_1 - 1/lambda_2).  The slow
loop reads dim lambda_1 reference counts at D1 and moves a fibre stretcher
that acts on lambda_1 alone.

Error signals are Poisson counts integrated over each loop's window.  The
count model is the quadrature fringe N = R T (1 + cos phi) / 2, and the
error fed to the controller is the phase deviation implied by the count
difference from the setpoint, so the gains are dimensionless.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

FREE_ACQUISITION_S = 25e-6
LOCKED_ACQUISITION_S = 60e-3
D2_PHOTON_RATE = 1e7
D1_PHOTON_RATE = 3e3


@dataclass
class DriftModel:
    """Wiener phase drift at lambda_1.

    ``drift_rate_std`` is the std of the phase increment over a window of
    ``rate_window_s`` divided by that window.  With the default 1 s window
    this is the std of the 1 s increments.
    """

    drift_rate_std: float = 8000.0  # rad/s
    dt: float = 5e-6
    wavelength_1_nm: float = 1550.12
    wavelength_2_nm: float = 1548.51
    rate_window_s: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.drift_rate_std < 0:
            raise ValueError("drift_rate_std must be non-negative")
        if self.wavelength_1_nm == self.wavelength_2_nm:
            raise ValueError("wavelengths must differ")
        if self.rate_window_s <= 0:
            raise ValueError("rate_window_s must be positive")

    @property
    def step_std(self) -> float:
        """Std of the lambda_1 phase increment over one step."""
        return self.drift_rate_std * math.sqrt(self.rate_window_s * self.dt)

    @property
    def leverage(self) -> float:
        """Free lambda_1 drift over the differential drift left by an ideal lambda_2 lock."""
        return self.wavelength_2_nm / abs(self.wavelength_2_nm - self.wavelength_1_nm)

    @classmethod
    def short_acquisition(cls, **kw) -> "DriftModel":
        """8000 rad/s drift statistic taken over 25 us acquisitions."""
        kw.setdefault("rate_window_s", FREE_ACQUISITION_S)
        return cls(**kw)


@dataclass
class PhaseTrace:
    t_s: np.ndarray
    phase_rad: np.ndarray

    def __len__(self) -> int:
        return len(self.t_s)

    @property
    def dt(self) -> float:
        return float(self.t_s[1] - self.t_s[0]) if len(self) > 1 else 0.0

    def drift_rates(self, window_s: float) -> np.ndarray:
        """Phase increments over consecutive non-overlapping windows, divided by the window."""
        step = max(1, int(round(window_s / self.dt))) if self.dt else 1
        pts = self.phase_rad[::step]
        return np.diff(pts) / (step * self.dt) if self.dt else np.zeros(0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "phase_rad"])
            for t, p in zip(self.t_s, self.phase_rad):
                w.writerow([f"{t:.9g}", f"{p:.12g}"])

    @classmethod
    def from_csv(cls, path) -> "PhaseTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def _increments(model: DriftModel, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, model.step_std, n) if model.step_std > 0 else np.zeros(n)


def simulate_free_drift(model: DriftModel, duration_s: float, seed) -> PhaseTrace:
    """lambda_1 phase sampled every ``dt`` as a Wiener process starting at 0."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s / model.dt))
    rng = np.random.default_rng(seed)
    phase = np.concatenate([[0.0], np.cumsum(_increments(model, n, rng))])
    return PhaseTrace(np.arange(n + 1) * model.dt, phase)


@dataclass
class LoopConfig:
    rate_hz: float
    integration_s: float
    kp: float = 0.0
    ki: float = 0.5
    kd: float = 0.0
    setpoint_counts: Optional[float] = None  # None means the fringe quadrature
    actuator_range_rad: float = 2 * math.pi
    enabled: bool = True

    def __post_init__(self):
        if self.rate_hz <= 0 or self.integration_s <= 0:
            raise ValueError("rate and integration window must be positive")
        if self.rate_hz * self.integration_s > 1 + 1e-9:
            raise ValueError("integration window longer than the update period")
        if not all(math.isfinite(g) for g in (self.kp, self.ki, self.kd)):
            raise ValueError("gains must be finite")
        if self.actuator_range_rad < 2 * math.pi:
            raise ValueError("actuator range must cover at least 2 pi")

    def mean_counts(self, photon_rate: float) -> float:
        """Peak-to-zero fringe counts R T of one integration window."""
        return photon_rate * self.integration_s

    def setpoint_phase(self, photon_rate: float) -> float:
        full = self.mean_counts(photon_rate)
        if self.setpoint_counts is None:
            return math.pi / 2
        x = 2.0 * self.setpoint_counts / full - 1.0
        if not -1.0 < x < 1.0:
            raise ValueError("setpoint counts must lie strictly inside the fringe")
        return math.acos(x)

    @classmethod
    def fast_default(cls, **kw) -> "LoopConfig":
        kw = {"rate_hz": 200e3, "integration_s": 5e-6, "kp": 0.0, "ki": 0.4, **kw}
        return cls(**kw)

    @classmethod
    def slow_default(cls, **kw) -> "LoopConfig":
        kw = {"rate_hz": 20.0, "integration_s": 50e-3, "kp": 0.0, "ki": 0.1,
              "actuator_range_rad": 200.0, **kw}
        return cls(**kw)


@dataclass
class LockReport:
    status: str
    free_drift_std: float
    residual_drift_std: float
    locking_error_std: float
    reduction_factor: float
    fast_error_std: float
    offsets: np.ndarray = field(repr=False)
    offset_histogram: tuple = field(repr=False, default=None)
    settings: dict = field(default_factory=dict)

    @property
    def locked(self) -> bool:
        return self.status == "locked"

    def write_histogram_csv(self, path) -> None:
        counts, edges = self.offset_histogram
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_centre_rad", "count"])
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([f"{0.5 * (lo + hi):.6g}", int(c)])


def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def _block_means(x: np.ndarray, block: int) -> np.ndarray:
    n = len(x) // block
    return x[: n * block].reshape(n, block).mean(axis=1)


class _Pid:
    """Velocity-form PID; ``step`` returns the actuator increment for one error sample."""

    def __init__(self, cfg: LoopConfig):
        self.kp, self.ki, self.kd = cfg.kp, cfg.ki, cfg.kd
        self.e1 = self.e2 = 0.0

    def step(self, e: float) -> float:
        du = -(self.kp * (e - self.e1) + self.ki * e + self.kd * (e - 2 * self.e1 + self.e2))
        self.e2, self.e1 = self.e1, e
        return du


def _fold(c: float, span: float) -> float:
    """Whole-fringe reset that brings an actuator back inside its range."""
    if abs(c) > span / 2:
        return 2 * math.pi * round(c / (2 * math.pi))
    return 0.0


def _run_fast(phi2_free: np.ndarray, fast: LoopConfig, photon_rate: float, dt: float,
              rng: np.random.Generator, counting_noise: bool) -> np.ndarray:
    """Common-actuator phase at every step while locking lambda_2.

    Resets by whole fringes leave the interference unchanged, so the
    returned phase omits them and stays continuous.
    """
    n = len(phi2_free)
    act = np.zeros(n)
    if not fast.enabled:
        return act
    per = max(1, int(round(1.0 / (fast.rate_hz * dt))))
    m = min(per, max(1, int(round(fast.integration_s / dt))))
    full = photon_rate * m * dt
    half = 0.5 * full
    set_phase = fast.setpoint_phase(photon_rate)
    set_counts = half * (1 + math.cos(set_phase))
    slope = half * math.sin(set_phase)
    pid = _Pid(fast)
    poisson = rng.poisson
    cos = math.cos
    c = 0.0
    folded = 0.0
    acc = 0.0
    for k in range(n):
        act[k] = c + folded
        if (k % per) >= per - m:
            acc += half / m * (1 + cos(phi2_free[k] + c))
        if k % per == per - 1:
            counts = poisson(acc) if counting_noise else acc
            e = (set_counts - counts) / slope
            c += pid.step(e)
            jump = _fold(c, fast.actuator_range_rad)
            c -= jump
            folded += jump
            acc = 0.0
    return act


def _run_slow(phi1: np.ndarray, slow: LoopConfig, photon_rate: float, dt: float,
              rng: np.random.Generator, counting_noise: bool) -> np.ndarray:
    """Stretcher phase at every step while locking lambda_1.

    The stretcher only moves at update instants, so the counts of each
    window follow from the window's mean of exp(i phi1).
    """
    n = len(phi1)
    act = np.zeros(n)
    if not slow.enabled:
        return act
    per = max(1, int(round(1.0 / (slow.rate_hz * dt))))
    m = min(per, max(1, int(round(slow.integration_s / dt))))
    n_up = n // per
    z = np.exp(1j * phi1[: n_up * per]).reshape(n_up, per)[:, per - m:].mean(axis=1)
    half = 0.5 * photon_rate * m * dt
    set_phase = slow.setpoint_phase(photon_rate)
    set_counts = half * (1 + math.cos(set_phase))
    slope = half * math.sin(set_phase)
    pid = _Pid(slow)
    c = 0.0
    folded = 0.0
    for u in range(n_up):
        act[u * per:(u + 1) * per] = c + folded
        mu = half * (1 + (z[u] * complex(math.cos(c), math.sin(c))).real)
        counts = rng.poisson(mu) if counting_noise else mu
        e = (set_counts - counts) / slope
        c += pid.step(e)
        jump = _fold(c, slow.actuator_range_rad)
        c -= jump
        folded += jump
    act[n_up * per:] = c + folded
    return act


def _window_rates(phase: np.ndarray, block: int, dt: float) -> np.ndarray:
    """Drift rates from consecutive window-averaged phase estimates."""
    return np.diff(_block_means(phase, block)) / (block * dt)


@dataclass
class _FastRun:
    phi1_free: np.ndarray
    phi2_free: np.ndarray
    fast_act: np.ndarray
    slow_rng: np.random.Generator


def _fast_run(model, fast, photon_rate_at_d2, duration_s, seed, counting_noise) -> _FastRun:
    drift_ss, fast_ss, slow_ss = np.random.SeedSequence(seed).spawn(3)
    n = int(round(duration_s / model.dt))
    phi1_free = np.concatenate([[0.0], np.cumsum(_increments(model, n - 1, np.random.default_rng(drift_ss)))])
    phi2_free = phi1_free * (model.wavelength_1_nm / model.wavelength_2_nm)
    act = _run_fast(phi2_free, fast, photon_rate_at_d2, model.dt, np.random.default_rng(fast_ss),
                    counting_noise)
    return _FastRun(phi1_free, phi2_free, act, np.random.default_rng(slow_ss))


def _summarise(model, run: _FastRun, fast, slow, photon_rate_at_d2, photon_rate_at_d1,
               settle_s, free_window_s, residual_window_s, counting_noise, histogram_bins) -> LockReport:
    dt = model.dt
    phi1_pre = run.phi1_free + run.fast_act
    slow_act = _run_slow(phi1_pre, slow, photon_rate_at_d1, dt, run.slow_rng, counting_noise)

    s0 = int(round(settle_s / dt))
    fblk = max(1, int(round(free_window_s / dt)))
    free_std = float(np.std(_window_rates(run.phi1_free[s0:], fblk, dt)))
    rblk = max(1, int(round(residual_window_s / dt)))
    res_rates = _window_rates(phi1_pre[s0:], rblk, dt)
    res_std = float(np.std(res_rates)) if len(res_rates) > 1 else float("nan")

    fast_set = fast.setpoint_phase(photon_rate_at_d2)
    fast_err = _wrap(run.phi2_free[s0:] + run.fast_act[s0:] - fast_set) if fast.enabled else np.zeros(0)
    fast_std = float(np.std(fast_err)) if len(fast_err) else float("nan")

    slow_set = slow.setpoint_phase(photon_rate_at_d1)
    sblk = max(1, int(round(slow.integration_s / dt)))
    z = _block_means(np.exp(1j * (phi1_pre[s0:] + slow_act[s0:])), sblk)
    offsets = _wrap(np.angle(z) - slow_set)
    lock_std = float(np.std(offsets)) if len(offsets) else float("nan")

    reduction = free_std / res_std if res_std > 0 else float("inf")
    status = "locked"
    if not (fast.enabled or slow.enabled):
        status = "open"
    elif not res_std < free_std:
        status = "failed"
    elif slow.enabled and not lock_std < 1.0:
        status = "failed"
    hist = np.histogram(offsets, bins=histogram_bins, range=(-np.pi / 4, np.pi / 4))
    settings = {"fast": fast, "slow": slow, "photon_rate_at_d2": photon_rate_at_d2,
                "photon_rate_at_d1": photon_rate_at_d1, "free_window_s": free_window_s,
                "residual_window_s": residual_window_s, "settle_s": settle_s}
    return LockReport(status, free_std, res_std, lock_std, reduction, fast_std, offsets, hist, settings)


def run_dual_band_lock(model: DriftModel, fast: LoopConfig, slow: LoopConfig,
                       photon_rate_at_d2: float = D2_PHOTON_RATE, duration_s: float = 10.0,
                       seed=0, photon_rate_at_d1: float = D1_PHOTON_RATE,
                       settle_s: float = 0.5, free_window_s: Optional[float] = None,
                       residual_window_s: Optional[float] = None,
                       counting_noise: bool = True, histogram_bins: int = 41) -> LockReport:
    """Simulate both loops over one drift realisation and summarise the lock.

    Drift rates are differences of window-averaged phases: the free drift
    over ``free_window_s`` (default: the model's rate window) and the
    residual lambda_1 drift with only the fast loop acting over
    ``residual_window_s`` (default: ``LOCKED_ACQUISITION_S``).  The locking error
    is the spread of the lambda_1 offset averaged over the slow loop's
    integration windows with both loops acting.  Only the trace after
    ``settle_s`` enters the statistics.  ``counting_noise=False`` feeds the
    loops their mean counts instead of Poisson draws.
    """
    if duration_s <= settle_s:
        raise ValueError("duration must exceed the settling time")
    free_window_s = free_window_s or model.rate_window_s
    residual_window_s = residual_window_s or LOCKED_ACQUISITION_S
    run = _fast_run(model, fast, photon_rate_at_d2, duration_s, seed, counting_noise)
    return _summarise(model, run, fast, slow, photon_rate_at_d2, photon_rate_at_d1, settle_s,
                      free_window_s, residual_window_s, counting_noise, histogram_bins)


FAST_GRID = list(itertools.product([0.0, 0.1, 0.2], [0.1, 0.2, 0.3, 0.4, 0.6, 0.8]))
SLOW_GRID = list(itertools.product([0.0, 0.2], [0.02, 0.05, 0.1, 0.2, 0.3, 0.5]))


def auto_tune(model: DriftModel, fast: LoopConfig, slow: LoopConfig,
              photon_rate_at_d2: float = D2_PHOTON_RATE, photon_rate_at_d1: float = D1_PHOTON_RATE,
              duration_s: float = 10.0, seed=0, fast_grid=None, slow_grid=None,
              fast_duration_s: float = 0.2, settle_s: float = 0.5):
    """Grid search of the proportional/integral gains of both loops.

    Each grid is a list of ``(kp, ki)`` pairs.  The fast gains minimise the
    lambda_2 error std on a short trace; the slow gains then minimise the
    lambda_1 locking error on one longer trace of the tuned fast loop.
    Returns the tuned ``(fast, slow)`` configs.
    """
    best = None
    for kp, ki in fast_grid or FAST_GRID:
        cfg = replace(fast, kp=kp, ki=ki)
        run = _fast_run(model, cfg, photon_rate_at_d2, fast_duration_s, seed, True)
        s0 = len(run.fast_act) // 4
        err = float(np.std(_wrap(run.phi2_free[s0:] + run.fast_act[s0:] - cfg.setpoint_phase(photon_rate_at_d2))))
        if math.isfinite(err) and (best is None or err < best[0]):
            best = (err, cfg)
    fast_t = best[1]
    run = _fast_run(model, fast_t, photon_rate_at_d2, duration_s, seed, True)
    slow_state = run.slow_rng.bit_generator.state
    best = None
    for kp, ki in slow_grid or SLOW_GRID:
        cfg = replace(slow, kp=kp, ki=ki)
        run.slow_rng.bit_generator.state = slow_state
        rep = _summarise(model, run, fast_t, cfg, photon_rate_at_d2, photon_rate_at_d1, settle_s,
                         model.rate_window_s, model.rate_window_s, True, 41)
        if math.isfinite(rep.locking_error_std) and (best is None or rep.locking_error_std < best[0]):
            best = (rep.locking_error_std, cfg)
    return fast_t, best[1]


def qber_from_phase_noise(offset_samples, setpoint: float = 0.0) -> float:
    """Mean interferometric error fraction sin^2((delta - setpoint)/2)."""
    d = np.asarray(offset_samples, dtype=float)
    if d.size == 0:
        raise ValueError("no samples")
    return float(np.mean(np.sin((d - setpoint) / 2) ** 2))
