"""Decoy-state bounds on yields and phase errors.

CAL: upper bounds on the two-mode yields Y_mn by linear programming over
the phase-randomised test gains, plus an independent closed-form route,
feeding the phase-error bound.  SNS: two-decoy lower bounds on the zero-
and single-photon yields and the phase-error upper bound from matched
v-v decoys.  Finite statistics enter through a multiplicative Chernoff
bound on every observed count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import factorial
from typing import Optional, Sequence

import numpy as np
from scipy.stats import poisson

from .encoding import ProtocolParams
from .keyrates import FiniteSizeParams, sns_gains
from .ledger import CountsLedger
from .simplex import InfeasibleError, SimplexProblem  # noqa: F401  re-exported for callers


@dataclass(frozen=True)
class CutoffConfig:
    """Photon-number cut-offs: yields with m+n < y_cut are bounded, sums stop at n_cut."""

    y_cut: int = 8
    n_cut: int = 12

    def __post_init__(self):
        if not 0 < self.y_cut < self.n_cut:
            raise ValueError("need 0 < y_cut < n_cut")

    def bounded_indices(self) -> list[tuple[int, int]]:
        return [(m, n) for m in range(self.n_cut + 1) for n in range(self.n_cut + 1) if m + n < self.y_cut]


@dataclass
class DecoyBounds:
    y0_lower: float = 0.0
    y1_lower: float = 0.0
    e1ph_upper: float = 0.0
    q0_lower: float = 0.0
    q1_lower: float = 0.0
    n1_lower: float = 0.0
    ybar_upper: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, float]]:
        return [("y0 lower", self.y0_lower), ("y1 lower", self.y1_lower),
                ("Q0 lower", self.q0_lower), ("Q1 lower", self.q1_lower),
                ("n1 lower", self.n1_lower), ("e1ph upper", self.e1ph_upper)]


@dataclass(frozen=True)
class GainConstraint:
    """Observed gain of a phase-randomised pulse pair with fluxes (a, b).

    ``margin`` widens the constraint symmetrically (0 in asymptotic mode).
    """

    flux_a: float
    flux_b: float
    gain: float
    margin: float = 0.0


# -- Chernoff ----------------------------------------------------------------
def _kl_poisson(mu: float, x: float) -> float:
    # exponent of the multiplicative Chernoff bound written in terms of the mean
    if x == 0:
        return mu
    return mu - x + x * (math.log(x) - math.log(mu))


def chernoff_interval(observed: float, epsilon: float) -> tuple[float, float]:
    """Range of means compatible with ``observed`` at failure probability ``epsilon``.

    Inverts the multiplicative Chernoff bounds
    P[X <= (1-d) mu] <= (e^-d / (1-d)^(1-d))^mu and
    P[X >= (1+d) mu] <= (e^d / (1+d)^(1+d))^mu,
    both of which equal exp(-(mu - x + x ln(x/mu))).  Each side is solved by
    bisection to 1e-12 relative accuracy.
    """
    if observed < 0:
        raise ValueError("observed must be non-negative")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    x = float(observed)
    target = math.log(1.0 / epsilon)
    if x == 0:
        return 0.0, target

    def solve(lo, hi):
        f_lo = _kl_poisson(lo, x) - target
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            f_mid = _kl_poisson(mid, x) - target
            if (f_mid > 0) == (f_lo > 0):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
            if abs(hi - lo) <= 1e-12 * max(abs(mid), 1e-300):
                break
        return 0.5 * (lo + hi)

    # lower root lies in (0, x), upper root in (x, x + target + 2 sqrt(x target) + ...)
    if _kl_poisson(1e-300, x) < target:
        lower = 0.0
    else:
        lower = solve(1e-300, x)
    hi = x + target + 2.0 * math.sqrt(x * target) + 1.0
    while _kl_poisson(hi, x) < target:
        hi *= 2.0
    upper = solve(hi, x)
    return lower, upper


# -- CAL: yield LP -------------------------------------------------------------
def _poisson_row(a: float, b: float, n_cut: int) -> np.ndarray:
    pa = poisson.pmf(np.arange(n_cut + 1), a) if a > 0 else np.eye(1, n_cut + 1)[0]
    pb = poisson.pmf(np.arange(n_cut + 1), b) if b > 0 else np.eye(1, n_cut + 1)[0]
    return np.outer(pa, pb).ravel()


def yield_upper_bounds_lp(constraints: Sequence[GainConstraint], cut: CutoffConfig = CutoffConfig()) -> np.ndarray:
    """Maximise each Y_mn (m+n < y_cut) subject to 0 <= Y <= 1 and the gain constraints.

    Photon numbers above n_cut are not variables; their probability mass
    (at most ``tail`` of the gain, since yields are at most 1) relaxes each
    lower constraint.  Returns an (n_cut+1) square matrix with 1 outside the
    bounded region.  Raises :class:`InfeasibleError` when the observed gains
    admit no yield assignment.
    """
    k = cut.n_cut + 1
    ybar = np.ones((k, k))
    if not constraints:
        return ybar
    A, b = [], []
    for c in constraints:
        row = _poisson_row(c.flux_a, c.flux_b, cut.n_cut)
        tail = max(1.0 - row.sum(), 0.0)
        scale = 1.0 / c.gain if c.gain > 0 else 1.0
        A.append(row * scale)
        b.append((c.gain + c.margin) * scale)
        A.append(-row * scale)
        b.append(-(c.gain - tail - c.margin) * scale)
    lp = SimplexProblem(k * k, A_ub=np.array(A), b_ub=np.array(b), ub=np.ones(k * k))
    for m, n in cut.bounded_indices():
        obj = np.zeros(k * k)
        obj[m * k + n] = 1.0
        ybar[m, n] = min(1.0, max(0.0, lp.maximise(obj).fun))
    return ybar


def _node_functional(order: int, nodes: Sequence[float]) -> np.ndarray:
    """Weights over f(w), f(v), f(u) isolating the x^order/order! coefficient.

    Order 0 and 1 use divided differences that cancel the constant and
    linear parts exactly; for order >= 2 the second divided difference is
    normalised to the x^order/order! term.  All higher Taylor terms enter
    with non-negative weight, so applied to a series with non-negative
    coefficients the result bounds the isolated coefficient from above.
    """
    w, v, u = nodes
    if order == 0:
        V = np.array([[x ** j / factorial(j) for j in range(3)] for x in nodes])
        return np.linalg.inv(V)[0]
    if order == 1:
        return np.array([-1.0, 1.0, 0.0]) / (v - w)
    c = np.array([(u - v) / (v - w), -(u - w) / (v - w), 1.0])
    return c / (c @ np.array([x ** order / factorial(order) for x in nodes]))


def yield_upper_bounds_analytic(constraints: Sequence[GainConstraint], cut: CutoffConfig = CutoffConfig()) -> np.ndarray:
    """Closed-form counterpart of :func:`yield_upper_bounds_lp`.

    Needs the full 3x3 grid of flux pairs over three distinct fluxes.  With
    G(a, b) = e^(a+b) Q(a, b) = sum_ij a^i b^j / (i! j!) Y_ij, the estimate
    of Y_mn is c_m . G . c_n with the node functionals above; constraint
    margins are added with the absolute weights so they can only loosen it.
    """
    k = cut.n_cut + 1
    ybar = np.ones((k, k))
    if not constraints:
        return ybar
    nodes = sorted({c.flux_a for c in constraints})
    if len(nodes) != 3 or sorted({c.flux_b for c in constraints}) != nodes:
        raise ValueError("analytic bounds need three distinct fluxes on both sides")
    pos = {x: i for i, x in enumerate(nodes)}
    G = np.full((3, 3), np.nan)
    M = np.zeros((3, 3))
    for c in constraints:
        i, j = pos[c.flux_a], pos[c.flux_b]
        G[i, j] = math.exp(c.flux_a + c.flux_b) * c.gain
        M[i, j] = math.exp(c.flux_a + c.flux_b) * c.margin
    if np.isnan(G).any():
        raise ValueError("analytic bounds need all nine flux pairs")
    fn = [_node_functional(o, nodes) for o in range(cut.y_cut)]
    for m, n in cut.bounded_indices():
        est = fn[m] @ G @ fn[n] + np.abs(fn[m]) @ M @ np.abs(fn[n])
        ybar[m, n] = min(1.0, max(0.0, est))
    return ybar


def _cal_coefficient(k: int, j: int, mu: float) -> float:
    if k % 2 != j:
        return 0.0
    if mu == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(-mu / 2) * mu ** (k / 2) / math.sqrt(factorial(k))


def cal_phase_error(ybar: np.ndarray, flux_mu: float, cut: CutoffConfig, q_z: float) -> float:
    """Phase-error upper bound sum_j [sum_mn c_m c_n sqrt(g_mn)]^2 / q_z, clipped to [0, 1].

    g_mn is the yield bound for m+n < y_cut and 1 otherwise; c coefficients
    carry parity j (even photon numbers for j = 0, odd for j = 1).
    """
    if q_z <= 0:
        raise ValueError("q_z must be positive")
    k = cut.n_cut + 1
    g = np.ones((k, k))
    for m, n in cut.bounded_indices():
        g[m, n] = ybar[m, n]
    root = np.sqrt(np.clip(g, 0.0, 1.0))
    total = 0.0
    for j in (0, 1):
        c = np.array([_cal_coefficient(i, j, flux_mu) for i in range(k)])
        total += float(c @ root @ c) ** 2
    return min(1.0, max(0.0, total / q_z))


CAL_TEST_INTENSITIES = ("u", "v", "w")


def cal_gain_constraints(ledger: CountsLedger, params: ProtocolParams, detector: int,
                         margin_sigma: float = 0.0) -> list[GainConstraint]:
    """Per-detector gain constraints from the phase-randomised test pairs.

    The margin is ``margin_sigma`` Poisson standard deviations of the count,
    expressed as a gain.
    """
    out = []
    for a in CAL_TEST_INTENSITIES:
        for b in CAL_TEST_INTENSITIES:
            lab = "ZZ" + a + b
            if lab not in ledger.detected_by_detector:
                continue
            prep = ledger.prepared(params, lab)
            if prep <= 0:
                continue
            cnt = ledger.count_detector(lab, detector)
            margin = margin_sigma * math.sqrt(max(cnt, 1)) / prep if margin_sigma else 0.0
            out.append(GainConstraint(params.flux(a), params.flux(b), cnt / prep, margin))
    return out


def cal_yield_upper_bounds(ledger: CountsLedger, params: ProtocolParams, cut: CutoffConfig = CutoffConfig(),
                           detector: int = 0, margin_sigma: float = 0.0, method: str = "lp") -> np.ndarray:
    """Yield upper-bound matrix for one detector from a CAL ledger.

    ``method`` is ``"lp"`` (simplex) or ``"analytic"`` (closed form).
    """
    cons = cal_gain_constraints(ledger, params, detector, margin_sigma)
    if method == "lp":
        return yield_upper_bounds_lp(cons, cut)
    if method == "analytic":
        return yield_upper_bounds_analytic(cons, cut)
    raise ValueError(f"unknown method {method!r}")


# -- SNS --------------------------------------------------------------------
def _two_decoy_y1(u, v, q_u, q_v, y0):
    return (u * u * math.exp(v) * q_v - v * v * math.exp(u) * q_u - (u * u - v * v) * y0) / (u * v * (u - v))


def sns_decoy_bounds(ledger: CountsLedger, params: ProtocolParams,
                     finite: Optional[FiniteSizeParams] = None,
                     e_vv: Optional[float] = None) -> DecoyBounds:
    """Zero/single-photon yield bounds and phase-error bound for SNS.

    y0 is the gain of the w-w decoy pairs (w is close to vacuum).  y1 uses
    the two-decoy formula on the one-sided decoy gains Q_v = mean(Q_vw, Q_wv)
    and Q_u = mean(Q_uw, Q_wu).  The phase-error estimator takes the matched
    v-v error rate E_vv, removes the vacuum part (error 1/2) and divides by
    the single-photon weight:
        e1ph = (E_vv Q_vv - e^(-2v) y0 / 2) / (2 v e^(-2v) y1).
    With ``finite`` set, each count is replaced by the side of its Chernoff
    interval that weakens the bound.
    """
    b = DecoyBounds()
    eps_pe = finite.eps_pe if finite else None

    def gain(lab: str, side: int = 0) -> float:
        prep = ledger.prepared(params, lab)
        if prep <= 0:
            return 0.0
        c = ledger.count(lab)
        if eps_pe is not None and side:
            lo, hi = chernoff_interval(c, eps_pe)
            c = lo if side < 0 else hi
        return c / prep

    u, v = params.flux_u, params.flux_v
    y0_lo = gain("XXww", -1)
    y0_hi = gain("XXww", +1)
    q_v = 0.5 * (gain("XXvw", -1) + gain("XXwv", -1))
    q_u = 0.5 * (gain("XXuw", +1) + gain("XXwu", +1))
    y1 = _two_decoy_y1(u, v, q_u, q_v, y0_hi) if u != v and u > 0 and v > 0 else 0.0
    if y1 < 0:
        b.flags.append("y1 clipped to 0")
        y1 = 0.0
    b.y0_lower, b.y1_lower = y0_lo, y1

    if e_vv is None:
        e_vv = ledger.x_error_rate("vv")
    if e_vv is None:
        e_vv = 0.0
        b.flags.append("no vv error rate; e1ph from zero errors")
    n_vv = ledger.count("XXvv")
    err_cnt = e_vv * n_vv
    if eps_pe is not None:
        err_cnt = chernoff_interval(err_cnt, eps_pe)[1]
    prep_vv = ledger.prepared(params, "XXvv")
    err_gain = err_cnt / prep_vv if prep_vv > 0 else 0.0
    weight = 2 * v * math.exp(-2 * v) * y1
    if weight > 0:
        e1 = (err_gain - 0.5 * math.exp(-2 * v) * y0_lo) / weight
        if e1 < 0:
            b.flags.append("e1ph clipped to 0")
        b.e1ph_upper = min(1.0, max(0.0, e1))
    else:
        b.e1ph_upper = 0.0
        b.flags.append("no single-photon weight; e1ph set to 0")

    b.q0_lower, b.q1_lower = sns_gains(y0_lo, y1, params.flux_s, params.flux_n, params.p_s_given_z)
    b.n1_lower = ledger.n0_total * params.p_z ** 2 * b.q1_lower
    return b
