import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog
from scipy.stats import poisson

from tfqkd.decoy import (CutoffConfig, GainConstraint, cal_phase_error, chernoff_interval,
                         sns_decoy_bounds, yield_upper_bounds_analytic, yield_upper_bounds_lp)
from tfqkd.keyrates import FiniteSizeParams
from tfqkd.ledger import params_from_ledger
from tfqkd.simplex import InfeasibleError, maximise

SMALL = CutoffConfig(y_cut=3, n_cut=6)
FLUXES = (0.0002, 0.015, 0.1)


def planted_constraints(seed, cut=SMALL, fluxes=FLUXES):
    """Gains generated by a random yield matrix, including photon numbers past the cut."""
    rng = np.random.default_rng(seed)
    k = cut.n_cut + 1
    y = rng.uniform(0, 1, (k, k))
    tail_yield = rng.uniform(0, 1)
    cons = []
    for a in fluxes:
        for b in fluxes:
            row = np.outer(poisson.pmf(np.arange(k), a), poisson.pmf(np.arange(k), b))
            gain = float((row * y).sum() + (1 - row.sum()) * tail_yield)
            cons.append(GainConstraint(a, b, gain))
    return y, cons


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e7), st.floats(1e-12, 0.5))
def test_chernoff_interval_contains_observation(x, eps):
    lo, hi = chernoff_interval(x, eps)
    assert 0 <= lo <= x <= hi


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 1e6), st.floats(1e-10, 1e-2), st.floats(1.5, 100))
def test_chernoff_interval_shrinks_as_epsilon_grows(x, eps, factor):
    lo1, hi1 = chernoff_interval(x, eps)
    lo2, hi2 = chernoff_interval(x, min(eps * factor, 0.9))
    assert lo2 >= lo1 - 1e-9 * x and hi2 <= hi1 + 1e-9 * x


def test_chernoff_endpoints_satisfy_bound():
    x, eps = 1000.0, 1e-10
    for mu in chernoff_interval(x, eps):
        exponent = mu - x + x * math.log(x / mu)
        assert exponent == pytest.approx(math.log(1 / eps), rel=1e-9)


def test_chernoff_rejects_bad_input():
    with pytest.raises(ValueError):
        chernoff_interval(-1, 0.1)
    with pytest.raises(ValueError):
        chernoff_interval(1, 0.0)


@pytest.mark.parametrize("seed", range(50))
def test_lp_certifies_planted_yields(seed):
    y, cons = planted_constraints(seed)
    ybar = yield_upper_bounds_lp(cons, SMALL)
    for m, n in SMALL.bounded_indices():
        assert ybar[m, n] >= y[m, n] - 1e-7


def test_lp_matches_reference_solver():
    y, cons = planted_constraints(123)
    ybar = yield_upper_bounds_lp(cons, SMALL)
    k = SMALL.n_cut + 1
    A, b = [], []
    for c in cons:
        row = np.outer(poisson.pmf(np.arange(k), c.flux_a), poisson.pmf(np.arange(k), c.flux_b)).ravel()
        tail = 1 - row.sum()
        A += [row / c.gain, -row / c.gain]
        b += [1.0, -(c.gain - tail) / c.gain]
    for m, n in SMALL.bounded_indices():
        obj = np.zeros(k * k)
        obj[m * k + n] = -1
        ref = linprog(obj, A_ub=np.array(A), b_ub=np.array(b), bounds=[(0, 1)] * (k * k), method="highs")
        # the reference solves only to its own feasibility tolerance (about 1e-7 per row)
        assert ybar[m, n] == pytest.approx(min(1.0, -ref.fun), rel=1e-4)


def test_lp_solution_is_feasible():
    _, cons = planted_constraints(123)
    k = SMALL.n_cut + 1
    A, b = [], []
    for c in cons:
        row = np.outer(poisson.pmf(np.arange(k), c.flux_a), poisson.pmf(np.arange(k), c.flux_b)).ravel()
        A += [row / c.gain, -row / c.gain]
        b += [1.0, -(c.gain - (1 - row.sum())) / c.gain]
    obj = np.zeros(k * k)
    obj[k + 1] = 1
    r = maximise(obj, A_ub=np.array(A), b_ub=np.array(b), ub=np.ones(k * k))
    assert np.max(np.array(A) @ r.x - np.array(b)) < 1e-12
    assert r.x.min() >= 0 and r.x.max() <= 1


def test_lp_reports_contradictory_gains():
    cons = [GainConstraint(0.1, 0.1, 0.5), GainConstraint(0.1, 0.1, 0.1)]
    with pytest.raises(InfeasibleError):
        yield_upper_bounds_lp(cons, SMALL)


def test_analytic_bounds_are_valid_and_close_to_lp():
    y, cons = planted_constraints(7, CutoffConfig(y_cut=2, n_cut=8))
    cut = CutoffConfig(y_cut=2, n_cut=8)
    an = yield_upper_bounds_analytic(cons, cut)
    lp = yield_upper_bounds_lp(cons, cut)
    assert an[0, 0] >= y[0, 0] - 1e-6
    assert an[1, 0] >= y[1, 0] - 1e-3
    assert abs(an[0, 0] - lp[0, 0]) < 0.05


def test_cal_phase_error_monotone_in_yields():
    cut = CutoffConfig()
    k = cut.n_cut + 1
    lo = np.full((k, k), 1e-7)
    hi = np.full((k, k), 1e-6)
    assert cal_phase_error(lo, 0.015, cut, 1e-5) <= cal_phase_error(hi, 0.015, cut, 1e-5)
    assert cal_phase_error(np.ones((k, k)), 0.015, cut, 1e-9) == 1.0


def test_finite_size_bounds_are_weaker(sns_ledger):
    p = params_from_ledger(sns_ledger)
    asym = sns_decoy_bounds(sns_ledger, p)
    fin = sns_decoy_bounds(sns_ledger, p, FiniteSizeParams())
    assert 0 < fin.y1_lower <= asym.y1_lower
    assert fin.e1ph_upper >= asym.e1ph_upper
    assert fin.n1_lower <= asym.n1_lower


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffConfig(y_cut=5, n_cut=4)
