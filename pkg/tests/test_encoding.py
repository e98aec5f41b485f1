import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from tfqkd.encoding import (BASIS_CODE, INTENSITY_CODE, MATCHED_DIRECT, MATCHED_PI_SHIFTED, REJECTED, ProtocolParams,
                            build_pattern, expected_joint_counts, from_bytes, largest_remainder,
                            phase_bin, phase_bin_indices, realized_joint_counts, to_bytes)

DELTA = math.radians(22.5)


@st.composite
def protocol_params(draw):
    protocol = draw(st.sampled_from(["SNS", "CAL"]))
    p_z = draw(st.floats(0.05, 0.95))
    pu = draw(st.floats(0.05, 1.0))
    pv = draw(st.floats(0.05, 1.0))
    pw = draw(st.floats(0.05, 1.0))
    tot = pu + pv + pw
    return ProtocolParams(protocol=protocol, p_z=p_z, p_x=1 - p_z,
                          p_s_given_z=draw(st.floats(0.01, 0.99)),
                          p_u=pu / tot, p_v=pv / tot, p_w=pw / tot)


@settings(max_examples=30, deadline=None)
@given(protocol_params(), st.integers(1, 400), st.integers(0, 2**31))
def test_fair_sampling_is_exact(params, half, seed):
    length = 2 * half
    real = realized_joint_counts(build_pattern(params, length, seed=seed))
    exp = expected_joint_counts(params, length)
    assert sum(real.values()) == half
    for lab, e in exp.items():
        assert abs(real[lab] - e) <= 1


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=20), st.integers(0, 10_000))
def test_largest_remainder_sums_to_total(w, total):
    if sum(w) <= 0:
        return
    c = largest_remainder(w, total)
    assert c.sum() == total
    exact = np.asarray(w) / sum(w) * total
    assert np.all(np.abs(c - exact) < 1.0)


@settings(max_examples=10, deadline=None)
@given(protocol_params(), st.integers(0, 1000))
def test_pattern_bytes_roundtrip(params, seed):
    pat = build_pattern(params, 200, seed=seed)
    back = from_bytes(to_bytes(pat), params)
    assert back.alice == pat.alice and back.bob == pat.bob
    assert back.digest() == pat.digest()


def test_pattern_rejects_other_params():
    pat = build_pattern(ProtocolParams(), 100)
    with pytest.raises(ValueError):
        from_bytes(to_bytes(pat), ProtocolParams(flux_s=0.2))


def test_pattern_is_seed_deterministic():
    p = ProtocolParams()
    assert build_pattern(p, seed=7).digest() == build_pattern(p, seed=7).digest()
    assert build_pattern(p, seed=7).digest() != build_pattern(p, seed=8).digest()


def test_slots_alternate_quantum_and_reference():
    pat = build_pattern(ProtocolParams(), 100)
    assert np.array_equal(pat.alice.kind, np.tile([0, 1], 50))
    assert pat.n_quantum == 50


def test_cal_key_states_at_quarter_phases():
    p = ProtocolParams(protocol="CAL", flux_s=0.015, flux_u=0.1, flux_v=0.015)
    pat = build_pattern(p, 2000, seed=3)
    a = pat.alice
    key = (a.kind == 0) & (a.basis == BASIS_CODE["X"])
    q = p.phase_levels // 4
    assert set(np.unique(a.phase_index[key])) <= {q, 3 * q}
    assert np.array_equal(a.bit[key], (a.phase_index[key] == 3 * q).astype(np.uint8))


def test_sns_bits_follow_sending():
    pat = build_pattern(ProtocolParams(), 4000, seed=1)
    for side, sent_bit in ((pat.alice, 1), (pat.bob, 0)):
        z = (side.kind == 0) & (side.basis == BASIS_CODE["Z"])
        sent = side.intensity[z] == INTENSITY_CODE["s"]
        assert np.array_equal(side.bit[z][sent], np.full(sent.sum(), sent_bit))
        assert np.all(side.bit[z][~sent] == 1 - sent_bit)


def test_sns_phases_are_uniform():
    p = ProtocolParams(phase_levels=16)
    pat = build_pattern(p, 40_000, seed=5)
    q = pat.quantum_positions
    for ph in (pat.alice.phase_index[q], pat.bob.phase_index[q]):
        counts = np.bincount(ph, minlength=16)
        assert chisquare(counts).pvalue > 1e-4


def test_phase_bin_boundaries_inclusive():
    assert phase_bin(0.0, 0.0, DELTA) == MATCHED_DIRECT
    assert phase_bin(DELTA, 0.0, DELTA) == MATCHED_DIRECT
    assert phase_bin(DELTA + 1e-9, 0.0, DELTA) == REJECTED
    assert phase_bin(math.pi + DELTA, 0.0, DELTA) == MATCHED_PI_SHIFTED
    assert phase_bin(-DELTA, 0.0, DELTA) == MATCHED_DIRECT
    assert phase_bin(math.pi / 2, 0.0, DELTA) == REJECTED
    with pytest.raises(ValueError):
        phase_bin(0.0, 0.0, 0.0)


@given(st.integers(0, 511), st.integers(0, 511))
def test_grid_binning_agrees_with_continuous(ka, kb):
    to = {MATCHED_DIRECT: 0, MATCHED_PI_SHIFTED: 1, REJECTED: -1}
    grid = int(phase_bin_indices([ka], [kb], 512, DELTA)[0])
    cont = phase_bin(2 * math.pi * ka / 512, 2 * math.pi * kb / 512, DELTA)
    assert grid == to[cont]
