"""Monte Carlo of Charlie's detections for a repeating pattern pair.

A session of ``n0`` quantum pulse pairs replays the pattern's quantum slots
in order: global pair index g maps to replay g // Nq and slot g % Nq, so
every slot is sent either K or K-1 times with K = ceil(n0 / Nq).  Each
pulse pair picks up an independent Gaussian phase offset of std ``sigma``
on top of the encoded phase difference.

Three samplers share this model:

* ``aggregated`` draws one multinomial (none / D0 only / D1 only / both)
  per joint type and encoded phase difference, with the offset integrated
  out by Gauss-Hermite quadrature.  Slots with equal type and phase
  difference are exchangeable, so this is exact in distribution.
* ``event`` draws the same multinomial per slot and places the clicks on
  random distinct replays, producing a time-tagged event stream.
* ``per_pulse`` draws an offset and two Bernoulli clicks for every pulse
  pair; slow, meant as a statistical cross-check for small ``n0``.

The global index range is cut into fixed blocks with their own seeds, and
shards take whole blocks, so any sharding merges to the same ledger.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .channel import ChannelParams, transmittance
from .encoding import (INTENSITIES, PATTERN_LENGTH, PatternPair, ProtocolParams,
                       phase_bin_indices)
from .ledger import CountsLedger

GH_NODES = 48
N_BLOCKS = 64
METHODS = ("aggregated", "event", "per_pulse")


# -- phase noise -------------------------------------------------------------
def noise_sigma(phase_noise) -> float:
    """Residual phase-offset std from a float, a LockReport, or ``None``."""
    if phase_noise is None:
        return 0.0
    if hasattr(phase_noise, "locking_error_std"):
        return float(phase_noise.locking_error_std)
    sigma = float(phase_noise)
    if sigma < 0:
        raise ValueError("phase noise std must be non-negative")
    return sigma


def _gauss_hermite(sigma: float, nodes: int = GH_NODES):
    if sigma == 0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return sigma * x, w / w.sum()


def outcome_probabilities(flux_a, flux_b, dphase, channel: ChannelParams, sigma: float) -> np.ndarray:
    """Probabilities of (no click, D0 only, D1 only, both) per pulse pair.

    Inputs broadcast; the result has a trailing axis of length 4.  The
    phase offset is averaged with Gauss-Hermite quadrature.
    """
    off, wts = _gauss_hermite(sigma)
    fa = np.asarray(flux_a, float)[..., None]
    fb = np.asarray(flux_b, float)[..., None]
    d = np.asarray(dphase, float)[..., None] + off
    a2 = transmittance(channel, "A") * fa
    b2 = transmittance(channel, "B") * fb
    cross = np.sqrt(a2 * b2) * np.cos(d)
    n0 = np.maximum(0.5 * (a2 + b2) + cross, 0.0)
    n1 = np.maximum(0.5 * (a2 + b2) - cross, 0.0)
    keep = 1.0 - channel.p_dark
    q0 = keep * np.exp(-channel.det_eff_0 * n0)  # no click on D0
    q1 = keep * np.exp(-channel.det_eff_1 * n1)
    out = np.stack([q0 * q1, (1 - q0) * q1, q0 * (1 - q1), (1 - q0) * (1 - q1)], axis=-1)
    out = np.einsum("...nk,n->...k", out, wts)
    out = np.clip(out, 0.0, 1.0)
    return out / out.sum(axis=-1, keepdims=True)


# -- event stream ------------------------------------------------------------
@dataclass(frozen=True)
class EventRecord:
    slot_index: int
    detector: str
    alice_slot: object = None
    bob_slot: object = None


EVENT_DTYPE = np.dtype([("slot_index", "<u8"), ("detector", "u1")])
EVENT_MAGIC = b"TFQKDEVT"
EVENT_VERSION = 1
# magic, version, pattern length, n0, pattern digest
_EVENT_HEADER = struct.Struct("<8sHIQ32s")


class EventStream:
    """Time-ordered click records (global slot index, detector).

    The global slot index is replay * pattern_length + position, so odd
    positions are dim-reference slots and even positions quantum slots.
    """

    def __init__(self, records: Optional[np.ndarray] = None, n0: int = 0,
                 pattern_digest: bytes = b"", pattern_length: int = PATTERN_LENGTH):
        rec = np.zeros(0, EVENT_DTYPE) if records is None else np.asarray(records, EVENT_DTYPE)
        self.records = rec
        self.n0 = int(n0)
        self.pattern_digest = pattern_digest
        self.pattern_length = int(pattern_length)

    def __len__(self) -> int:
        return len(self.records)

    def is_ordered(self) -> bool:
        r = self.records
        if len(r) < 2:
            return True
        si, det = r["slot_index"], r["detector"]
        return bool(np.all((si[1:] > si[:-1]) | ((si[1:] == si[:-1]) & (det[1:] > det[:-1]))))

    def events(self, pattern: Optional[PatternPair] = None) -> Iterator[EventRecord]:
        L = self.pattern_length
        for si, det in zip(self.records["slot_index"], self.records["detector"]):
            pos = int(si) % L
            a = pattern.alice[pos] if pattern is not None else None
            b = pattern.bob[pos] if pattern is not None else None
            yield EventRecord(int(si), "D0" if det == 0 else "D1", a, b)

    def split(self, at: int) -> tuple["EventStream", "EventStream"]:
        """Split by record position; the pulse count stays with the second part."""
        a = EventStream(self.records[:at], 0, self.pattern_digest, self.pattern_length)
        b = EventStream(self.records[at:], self.n0, self.pattern_digest, self.pattern_length)
        return a, b

    def __add__(self, other: "EventStream") -> "EventStream":
        if self.pattern_digest and other.pattern_digest and self.pattern_digest != other.pattern_digest:
            raise ValueError("streams belong to different patterns")
        rec = np.concatenate([self.records, other.records])
        rec = rec[np.lexsort((rec["detector"], rec["slot_index"]))]
        return EventStream(rec, self.n0 + other.n0, self.pattern_digest or other.pattern_digest,
                           self.pattern_length)

    def to_bytes(self) -> bytes:
        head = _EVENT_HEADER.pack(EVENT_MAGIC, EVENT_VERSION, self.pattern_length, self.n0,
                                  self.pattern_digest.ljust(32, b"\0")[:32])
        return head + self.records.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "EventStream":
        magic, version, length, n0, digest = _EVENT_HEADER.unpack_from(blob, 0)
        if magic != EVENT_MAGIC:
            raise ValueError("not an event stream file")
        if version != EVENT_VERSION:
            raise ValueError(f"unsupported event stream version {version}")
        body = blob[_EVENT_HEADER.size:]
        if len(body) % EVENT_DTYPE.itemsize:
            raise ValueError("truncated event stream")
        rec = np.frombuffer(body, dtype=EVENT_DTYPE).copy()
        return cls(rec, n0, digest, length)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "EventStream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# -- pattern bookkeeping -------------------------------------------------------
@dataclass
class _SlotTable:
    """Per quantum slot: label id, flux pair, encoded phase-difference index."""

    labels: list
    label_id: np.ndarray
    flux_a: np.ndarray
    flux_b: np.ndarray
    dk: np.ndarray
    match: np.ndarray  # 0 direct, 1 pi-shifted, -1 rejected (X-X slots only)
    cal_equal_bits: np.ndarray  # CAL key slots: True when bits agree
    levels: int


def _slot_table(pattern: PatternPair) -> _SlotTable:
    p = pattern.params
    q = pattern.quantum_positions
    al, bo = pattern.alice, pattern.bob
    labs = pattern.quantum_labels()
    uniq = p.labels()
    index = {lab: i for i, lab in enumerate(uniq)}
    label_id = np.array([index[str(x)] for x in labs], dtype=np.int64)
    fl = np.array([p.flux(t) for t in INTENSITIES])
    levels = p.phase_levels
    dk = (al.phase_index[q].astype(np.int64) - bo.phase_index[q].astype(np.int64)) % levels
    both_x = (al.basis[q] == 1) & (bo.basis[q] == 1)
    match = np.where(both_x, phase_bin_indices(al.phase_index[q], bo.phase_index[q], levels,
                                               p.delta_accept_rad), -1)
    equal_bits = al.bit[q] == bo.bit[q]
    return _SlotTable(uniq, label_id, fl[al.intensity[q]], fl[bo.intensity[q]], dk, match,
                      equal_bits, levels)


def replays_per_slot(n0: int, n_quantum: int) -> tuple[int, int]:
    """(K, r): slots with index < r are sent K times, the others K - 1 times."""
    if n0 <= 0:
        return 0, 0
    K = -(-n0 // n_quantum)
    r = n0 - (K - 1) * n_quantum
    return K, r


def block_ranges(n0: int, n_quantum: int, n_blocks: int = N_BLOCKS) -> list[tuple[int, int]]:
    """Replay ranges [r_lo, r_hi) of the fixed seeding blocks."""
    K, _ = replays_per_slot(n0, n_quantum)
    nb = max(1, min(n_blocks, K))
    edges = [(b * K) // nb for b in range(nb + 1)]
    return [(edges[b], edges[b + 1]) for b in range(nb)]


def _block_counts(n0: int, nq: int, r_lo: int, r_hi: int) -> np.ndarray:
    K, r = replays_per_slot(n0, nq)
    kj = np.where(np.arange(nq) < r, K, K - 1)
    return np.clip(np.minimum(r_hi, kj) - r_lo, 0, None)


def block_seed(seed: int, block: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block),))


def shard_blocks(n_blocks: int, shard: int, n_shards: int) -> range:
    """Contiguous block indices belonging to one shard."""
    if not 0 <= shard < n_shards:
        raise ValueError("shard index out of range")
    lo = (shard * n_blocks) // n_shards
    hi = ((shard + 1) * n_blocks) // n_shards
    return range(lo, hi)


# -- tallying ----------------------------------------------------------------
class _Tally:
    """Accumulates per-slot click counts into ledger fields."""

    def __init__(self, table: _SlotTable, params: ProtocolParams):
        nl = len(table.labels)
        self.t = table
        self.params = params
        self.det = np.zeros((nl, 2), np.int64)
        self.match_det = np.zeros((nl, 2), np.int64)
        self.match_ok = np.zeros((nl, 2), np.int64)
        self.err = np.zeros((nl, 2), np.int64)
        self.ref = np.zeros(2, np.int64)

    def add_slots(self, slot_idx: np.ndarray, c0: np.ndarray, c1: np.ndarray) -> None:
        """Add D0/D1 click counts ``c0``, ``c1`` observed on quantum slots ``slot_idx``."""
        t = self.t
        lid = t.label_id[slot_idx]
        nl = len(t.labels)
        self.det[:, 0] += np.bincount(lid, c0, nl).astype(np.int64)
        self.det[:, 1] += np.bincount(lid, c1, nl).astype(np.int64)
        m = t.match[slot_idx]
        sel = m >= 0
        self.match_det[:, 0] += np.bincount(lid[sel], c0[sel], nl).astype(np.int64)
        self.match_det[:, 1] += np.bincount(lid[sel], c1[sel], nl).astype(np.int64)
        direct = m == 0
        shifted = m == 1
        self.match_ok[:, 0] += np.bincount(lid[direct], c0[direct], nl).astype(np.int64)
        self.match_ok[:, 1] += np.bincount(lid[shifted], c1[shifted], nl).astype(np.int64)
        if self.params.is_cal:
            eq = t.cal_equal_bits[slot_idx]
            key = np.array([lab == "XXss" for lab in t.labels])[lid]
            # equal bits light D0, opposite bits light D1
            e0 = key & ~eq
            e1 = key & eq
            self.err[:, 0] += np.bincount(lid[e0], c0[e0], nl).astype(np.int64)
            self.err[:, 1] += np.bincount(lid[e1], c1[e1], nl).astype(np.int64)

    def ledger(self, n0: int) -> CountsLedger:
        t = self.t
        led = CountsLedger(n0_total=int(n0))
        for i, lab in enumerate(t.labels):
            led.detected_by_detector[lab] = (int(self.det[i, 0]), int(self.det[i, 1]))
            led.detected[lab] = int(self.det[i].sum())
            if lab.startswith("XX") and not self.params.is_cal:
                led.matched[lab] = (int(self.match_det[i, 0]), int(self.match_det[i, 1]))
                led.matched_correct[lab] = (int(self.match_ok[i, 0]), int(self.match_ok[i, 1]))
            if self.params.is_cal and lab == "XXss":
                led.errors[lab] = (int(self.err[i, 0]), int(self.err[i, 1]))
        led.totals_d0 = int(self.det[:, 0].sum())
        led.totals_d1 = int(self.det[:, 1].sum())
        led.reference_clicks = (int(self.ref[0]), int(self.ref[1]))
        return led


def tally(stream: EventStream, pattern: PatternPair) -> CountsLedger:
    """Aggregate an event stream into a ledger (pure, additive over streams)."""
    L = len(pattern)
    if stream.pattern_length != L:
        raise ValueError("stream and pattern lengths differ")
    if stream.pattern_digest and stream.pattern_digest != pattern.digest():
        raise ValueError("stream was recorded with a different pattern")
    table = _slot_table(pattern)
    acc = _Tally(table, pattern.params)
    si = stream.records["slot_index"].astype(np.int64)
    det = stream.records["detector"].astype(np.int64)
    if np.any(det > 1):
        raise ValueError("detector field must be 0 or 1")
    pos = si % L
    rep = si // L
    nq = pattern.n_quantum
    gidx = rep * nq + pos // 2
    if stream.n0 and np.any(gidx >= stream.n0):
        raise ValueError("slot index beyond the recorded number of pulses")
    quantum = pos % 2 == 0
    j = pos[quantum] // 2
    d = det[quantum]
    c0 = np.bincount(j[d == 0], minlength=nq)
    c1 = np.bincount(j[d == 1], minlength=nq)
    hit = np.flatnonzero((c0 + c1) > 0)
    acc.add_slots(hit, c0[hit], c1[hit])
    acc.ref += np.bincount(det[~quantum], minlength=2)[:2]
    return acc.ledger(stream.n0)


# -- samplers ----------------------------------------------------------------
def _reference_probs(pattern: PatternPair, channel: ChannelParams, sigma: float) -> np.ndarray:
    u = pattern.params.flux_u
    return outcome_probabilities(u, u, 0.0, channel, sigma)


def _sample_aggregated(table, params, channel, sigma, counts, rng, acc, ref_probs):
    active = counts > 0
    key = table.label_id * table.levels + table.dk
    uniq, inv = np.unique(key[active], return_inverse=True)
    trials = np.bincount(inv, counts[active]).astype(np.int64)
    dk = uniq % table.levels
    first = np.flatnonzero(active)[np.unique(inv, return_index=True)[1]]
    probs = outcome_probabilities(table.flux_a[first], table.flux_b[first],
                                  2 * np.pi * dk / table.levels, channel, sigma)
    draws = rng.multinomial(trials, probs)
    c0 = draws[:, 1] + draws[:, 3]
    c1 = draws[:, 2] + draws[:, 3]
    # attribute each group to one representative slot: slots in a group share label and phase bin
    acc.add_slots(first, c0, c1)
    nref = int(counts.sum())
    if nref:
        r = rng.multinomial(nref, ref_probs)
        acc.ref += [r[1] + r[3], r[2] + r[3]]


def _sample_events(table, params, channel, sigma, counts, r_lo, rng, acc, ref_probs, L):
    nq = len(counts)
    probs = outcome_probabilities(table.flux_a, table.flux_b, 2 * np.pi * table.dk / table.levels,
                                  channel, sigma)
    draws = rng.multinomial(counts, probs)
    out_idx, out_det = [], []
    for kind, (position, outcomes) in enumerate(((0, draws), (1, None))):
        if kind == 1:
            outcomes = rng.multinomial(counts, np.broadcast_to(ref_probs, (nq, 4)))
        clicks = outcomes[:, 1:].sum(axis=1)
        for j in np.flatnonzero(clicks):
            n_click = int(clicks[j])
            reps = r_lo + rng.choice(int(counts[j]), n_click, replace=False)
            kinds = np.repeat([1, 2, 3], outcomes[j, 1:])
            kinds = rng.permutation(kinds)
            base = reps.astype(np.uint64) * np.uint64(L) + np.uint64(2 * j + position)
            d0 = base[(kinds == 1) | (kinds == 3)]
            d1 = base[(kinds == 2) | (kinds == 3)]
            out_idx += [d0, d1]
            out_det += [np.zeros(len(d0), np.uint8), np.ones(len(d1), np.uint8)]
        if kind == 0:
            acc.add_slots(np.arange(nq), outcomes[:, 1] + outcomes[:, 3], outcomes[:, 2] + outcomes[:, 3])
        else:
            acc.ref += [int((outcomes[:, 1] + outcomes[:, 3]).sum()), int((outcomes[:, 2] + outcomes[:, 3]).sum())]
    if not out_idx:
        return np.zeros(0, EVENT_DTYPE)
    rec = np.zeros(sum(len(x) for x in out_idx), EVENT_DTYPE)
    rec["slot_index"] = np.concatenate(out_idx)
    rec["detector"] = np.concatenate(out_det)
    return rec


def _sample_per_pulse(table, params, channel, sigma, counts, r_lo, rng, acc, L, with_events):
    eta_a, eta_b = transmittance(channel, "A"), transmittance(channel, "B")
    keep = 1.0 - channel.p_dark
    u = params.flux_u
    base_d = 2 * np.pi * table.dk / table.levels
    out_idx, out_det = [], []
    for r in range(int(counts.max(initial=0))):
        live = np.flatnonzero(counts > r)
        for position in (0, 1):
            if position == 0:
                fa, fb, d = table.flux_a[live], table.flux_b[live], base_d[live]
            else:
                fa = fb = np.full(len(live), u)
                d = np.zeros(len(live))
            d = d + sigma * rng.standard_normal(len(live))
            a2, b2 = eta_a * fa, eta_b * fb
            cross = np.sqrt(a2 * b2) * np.cos(d)
            n0 = np.maximum(0.5 * (a2 + b2) + cross, 0)
            n1 = np.maximum(0.5 * (a2 + b2) - cross, 0)
            k0 = rng.random(len(live)) < 1 - keep * np.exp(-channel.det_eff_0 * n0)
            k1 = rng.random(len(live)) < 1 - keep * np.exp(-channel.det_eff_1 * n1)
            if position == 0:
                acc.add_slots(live, k0.astype(np.int64), k1.astype(np.int64))
            else:
                acc.ref += [int(k0.sum()), int(k1.sum())]
            if with_events:
                base = np.uint64((r_lo + r) * L) + (2 * live + position).astype(np.uint64)
                out_idx += [base[k0], base[k1]]
                out_det += [np.zeros(int(k0.sum()), np.uint8), np.ones(int(k1.sum()), np.uint8)]
    if not out_idx:
        return np.zeros(0, EVENT_DTYPE)
    rec = np.zeros(sum(len(x) for x in out_idx), EVENT_DTYPE)
    rec["slot_index"] = np.concatenate(out_idx)
    rec["detector"] = np.concatenate(out_det)
    return rec


def simulate_shard(pattern: PatternPair, channel: ChannelParams, phase_noise, n0: int, seed: int,
                   shard: int = 0, n_shards: int = 1, method: str = "aggregated",
                   with_events: bool = False, n_blocks: int = N_BLOCKS):
    """Simulate the seeding blocks that belong to one shard."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if n0 < 0:
        raise ValueError("n0 must be non-negative")
    sigma = noise_sigma(phase_noise)
    table = _slot_table(pattern)
    acc = _Tally(table, pattern.params)
    nq = pattern.n_quantum
    L = len(pattern)
    ref_probs = _reference_probs(pattern, channel, sigma)
    recs = []
    blocks = block_ranges(n0, nq, n_blocks) if n0 > 0 else []
    mine = shard_blocks(len(blocks), shard, n_shards) if blocks else range(0)
    shard_n0 = 0
    for b in mine:
        r_lo, r_hi = blocks[b]
        counts = _block_counts(n0, nq, r_lo, r_hi)
        shard_n0 += int(counts.sum())
        rng = np.random.default_rng(block_seed(seed, b))
        if method == "aggregated" and not with_events:
            _sample_aggregated(table, pattern.params, channel, sigma, counts, rng, acc, ref_probs)
        elif method == "per_pulse":
            recs.append(_sample_per_pulse(table, pattern.params, channel, sigma, counts, r_lo, rng,
                                          acc, L, with_events))
        else:
            recs.append(_sample_events(table, pattern.params, channel, sigma, counts, r_lo, rng,
                                       acc, ref_probs, L))
    ledger = acc.ledger(shard_n0)
    stream = None
    if with_events or method == "event":
        rec = np.concatenate(recs) if recs else np.zeros(0, EVENT_DTYPE)
        rec = rec[np.lexsort((rec["detector"], rec["slot_index"]))]
        stream = EventStream(rec, shard_n0, pattern.digest(), L)
    return ledger, stream


def simulate_session(pattern: PatternPair, channel: ChannelParams, phase_noise, n0: int, seed: int,
                     method: str = "aggregated", with_events: bool = False, n_shards: int = 1,
                     n_blocks: int = N_BLOCKS):
    """Simulate ``n0`` pulse pairs; returns ``(ledger, stream)``.

    ``stream`` is ``None`` unless events were requested (``with_events`` or
    ``method="event"``); when present, ``tally(stream, pattern)`` equals
    the ledger.  Results depend only on ``seed``, not on ``n_shards``.
    """
    ledger, stream = None, None
    for s in range(n_shards):
        led, st = simulate_shard(pattern, channel, phase_noise, n0, seed, s, n_shards, method,
                                 with_events, n_blocks)
        ledger = led if ledger is None else ledger + led
        if st is not None:
            stream = st if stream is None else stream + st
    if ledger is None:
        ledger = _Tally(_slot_table(pattern), pattern.params).ledger(0)
    return ledger, stream


def expected_ledger(pattern: PatternPair, channel: ChannelParams, phase_noise, n0: int) -> CountsLedger:
    """Ledger of expected counts (rounded to integers) for ``n0`` pulse pairs."""
    sigma = noise_sigma(phase_noise)
    table = _slot_table(pattern)
    nq = pattern.n_quantum
    K, r = replays_per_slot(n0, nq)
    counts = np.where(np.arange(nq) < r, K, K - 1) if n0 > 0 else np.zeros(nq, np.int64)
    probs = outcome_probabilities(table.flux_a, table.flux_b, 2 * np.pi * table.dk / table.levels,
                                  channel, sigma)
    e0 = counts * (probs[:, 1] + probs[:, 3])
    e1 = counts * (probs[:, 2] + probs[:, 3])
    acc = _FloatTally(table, pattern.params)
    acc.add_slots(np.arange(nq), e0, e1)
    ref = outcome_probabilities(pattern.params.flux_u, pattern.params.flux_u, 0.0, channel, sigma)
    acc.ref = np.array([ref[1] + ref[3], ref[2] + ref[3]]) * counts.sum()
    return acc.ledger(n0)


class _FloatTally(_Tally):
    def __init__(self, table, params):
        super().__init__(table, params)
        for name in ("det", "match_det", "match_ok", "err"):
            setattr(self, name, getattr(self, name).astype(float))
        self.ref = self.ref.astype(float)

    def add_slots(self, slot_idx, c0, c1):
        t = self.t
        lid = t.label_id[slot_idx]
        nl = len(t.labels)
        self.det[:, 0] += np.bincount(lid, c0, nl)
        self.det[:, 1] += np.bincount(lid, c1, nl)
        m = t.match[slot_idx]
        for sel, target, col, vals in ((m >= 0, self.match_det, 0, c0), (m >= 0, self.match_det, 1, c1),
                                       (m == 0, self.match_ok, 0, c0), (m == 1, self.match_ok, 1, c1)):
            target[:, col] += np.bincount(lid[sel], vals[sel], nl)
        if self.params.is_cal:
            eq = t.cal_equal_bits[slot_idx]
            key = np.array([lab == "XXss" for lab in t.labels])[lid]
            self.err[:, 0] += np.bincount(lid[key & ~eq], c0[key & ~eq], nl)
            self.err[:, 1] += np.bincount(lid[key & eq], c1[key & eq], nl)

    def ledger(self, n0):
        for name in ("det", "match_det", "match_ok", "err"):
            setattr(self, name, np.rint(getattr(self, name)).astype(np.int64))
        self.ref = np.rint(self.ref).astype(np.int64)
        return _Tally.ledger(self, n0)
