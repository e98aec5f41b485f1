"""Raw-key extraction, random-pairing parity refinement and binary maps.

In sending-or-not-sending, a Z-basis click yields one raw bit per user:
Alice writes 1 when she sent and Bob writes 0 when he sent, so a click on a
slot where both sent is an error.  The refinement round pairs Bob's bits at
random, compares parities and keeps the first bit of every pair whose
parities agree.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .detection import EventStream
from .encoding import BASIS_CODE, INTENSITY_CODE, PatternPair
from .keyrates import TwccStats


@dataclass
class RawKeyPair:
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    origin: np.ndarray  # global slot index of each bit

    def __post_init__(self):
        self.alice_bits = np.asarray(self.alice_bits, dtype=np.uint8)
        self.bob_bits = np.asarray(self.bob_bits, dtype=np.uint8)
        if self.origin is None:
            self.origin = np.arange(len(self.alice_bits), dtype=np.int64)
        self.origin = np.asarray(self.origin, dtype=np.int64)
        if not (len(self.alice_bits) == len(self.bob_bits) == len(self.origin)):
            raise ValueError("key strings and origin must have equal lengths")

    def __len__(self) -> int:
        return len(self.alice_bits)

    @property
    def qber(self) -> float:
        return float(np.mean(self.alice_bits != self.bob_bits)) if len(self) else 0.0


@dataclass
class TwccOutcome:
    refined_alice: np.ndarray
    refined_bob: np.ndarray
    stats: TwccStats
    pair_log: np.ndarray = field(repr=False)  # rows of (i, j, bob parity, alice parity)

    @property
    def qber_after(self) -> float:
        if not len(self.refined_alice):
            return 0.0
        return float(np.mean(self.refined_alice != self.refined_bob))

    def write_pair_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index_i", "index_j", "bob_parity", "alice_parity"])
            w.writerows(self.pair_log.tolist())


def extract_raw_keys(stream: EventStream, pattern: PatternPair) -> RawKeyPair:
    """One bit per Z-Z click record, in slot then detector order."""
    p = pattern.params
    if p.is_cal:
        raise ValueError("raw keys need a sending-or-not-sending pattern")
    L = len(pattern)
    if stream.pattern_length != L:
        raise ValueError("stream and pattern lengths differ")
    if stream.pattern_digest and stream.pattern_digest != pattern.digest():
        raise ValueError("stream was recorded with a different pattern")
    rec = stream.records
    if not stream.is_ordered():
        rec = rec[np.lexsort((rec["detector"], rec["slot_index"]))]
    si = rec["slot_index"].astype(np.int64)
    pos = si % L
    a, b = pattern.alice, pattern.bob
    z = BASIS_CODE["Z"]
    keep = (a.kind[pos] == 0) & (a.basis[pos] == z) & (b.basis[pos] == z)
    pos, si = pos[keep], si[keep]
    s = INTENSITY_CODE["s"]
    alice = (a.intensity[pos] == s).astype(np.uint8)
    bob = (b.intensity[pos] != s).astype(np.uint8)
    return RawKeyPair(alice, bob, si)


def random_pairing(n: int, seed) -> np.ndarray:
    """Seeded uniform matching of ``n`` indices as an (n//2, 2) array.

    A Fisher-Yates shuffle followed by adjacent pairing; an odd leftover is
    dropped.  Each row is sorted so column 0 holds the earlier index.
    """
    perm = np.random.default_rng(seed).permutation(n)
    pairs = perm[: 2 * (n // 2)].reshape(-1, 2)
    return np.sort(pairs, axis=1)


def twcc_round(keys: RawKeyPair, seed, classify_by: str = "bob") -> TwccOutcome:
    """Random pairing with parity comparison; keeps the earlier bit of agreeing pairs.

    Kept pairs are classed by the bits of ``classify_by``: pairs mixing the
    two bit values are odd, and of the even ones the "00" class is the pair
    drawn from that user's sending group (Bob's 0s, or Alice's 1s).
    """
    if classify_by not in ("alice", "bob"):
        raise ValueError("classify_by must be 'alice' or 'bob'")
    n = len(keys)
    if n < 2:
        raise ValueError("need at least two raw bits to pair")
    pairs = random_pairing(n, seed)
    i, j = pairs[:, 0], pairs[:, 1]
    A, B = keys.alice_bits, keys.bob_bits
    bob_par = B[i] ^ B[j]
    alice_par = A[i] ^ A[j]
    kept = bob_par == alice_par

    ref_bits = B if classify_by == "bob" else A
    sent_val = 0 if classify_by == "bob" else 1
    ci, cj = ref_bits[i], ref_bits[j]
    odd = kept & (ci != cj)
    even_a = kept & (ci == cj) & (ci == sent_val)
    even_b = kept & (ci == cj) & (ci != sent_val)
    wrong = A[i] != B[i]

    def rate(mask):
        m = int(mask.sum())
        return float((wrong & mask).sum() / m) if m else 0.0

    stats = TwccStats(
        n_odd=float(odd.sum()), n_even00=float(even_a.sum()), n_even11=float(even_b.sum()),
        e_a=rate(odd), e_b=rate(even_a), e_c=rate(even_b), n_t=float(n),
    )
    log = np.column_stack([i, j, bob_par, alice_par]).astype(np.int64)
    return TwccOutcome(A[i[kept]].copy(), B[i[kept]].copy(), stats, log)


def bias(bits) -> float:
    """Fraction of ones in a bit string."""
    bits = np.asarray(bits)
    return float(bits.mean()) if len(bits) else 0.0


def xor_map(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.uint8), np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("bit strings must have equal lengths")
    return a ^ b


def render_binary_map(bits, width: int) -> bytes:
    """Pack bits row-major into a P4 bitmap, 0 white and 1 black.

    The last partial row is padded with white pixels.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    bits = np.asarray(bits, dtype=np.uint8)
    height = max(1, -(-len(bits) // width))
    grid = np.zeros(height * width, np.uint8)
    grid[: len(bits)] = bits
    packed = np.packbits(grid.reshape(height, width), axis=1)
    return b"P4\n%d %d\n" % (width, height) + packed.tobytes()


def write_binary_map(path, bits, width: int) -> None:
    with open(path, "wb") as fh:
        fh.write(render_binary_map(bits, width))


def read_binary_map(data: bytes) -> np.ndarray:
    """Decode a P4 bitmap written by :func:`render_binary_map` into a 2-D array."""
    parts = data.split(b"\n", 2)
    if parts[0] != b"P4":
        raise ValueError("not a P4 bitmap")
    width, height = map(int, parts[1].split())
    rows = np.frombuffer(parts[2], np.uint8).reshape(height, -1)
    return np.unpackbits(rows, axis=1)[:, :width]
