"""Users' pulse patterns: slot types, phases, bits and their file format.

A pattern is a fixed, pseudo-random list of slots that the encoders loop
over.  Even positions carry protocol ("quantum") pulses and odd positions
carry unmodulated dim reference pulses used by the slow phase lock.  Slot
types are drawn by fair sampling: the number of slots of each joint
(Alice, Bob) type is fixed to its expected value and only the order is
random.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

PATTERN_LENGTH = 25040
PHASE_LEVELS = 512

INTENSITIES = ("s", "n", "u", "v", "w")
INTENSITY_CODE = {k: i for i, k in enumerate(INTENSITIES)}
BASES = ("Z", "X")
BASIS_CODE = {"Z": 0, "X": 1}
KINDS = ("quantum", "dim_reference")
NO_BIT = 2

MATCHED_DIRECT = "matched_direct"
MATCHED_PI_SHIFTED = "matched_pi_shifted"
REJECTED = "rejected"


@dataclass(frozen=True)
class ProtocolParams:
    """Fluxes (photons per pulse) and selection probabilities of one protocol run.

    ``p_z`` and ``p_x`` are the probabilities of the bases labelled Z and X.
    In SNS the Z basis carries the key (sending or not sending, with send
    probability ``p_s_given_z``) and X carries the u/v/w decoys.  In CAL the
    roles swap: X holds the fixed-phase key states of flux ``flux_s`` and Z
    holds the phase-randomised u/v/w decoys.
    """

    protocol: str = "SNS"
    flux_s: float = 0.35
    flux_u: float = 0.35
    flux_v: float = 0.035
    flux_w: float = 0.0002
    flux_n: float = 0.0002
    p_z: float = 0.5
    p_x: float = 0.5
    p_s_given_z: float = 0.058
    p_u: float = 1.0 / 3.0
    p_v: float = 1.0 / 3.0
    p_w: float = 1.0 / 3.0
    phase_levels: int = PHASE_LEVELS
    delta_accept_rad: float = np.pi / 16.0
    f_ec: float = 1.1

    def __post_init__(self):
        if self.protocol not in ("CAL", "SNS", "SNS_TWCC"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        for name in ("flux_s", "flux_u", "flux_v", "flux_w", "flux_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        probs = (self.p_z, self.p_x, self.p_s_given_z, self.p_u, self.p_v, self.p_w)
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(self.p_z + self.p_x - 1.0) > 1e-6:
            raise ValueError("p_z + p_x must equal 1")
        if abs(self.p_u + self.p_v + self.p_w - 1.0) > 1e-3:
            raise ValueError("p_u + p_v + p_w must equal 1")
        if self.phase_levels < 2:
            raise ValueError("phase_levels must be at least 2")
        if not 0 < self.delta_accept_rad <= np.pi / 2:
            raise ValueError("delta_accept_rad must lie in (0, pi/2]")

    @property
    def is_cal(self) -> bool:
        return self.protocol == "CAL"

    def flux(self, label: str) -> float:
        return getattr(self, "flux_" + label)

    def user_types(self) -> list[tuple[str, str]]:
        """(basis, intensity) types a user can prepare, in tie-break order."""
        if self.is_cal:
            return [("X", "s"), ("Z", "u"), ("Z", "v"), ("Z", "w")]
        return [("Z", "s"), ("Z", "n"), ("X", "u"), ("X", "v"), ("X", "w")]

    def type_probability(self, basis: str, intensity: str) -> float:
        if self.is_cal:
            if basis == "X":
                return self.p_x
            return self.p_z * {"u": self.p_u, "v": self.p_v, "w": self.p_w}[intensity]
        if basis == "Z":
            eps = self.p_s_given_z
            return self.p_z * (eps if intensity == "s" else 1.0 - eps)
        return self.p_x * {"u": self.p_u, "v": self.p_v, "w": self.p_w}[intensity]

    def label_probability(self, label: str) -> float:
        """Probability of the joint slot type named like ``XZun``."""
        return self.type_probability(label[0], label[2]) * self.type_probability(label[1], label[3])

    def labels(self) -> list[str]:
        types = self.user_types()
        return [ba + bb + ta + tb for ba, ta in types for bb, tb in types]

    def code_basis(self) -> str:
        return "X" if self.is_cal else "Z"

    def digest(self) -> bytes:
        """SHA-256 of the canonical JSON form; stored in pattern and stream headers."""
        blob = json.dumps(asdict(self), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).digest()


@dataclass(frozen=True)
class PulseSlot:
    kind: str
    basis: str
    intensity_label: str
    phase_index: int
    bit: Optional[int]


@dataclass
class SlotArray:
    """Column-wise storage of one user's slots."""

    kind: np.ndarray
    basis: np.ndarray
    intensity: np.ndarray
    phase_index: np.ndarray
    bit: np.ndarray

    def __len__(self) -> int:
        return len(self.kind)

    def __getitem__(self, i: int) -> PulseSlot:
        b = int(self.bit[i])
        return PulseSlot(
            kind=KINDS[self.kind[i]],
            basis=BASES[self.basis[i]],
            intensity_label=INTENSITIES[self.intensity[i]],
            phase_index=int(self.phase_index[i]),
            bit=None if b == NO_BIT else b,
        )

    def __iter__(self) -> Iterator[PulseSlot]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SlotArray):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("kind", "basis", "intensity", "phase_index", "bit")
        )


@dataclass
class PatternPair:
    alice: SlotArray
    bob: SlotArray
    params: ProtocolParams
    seed: int = 0
    _digest: bytes = field(default=b"", repr=False, compare=False)

    def __post_init__(self):
        if len(self.alice) != len(self.bob):
            raise ValueError("Alice and Bob patterns differ in length")

    def __len__(self) -> int:
        return len(self.alice)

    @property
    def quantum_positions(self) -> np.ndarray:
        return np.flatnonzero(self.alice.kind == 0)

    @property
    def n_quantum(self) -> int:
        return int(np.count_nonzero(self.alice.kind == 0))

    def quantum_labels(self) -> np.ndarray:
        """Joint label string for every quantum slot, in slot order."""
        q = self.quantum_positions
        ba = np.array(BASES)[self.alice.basis[q]]
        bb = np.array(BASES)[self.bob.basis[q]]
        ta = np.array(INTENSITIES)[self.alice.intensity[q]]
        tb = np.array(INTENSITIES)[self.bob.intensity[q]]
        return np.char.add(np.char.add(ba, bb), np.char.add(ta, tb))

    def digest(self) -> bytes:
        if not self._digest:
            self._digest = hashlib.sha256(to_bytes(self)).digest()
        return self._digest


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Integer counts summing to ``total`` proportional to ``weights``.

    Floors are topped up by the largest fractional remainders; ties go to the
    earlier entry so the result is deterministic.
    """
    w = np.asarray(weights, dtype=float)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be non-negative with a positive sum")
    exact = w / w.sum() * total
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def _stratified_levels(m: int, levels: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` grid levels spread evenly over the circle, in random order."""
    start = rng.random()
    lv = np.floor((start + np.arange(m)) * levels / m).astype(np.int64) % levels
    return rng.permutation(lv)


def build_pattern(
    params: ProtocolParams,
    length: int = PATTERN_LENGTH,
    seed: int = 0,
    stratify_phases: bool = True,
) -> PatternPair:
    """Fair-sampled pattern pair with alternating quantum and dim-reference slots.

    With ``stratify_phases`` the relative phase of every slot type with at
    least one phase-randomised side is itself fair-sampled over the phase
    grid while each user's phase stays uniform.  A short pattern is replayed
    billions of times, so an unlucky draw of a few hundred relative phases
    would otherwise bias that type's click rate for the whole session.
    """
    if length < 2 or length % 2:
        raise ValueError("length must be an even integer >= 2")
    rng = np.random.default_rng(seed)
    nq = length // 2
    types = params.user_types()
    joint = [(a, b) for a in types for b in types]
    weights = [params.type_probability(*a) * params.type_probability(*b) for a, b in joint]
    counts = largest_remainder(weights, nq)

    type_idx = np.repeat(np.arange(len(joint)), counts)
    type_idx = rng.permutation(type_idx)

    levels = params.phase_levels
    a_basis = np.empty(nq, np.uint8)
    b_basis = np.empty(nq, np.uint8)
    a_int = np.empty(nq, np.uint8)
    b_int = np.empty(nq, np.uint8)
    for j, ((ba, ta), (bb, tb)) in enumerate(joint):
        sel = type_idx == j
        a_basis[sel], a_int[sel] = BASIS_CODE[ba], INTENSITY_CODE[ta]
        b_basis[sel], b_int[sel] = BASIS_CODE[bb], INTENSITY_CODE[tb]

    a_phase = rng.integers(0, levels, nq)
    b_phase = rng.integers(0, levels, nq)
    a_bit = np.full(nq, NO_BIT, np.uint8)
    b_bit = np.full(nq, NO_BIT, np.uint8)

    if params.is_cal:
        # key states sit at +pi/2 (bit 0) or -pi/2 (bit 1)
        quarter = levels // 4
        for basis, phase, bit in ((a_basis, a_phase, a_bit), (b_basis, b_phase, b_bit)):
            key = basis == BASIS_CODE["X"]
            bits = rng.integers(0, 2, int(key.sum()))
            bit[key] = bits
            phase[key] = np.where(bits == 0, quarter, 3 * quarter)
    else:
        s_code = INTENSITY_CODE["s"]
        zA = a_basis == BASIS_CODE["Z"]
        zB = b_basis == BASIS_CODE["Z"]
        a_bit[zA] = (a_int[zA] == s_code).astype(np.uint8)
        b_bit[zB] = (b_int[zB] != s_code).astype(np.uint8)
    if stratify_phases:
        # a fixed (key-state) side keeps its phase and the randomised side follows it
        for j, ((ba, _), (bb, _)) in enumerate(joint):
            a_fixed = params.is_cal and ba == "X"
            b_fixed = params.is_cal and bb == "X"
            sel = np.flatnonzero(type_idx == j)
            if a_fixed and b_fixed or not len(sel):
                continue
            d = _stratified_levels(len(sel), levels, rng)
            if b_fixed:
                a_phase[sel] = (b_phase[sel] + d) % levels
            else:
                b_phase[sel] = (a_phase[sel] - d) % levels

    def interleave(q_vals, ref_val, dtype):
        out = np.full(length, ref_val, dtype=dtype)
        out[0::2] = q_vals
        return out

    kind = interleave(0, 1, np.uint8)
    ref_basis = BASIS_CODE["X"]
    ref_int = INTENSITY_CODE["u"]
    alice = SlotArray(
        kind=kind.copy(),
        basis=interleave(a_basis, ref_basis, np.uint8),
        intensity=interleave(a_int, ref_int, np.uint8),
        phase_index=interleave(a_phase, 0, np.uint16),
        bit=interleave(a_bit, NO_BIT, np.uint8),
    )
    bob = SlotArray(
        kind=kind.copy(),
        basis=interleave(b_basis, ref_basis, np.uint8),
        intensity=interleave(b_int, ref_int, np.uint8),
        phase_index=interleave(b_phase, 0, np.uint16),
        bit=interleave(b_bit, NO_BIT, np.uint8),
    )
    return PatternPair(alice=alice, bob=bob, params=params, seed=seed)


def expected_joint_counts(params: ProtocolParams, length: int = PATTERN_LENGTH) -> dict[str, float]:
    nq = length // 2
    return {lab: params.label_probability(lab) * nq for lab in params.labels()}


def realized_joint_counts(pattern: PatternPair) -> dict[str, int]:
    labs, cnt = np.unique(pattern.quantum_labels(), return_counts=True)
    out = {lab: 0 for lab in pattern.params.labels()}
    out.update({str(k): int(v) for k, v in zip(labs, cnt)})
    return out


def phase_bin(phi_a, phi_b, delta: float):
    """Classify a pair of phases for decoy phase matching.

    Returns ``matched_direct`` when the phases agree within ``delta``,
    ``matched_pi_shifted`` when they differ by pi within ``delta`` and
    ``rejected`` otherwise.  Both boundaries are inclusive.
    """
    if not 0 < delta <= np.pi / 2:
        raise ValueError("delta must lie in (0, pi/2]")
    d = float(np.mod(phi_a - phi_b, 2 * np.pi))
    tol = 1e-12
    if min(d, 2 * np.pi - d) <= delta + tol:
        return MATCHED_DIRECT
    if abs(d - np.pi) <= delta + tol:
        return MATCHED_PI_SHIFTED
    return REJECTED


def phase_bin_indices(k_a, k_b, levels: int, delta: float) -> np.ndarray:
    """Integer-grid version of :func:`phase_bin` for arrays of phase indices.

    Returns 0 for direct matches, 1 for pi-shifted matches and -1 for rejects.
    """
    d = np.mod(np.asarray(k_a, dtype=np.int64) - np.asarray(k_b, dtype=np.int64), levels)
    d_rad = d * (2 * np.pi / levels)
    tol = 1e-12
    direct = np.minimum(d_rad, 2 * np.pi - d_rad) <= delta + tol
    shifted = np.abs(d_rad - np.pi) <= delta + tol
    return np.where(direct, 0, np.where(shifted, 1, -1))


# Pattern file layout (little endian):
#   8s   magic b"TFQKDPAT"
#   H    format version
#   H    phase levels
#   I    pattern length L
#   32s  SHA-256 of the protocol parameters
#   then 2*L records of (u8 flags, u16 phase index), Alice's L slots first.
#   flags: bit0 kind, bit1 basis, bits2-4 intensity code, bits5-6 bit value.
MAGIC = b"TFQKDPAT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHI32s")
_RECORD = np.dtype([("flags", "u1"), ("phase", "<u2")])


def _pack(sa: SlotArray) -> np.ndarray:
    rec = np.empty(len(sa), dtype=_RECORD)
    rec["flags"] = (
        sa.kind.astype(np.uint8)
        | (sa.basis.astype(np.uint8) << 1)
        | (sa.intensity.astype(np.uint8) << 2)
        | (sa.bit.astype(np.uint8) << 5)
    )
    rec["phase"] = sa.phase_index
    return rec


def _unpack(rec: np.ndarray) -> SlotArray:
    f = rec["flags"]
    return SlotArray(
        kind=(f & 1).astype(np.uint8),
        basis=((f >> 1) & 1).astype(np.uint8),
        intensity=((f >> 2) & 7).astype(np.uint8),
        phase_index=rec["phase"].astype(np.uint16),
        bit=((f >> 5) & 3).astype(np.uint8),
    )


def to_bytes(pattern: PatternPair) -> bytes:
    head = _HEADER.pack(
        MAGIC, FORMAT_VERSION, pattern.params.phase_levels, len(pattern), pattern.params.digest()
    )
    return head + _pack(pattern.alice).tobytes() + _pack(pattern.bob).tobytes()


def from_bytes(blob: bytes, params: ProtocolParams) -> PatternPair:
    magic, version, levels, length, digest = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ValueError("not a pattern file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported pattern format version {version}")
    if digest != params.digest():
        raise ValueError("pattern was built for different protocol parameters")
    rec = np.frombuffer(blob, dtype=_RECORD, count=2 * length, offset=_HEADER.size)
    return PatternPair(alice=_unpack(rec[:length]), bob=_unpack(rec[length:]), params=params)


def save_pattern(pattern: PatternPair, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(pattern))


def load_pattern(path, params: ProtocolParams) -> PatternPair:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), params)
