"""2-out-of-3 replicated secret sharing over Z_{2^k}.

A secret x is split into additive shares x1 + x2 + x3 = x (mod 2^k).
Party 1 holds (x1, x2), party 2 holds (x2, x3), party 3 holds (x3, x1):
any single party's pair is uniform and independent of x, while any two
parties can reconstruct.

Share slot s_i is therefore held by parties i and i-1. A value known to
the adjacent pair {i, i+1} can be injected into slot i+1 without any
communication; this is how locally known randomness enters protocols.

The share-file format for offline data-holder submission (one file per
receiving party) is:

    magic  b"SGS1"
    k, f, rows, cols           four uint32 little-endian
    payload                    rows*cols cells, row-major; per cell the
                               receiving party's two share components
                               (s_i then s_{i+1}), uint64 little-endian

Gene-expression columns carry fixed-point encoded reals; the label column
(by convention the last one) carries raw unscaled integers.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import IngestionError, IntegrityError, ParameterError
from .prf import PrfStream
from .ring import Ring

__all__ = [
    "ReplicatedShare",
    "SharedVector",
    "ZeroShareSource",
    "share_value",
    "reconstruct_value",
    "share_vector",
    "reconstruct_vector",
    "write_share_file",
    "read_share_file",
]

_U64 = np.uint64
_MAGIC = b"SGS1"


def succ(party: int) -> int:
    """Cyclic successor of a party id in {1, 2, 3}."""
    return party % 3 + 1


def pred(party: int) -> int:
    """Cyclic predecessor of a party id in {1, 2, 3}."""
    return (party - 2) % 3 + 1


@dataclass(frozen=True)
class ReplicatedShare:
    """One party's share pair (s_p, s_{p+1}) of a single ring element."""

    party: int
    first: int
    second: int


@dataclass
class SharedVector:
    """One party's share pair of a vector (or any-shape array) of ring values.

    `a` holds slot s_p and `b` holds slot s_{p+1}, elementwise, as uint64
    arrays of identical shape. Plain data: safe to move across threads.
    """

    a: np.ndarray
    b: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.a.shape

    @property
    def size(self) -> int:
        return self.a.size

    def __getitem__(self, idx) -> "SharedVector":
        return SharedVector(self.a[idx], self.b[idx])

    def __setitem__(self, idx, value: "SharedVector") -> None:
        self.a[idx] = value.a
        self.b[idx] = value.b

    def copy(self) -> "SharedVector":
        return SharedVector(self.a.copy(), self.b.copy())

    def reshape(self, *shape) -> "SharedVector":
        return SharedVector(self.a.reshape(*shape), self.b.reshape(*shape))

    def ravel(self) -> "SharedVector":
        return SharedVector(self.a.ravel(), self.b.ravel())


def share_value(x: int, rng: np.random.Generator, ring: Ring = Ring()) -> list[ReplicatedShare]:
    """Split x into the three replicated share pairs."""
    x1 = ring.wrap(int(rng.integers(0, 2 ** 64, dtype=_U64)))
    x2 = ring.wrap(int(rng.integers(0, 2 ** 64, dtype=_U64)))
    x3 = ring.wrap(x - x1 - x2)
    return [
        ReplicatedShare(1, x1, x2),
        ReplicatedShare(2, x2, x3),
        ReplicatedShare(3, x3, x1),
    ]


def reconstruct_value(shares: Sequence[ReplicatedShare], ring: Ring = Ring()) -> int:
    """Combine the three pairs back into the secret.

    Raises IntegrityError when the overlapping copies of a slot disagree.
    """
    by_party = {s.party: s for s in shares}
    if set(by_party) != {1, 2, 3}:
        raise IntegrityError("need exactly one share from each of parties 1,2,3")
    for p in (1, 2, 3):
        if by_party[p].second != by_party[succ(p)].first:
            raise IntegrityError(f"slot {succ(p)} copies disagree between parties {p} and {succ(p)}")
    return ring.wrap(by_party[1].first + by_party[2].first + by_party[3].first)


def share_vector(values: np.ndarray, rng: np.random.Generator,
                 ring: Ring = Ring()) -> list[SharedVector]:
    """Share an array elementwise; returns the three per-party SharedVectors."""
    values = ring.wrap_array(np.asarray(values, dtype=_U64))
    x1 = ring.wrap_array(rng.integers(0, 2 ** 64, size=values.shape, dtype=_U64))
    x2 = ring.wrap_array(rng.integers(0, 2 ** 64, size=values.shape, dtype=_U64))
    x3 = ring.wrap_array(values - x1 - x2)
    # each party gets its own buffers: parties are independent machines
    return [SharedVector(x1, x2), SharedVector(x2.copy(), x3),
            SharedVector(x3.copy(), x1.copy())]


def reconstruct_vector(shares: Sequence[SharedVector], ring: Ring = Ring(),
                       check: bool = True) -> np.ndarray:
    """Combine the three per-party SharedVectors back into plaintext."""
    s1, s2, s3 = shares
    if check:
        if not (np.array_equal(s1.b, s2.a) and np.array_equal(s2.b, s3.a)
                and np.array_equal(s3.b, s1.a)):
            raise IntegrityError("overlapping share copies disagree")
    return ring.wrap_array(s1.a + s2.a + s3.a)


class ZeroShareSource:
    """Correlated randomness: per draw, u1 + u2 + u3 = 0 (mod 2^k).

    Party p holds the PRF streams it shares with its two neighbours and
    outputs u_p = F(seed_{p,p+1}, ctr) - F(seed_{p-1,p}, ctr). Streams
    advance in lockstep across parties, so the source is deterministic
    given the seeds and counter. Mutably stateful: confine one instance
    to one protocol-execution context.
    """

    def __init__(self, seed_with_next: bytes, seed_with_prev: bytes, ring: Ring = Ring()):
        self._next = PrfStream(seed_with_next)
        self._prev = PrfStream(seed_with_prev)
        self._ring = ring

    @property
    def counter(self) -> int:
        return self._next.counter

    def next_block(self, n: int) -> np.ndarray:
        """Next n correlated words for this party (arithmetic zero sharing)."""
        return self._ring.wrap_array(self._next.words(n) - self._prev.words(n))

    def next_xor_block(self, n: int) -> np.ndarray:
        """Next n correlated words XOR-summing to zero across parties."""
        return self._next.words(n) ^ self._prev.words(n)


def write_share_file(fh: BinaryIO, sv: SharedVector, bits: int, frac_bits: int) -> None:
    """Serialize one receiving party's share matrix (rows x cols cells)."""
    if sv.a.ndim != 2:
        raise ParameterError("share files hold 2-D matrices")
    rows, cols = sv.a.shape
    fh.write(_MAGIC)
    fh.write(struct.pack("<IIII", bits, frac_bits, rows, cols))
    interleaved = np.empty((rows, cols, 2), dtype=_U64)
    interleaved[:, :, 0] = sv.a
    interleaved[:, :, 1] = sv.b
    fh.write(interleaved.astype("<u8", copy=False).tobytes())


def read_share_file(fh: BinaryIO) -> tuple[SharedVector, int, int]:
    """Parse a share file; returns (shares, bits, frac_bits)."""
    magic = fh.read(4)
    if magic != _MAGIC:
        raise IngestionError(f"bad share-file magic {magic!r}")
    header = fh.read(16)
    if len(header) != 16:
        raise IngestionError("truncated share-file header")
    bits, frac_bits, rows, cols = struct.unpack("<IIII", header)
    want = rows * cols * 2 * 8
    payload = fh.read(want)
    if len(payload) != want:
        raise IngestionError(
            f"truncated share payload: wanted {want} bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<u8").astype(_U64).reshape(rows, cols, 2)
    return SharedVector(np.ascontiguousarray(flat[:, :, 0]),
                        np.ascontiguousarray(flat[:, :, 1])), bits, frac_bits
