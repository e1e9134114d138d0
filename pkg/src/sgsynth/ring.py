"""Arithmetic in Z_{2^k} and the fixed-point codec on top of it.

All secure computation in this package happens over integers modulo a
power-of-two ring (k = 64 by default, so plain uint64 wrap-around is the
ring reduction). Finite-precision reals enter the ring through
:class:`FixedPointCodec`: a real x becomes round(x * 2^f) in two's
complement, so one multiplication later a right shift by f restores the
scale.

Scalar values are handled with Python ints (exact, arbitrary precision);
bulk data uses numpy uint64 arrays, which wrap modulo 2^64 natively.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EncodingRangeError, ParameterError

__all__ = ["Ring", "RingValue", "FixedPointCodec"]

_U64 = np.uint64


@dataclass(frozen=True)
class Ring:
    """The ring Z_{2^bits}, bits <= 64."""

    bits: int = 64

    def __post_init__(self) -> None:
        if not 2 <= self.bits <= 64:
            raise ParameterError(f"ring width must be in [2, 64], got {self.bits}")

    @property
    def modulus(self) -> int:
        return 1 << self.bits

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1

    def wrap(self, v: int) -> int:
        return v & self.mask

    def to_signed(self, v: int) -> int:
        """Interpret v as two's complement."""
        v &= self.mask
        if v >= 1 << (self.bits - 1):
            v -= self.modulus
        return v

    def wrap_array(self, arr: np.ndarray) -> np.ndarray:
        arr = arr.astype(_U64, copy=False)
        if self.bits == 64:
            return arr
        return arr & _U64(self.mask)

    def signed_array(self, arr: np.ndarray) -> np.ndarray:
        """Two's-complement reinterpretation of a wrapped array, as int64."""
        arr = self.wrap_array(arr)
        signed = arr.astype(np.int64)  # C cast: wraps, i.e. two's complement
        if self.bits == 64:
            return signed
        half = 1 << (self.bits - 1)
        return np.where(signed >= half, signed - self.modulus, signed)


@dataclass(frozen=True)
class RingValue:
    """A single element of Z_{2^k} with wrapping operators.

    Convenience scalar type; vectorized code works on raw uint64 arrays.
    """

    value: int
    ring: Ring = Ring()

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", self.ring.wrap(self.value))

    def __add__(self, other: "RingValue") -> "RingValue":
        return RingValue(self.value + other.value, self.ring)

    def __sub__(self, other: "RingValue") -> "RingValue":
        return RingValue(self.value - other.value, self.ring)

    def __mul__(self, other: "RingValue") -> "RingValue":
        return RingValue(self.value * other.value, self.ring)

    def __neg__(self) -> "RingValue":
        return RingValue(-self.value, self.ring)

    def signed(self) -> int:
        return self.ring.to_signed(self.value)


class FixedPointCodec:
    """Maps reals to ring elements with `frac_bits` fractional bits.

    encode(x) = round(x * 2^f) mod 2^k, negatives in two's complement.
    Values are representable while |x| < 2^(k-f-1).
    """

    def __init__(self, frac_bits: int = 16, bits: int = 64):
        self.ring = Ring(bits)
        if not 1 <= frac_bits <= bits - 2:
            raise ParameterError(
                f"frac_bits must be in [1, {bits - 2}], got {frac_bits}"
            )
        self.frac_bits = frac_bits
        self.bits = bits
        self.scale = 1 << frac_bits
        # Largest encodable magnitude (signed headroom).
        self.max_abs = float(1 << (bits - frac_bits - 1))

    def encode(self, x: float) -> int:
        if not abs(x) < self.max_abs:
            raise EncodingRangeError(
                f"{x!r} outside fixed-point range (|x| < {self.max_abs:g})"
            )
        return self.ring.wrap(round(x * self.scale))

    def decode(self, v: int) -> float:
        return self.ring.to_signed(v) / self.scale

    def encode_array(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.abs(x) < self.max_abs):
            bad = np.abs(x).max()
            raise EncodingRangeError(
                f"value {bad!r} outside fixed-point range (|x| < {self.max_abs:g})"
            )
        scaled = np.rint(x * self.scale).astype(np.int64)
        return self.ring.wrap_array(scaled.astype(_U64))

    def decode_array(self, v: np.ndarray) -> np.ndarray:
        return self.ring.signed_array(np.asarray(v, dtype=_U64)) / self.scale

    def truncate(self, v: int, bits: int | None = None) -> int:
        """Arithmetic shift right, restoring f fractional bits after a product.

        Applied share-wise this is only probabilistically exact (each party
        shifts its own share, so inter-share carries are dropped); the
        reconstructed result can be off by a couple of ulps.
        """
        shift = self.frac_bits if bits is None else bits
        return self.ring.wrap(self.ring.to_signed(v) >> shift)

    def truncate_array(self, v: np.ndarray, bits: int | None = None) -> np.ndarray:
        shift = self.frac_bits if bits is None else bits
        signed = self.ring.signed_array(np.asarray(v, dtype=_U64))
        return self.ring.wrap_array((signed >> shift).astype(_U64))
