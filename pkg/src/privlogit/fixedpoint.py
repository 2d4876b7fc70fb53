"""Fixed-point encoding of reals into the Paillier plaintext ring Z_N.

A real x is stored as round(x * 2**frac_bits) mod N; residues in the upper
half of the ring are negative.  Products of two encodings carry scale
2**(2*frac_bits) and must be floor-shifted back, which is what
`product_scale_correction` specifies for plaintext and what the secure
truncation subprotocol emulates under encryption.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class FixedPointError(Exception):
    pass


class RangeError(FixedPointError, OverflowError):
    pass


class CorruptionError(FixedPointError):
    """A ring element fell into the band no legal encoding can occupy."""


@dataclass(frozen=True)
class FixedPointParams:
    modulus: int
    frac_bits: int = 32
    int_bits: int = 64
    stat_sec_bits: int = 40

    def __post_init__(self):
        if self.frac_bits < 1:
            raise ValueError("frac_bits must be >= 1")
        needed = 2 * (self.int_bits + self.frac_bits) + self.stat_sec_bits + 2
        if needed >= int(self.modulus).bit_length():
            raise ValueError(
                f"modulus of {int(self.modulus).bit_length()} bits is too small; need more than {needed}")

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def value_bound(self) -> int:
        """Exclusive bound on |encoded integer| of a legal single-scale value."""
        return 1 << (self.int_bits + self.frac_bits)

    @property
    def half(self) -> int:
        return self.modulus // 2


def signed(v: int, modulus: int) -> int:
    """Map a residue in [0, N) to its representative in (-N/2, N/2]."""
    v = int(v) % modulus
    return v - modulus if v > modulus // 2 else v


def encode_int(k: int, params: FixedPointParams) -> int:
    """Place an already-scaled signed integer into the ring."""
    return int(k) % params.modulus


def encode(x: float, params: FixedPointParams) -> int:
    if not math.isfinite(x) or abs(x) >= 2.0 ** params.int_bits:
        raise RangeError(f"{x!r} is outside the representable range +-2^{params.int_bits}")
    # x * 2^f is exact in binary floating point, so round() sees the true value
    k = round(math.ldexp(float(x), params.frac_bits))
    return k % params.modulus


def decode(v: int, params: FixedPointParams) -> float:
    k = signed(v, params.modulus)
    if abs(k) >= params.value_bound:
        raise CorruptionError(f"residue with {abs(k).bit_length()} magnitude bits is not a valid encoding")
    return _ldexp_int(k, -params.frac_bits)


def decode_scaled(v: int, params: FixedPointParams, frac_bits: int) -> float:
    """Decode a residue that carries an arbitrary scale 2**frac_bits (no range check)."""
    return _ldexp_int(signed(v, params.modulus), -frac_bits)


def product_scale_correction(raw_product: int, params: FixedPointParams) -> int:
    """Floor-shift a double-scale product back to scale 2**frac_bits."""
    k = signed(raw_product, params.modulus)
    if abs(k) >= params.value_bound << params.frac_bits:
        raise RangeError("product exceeds the representable range")
    return (k >> params.frac_bits) % params.modulus


def _ldexp_int(k: int, shift: int) -> float:
    # math.ldexp(float(k)) would round twice for huge k; go through the exact ratio
    if abs(k) < (1 << 53):
        return math.ldexp(float(k), shift)
    if shift >= 0:
        return float(k << shift)
    return k / (1 << -shift)
