"""Plaintext fixed-point backend with the secure contract's exact semantics.

No cryptography: handles are ring residues.  Used as the oracle the two-server
backend is checked against, so truncation is the exact floor that the secure
subprotocol approximates to within one unit in the last place.
"""
from __future__ import annotations

import gmpy2

from ..fixedpoint import FixedPointParams, signed
from .backend import DomainError, SecureBackend

# 2^1024 - 105, odd; only its size matters for the ring
DEFAULT_MODULUS = (1 << 1024) - 105


class Plain:
    __slots__ = ("v",)

    def __init__(self, v: int):
        self.v = int(v)

    def __repr__(self):
        return f"Plain({self.v})"


class ReferenceBackend(SecureBackend):
    def __init__(self, params: FixedPointParams | None = None):
        super().__init__(params or FixedPointParams(modulus=DEFAULT_MODULUS))
        self._n = self.params.modulus

    def _s(self, h: Plain) -> int:
        return signed(h.v, self._n)

    def _encrypt(self, v):
        return Plain(v)

    def _add(self, a, b):
        return Plain((a.v + b.v) % self._n)

    def _sub(self, a, b):
        return Plain((a.v - b.v) % self._n)

    def _scalar_mul(self, a, k):
        return Plain(a.v * k % self._n)

    def _add_plain(self, a, k):
        return Plain((a.v + k) % self._n)

    def _truncate(self, a, shift):
        return Plain((self._s(a) >> shift) % self._n)

    def _mul(self, a, b):
        return self._truncate(Plain(self._s(a) * self._s(b) % self._n), self.params.frac_bits)

    def _div(self, a, b):
        den = self._s(b)
        if den <= 0:
            raise DomainError("division needs a strictly positive divisor")
        return Plain((self._s(a) << self.params.frac_bits) // den % self._n)

    def _sqrt(self, a):
        v = self._s(a)
        if v <= 0:
            raise DomainError("square root needs a strictly positive operand")
        return Plain(int(gmpy2.isqrt(v << self.params.frac_bits)) % self._n)

    def _sign(self, a):
        return self._s(a) > 0

    def _reveal(self, a):
        return self._s(a)

    def open(self, a):
        return a.v


def reference_backend(params: FixedPointParams | None = None) -> ReferenceBackend:
    return ReferenceBackend(params)
