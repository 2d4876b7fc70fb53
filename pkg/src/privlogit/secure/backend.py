"""Secure-arithmetic contract and the linear-algebra kernels built on it.

A backend hands out opaque handles (ciphertexts for the two-server backend,
ring residues for the reference backend) that all carry fixed-point scale
2**frac_bits unless stated otherwise.  The kernels below only use the
elementary operations, so both backends execute the same operation sequence
and their counters agree.
"""
from __future__ import annotations

import enum
from typing import List, Optional, Sequence

from ..core import NotPositiveDefinite
from ..fixedpoint import FixedPointParams, decode, decode_scaled, encode, signed
from .counters import OpCounters


class SecureEvalError(Exception):
    pass


class DomainError(SecureEvalError, ValueError):
    """Division or square root requested on a non-positive operand."""


class ProtocolError(SecureEvalError):
    pass


class OpKind(enum.IntEnum):
    """Blinded-exchange kinds; serialised as one byte on the wire."""

    MUL = 1
    TRUNCATE = 2
    RECIPROCAL = 3
    INVSQRT = 4
    SIGN = 5
    REVEAL = 6


Matrix = List[List[Optional[object]]]


class SecureBackend:
    """Elementary secure ops (subclass hooks prefixed with ``_``) plus kernels."""

    def __init__(self, params: FixedPointParams):
        self.params = params
        self.counters = OpCounters()
        f, i, s = params.frac_bits, params.int_bits, params.stat_sec_bits
        # working precision for reciprocals and inverse square roots
        self.wide_bits = 2 * f + s + i
        headroom = 2 * (i + f) + 2 * self.wide_bits + 2 * s + 8
        if headroom >= params.modulus.bit_length():
            raise ValueError(f"modulus needs more than {headroom} bits for this fixed-point layout")

    # -- subclass hooks ---------------------------------------------------
    def _encrypt(self, v: int):
        raise NotImplementedError

    def _add(self, a, b):
        raise NotImplementedError

    def _sub(self, a, b):
        raise NotImplementedError

    def _scalar_mul(self, a, k: int):
        raise NotImplementedError

    def _add_plain(self, a, k: int):
        raise NotImplementedError

    def _mul(self, a, b):
        """Truncated fixed-point product."""
        raise NotImplementedError

    def _truncate(self, a, shift: int):
        raise NotImplementedError

    def _div(self, a, b):
        raise NotImplementedError

    def _sqrt(self, a):
        raise NotImplementedError

    def _sign(self, a) -> bool:
        raise NotImplementedError

    def _reveal(self, a) -> int:
        raise NotImplementedError

    def open(self, a) -> int:
        """Test-only decryption of a handle to its ring residue."""
        raise NotImplementedError

    # -- elementary contract ------------------------------------------------
    def encrypt_int(self, v: int):
        self.counters.encryptions += 1
        return self._encrypt(int(v) % self.params.modulus)

    def encrypt(self, x: float):
        return self.encrypt_int(encode(x, self.params))

    def add(self, a, b):
        self.counters.adds += 1
        return self._add(a, b)

    def sub(self, a, b):
        self.counters.subs += 1
        return self._sub(a, b)

    def scalar_mul(self, a, k: int):
        self.counters.scalar_muls += 1
        return self._scalar_mul(a, int(k) % self.params.modulus)

    def add_plain(self, a, k: int):
        self.counters.adds += 1
        return self._add_plain(a, int(k) % self.params.modulus)

    def mul(self, a, b):
        c = self.counters
        c.sec_muls += 1
        c.truncates += 1
        c.rounds += 2
        return self._mul(a, b)

    def truncate(self, a, shift: Optional[int] = None):
        c = self.counters
        c.truncates += 1
        c.rounds += 1
        return self._truncate(a, self.params.frac_bits if shift is None else shift)

    def div(self, a, b):
        c = self.counters
        c.divs += 1
        c.truncates += 1
        c.rounds += 3
        return self._div(a, b)

    def sqrt(self, a):
        c = self.counters
        c.sqrts += 1
        c.truncates += 1
        c.rounds += 3
        return self._sqrt(a)

    def sign(self, a) -> bool:
        """True iff the handle holds a strictly positive value (one leaked bit)."""
        self.counters.signs += 1
        self.counters.rounds += 1
        return self._sign(a)

    def reveal(self, a) -> int:
        """Blinded decryption towards Server A; returns the signed residue."""
        self.counters.reveals += 1
        self.counters.rounds += 1
        return self._reveal(a)

    def reveal_value(self, a, frac_bits: Optional[int] = None) -> float:
        f = self.params.frac_bits if frac_bits is None else frac_bits
        return decode_scaled(self.reveal(a), self.params, f)

    def open_value(self, a) -> float:
        return decode(self.open(a), self.params)

    # -- vectors and matrices -------------------------------------------------
    def encrypt_vector(self, xs) -> list:
        return [self.encrypt(float(x)) for x in xs]

    def encrypt_matrix(self, a) -> Matrix:
        return [[self.encrypt(float(v)) for v in row] for row in a]

    def open_matrix(self, m: Matrix):
        import numpy as np

        p = len(m)
        out = np.zeros((p, len(m[0])))
        for i, row in enumerate(m):
            for j, h in enumerate(row):
                if h is not None:
                    out[i, j] = self.open_value(h)
        return out

    def open_vector(self, v):
        import numpy as np

        return np.array([self.open_value(h) for h in v])

    def sum(self, handles: Sequence):
        acc = handles[0]
        for h in handles[1:]:
            acc = self.add(acc, h)
        return acc

    # -- kernels --------------------------------------------------------------
    def cholesky(self, a: Matrix) -> Matrix:
        """Encrypted textbook Cholesky of a positive-definite matrix.

        Reads the lower triangle of ``a``.  Each pivot is sign-checked against a
        public floor of 2^-(f/2) before its square root, so a singular input
        cannot pass on rounding noise; a pivot below it raises NotPositiveDefinite.
        """
        self.counters.choleskys += 1
        p = len(a)
        floor = 1 << (self.params.frac_bits - self.params.frac_bits // 2)
        l: Matrix = [[None] * p for _ in range(p)]
        for j in range(p):
            s = a[j][j]
            for k in range(j):
                s = self.sub(s, self.mul(l[j][k], l[j][k]))
            if not self.sign(self.add_plain(s, -floor)):
                raise NotPositiveDefinite(f"pivot {j} is not positive")
            l[j][j] = self.sqrt(s)
            for i in range(j + 1, p):
                t = a[i][j]
                for k in range(j):
                    t = self.sub(t, self.mul(l[i][k], l[j][k]))
                l[i][j] = self.div(t, l[j][j])
        return l

    def back_substitute(self, l: Matrix, g: Sequence) -> list:
        """Solve (L L') x = g: forward substitution, then backward."""
        self.counters.back_substitutions += 1
        p = len(l)
        if len(g) != p:
            raise ValueError(f"vector of length {len(g)} for a {p}x{p} factor")
        z = [None] * p
        for i in range(p):
            t = g[i]
            for k in range(i):
                t = self.sub(t, self.mul(l[i][k], z[k]))
            z[i] = self.div(t, l[i][i])
        x = [None] * p
        for i in reversed(range(p)):
            t = z[i]
            for k in range(i + 1, p):
                t = self.sub(t, self.mul(l[k][i], x[k]))
            x[i] = self.div(t, l[i][i])
        return x

    def invert(self, l: Matrix) -> Matrix:
        """(L L')^{-1} from a Cholesky factor.

        Computes M = L^{-1} by forward substitution, exploiting the public zero
        pattern of the identity, then forms M' M.  The result is symmetric; both
        triangles reference the same handles.
        """
        self.counters.inversions += 1
        p = len(l)
        one = self.encrypt(1.0)
        m: Matrix = [[None] * p for _ in range(p)]
        for j in range(p):
            m[j][j] = self.div(one, l[j][j])
            for i in range(j + 1, p):
                t = None
                for k in range(j, i):
                    prod = self.mul(l[i][k], m[k][j])
                    t = prod if t is None else self.add(t, prod)
                # M[i][j] = -(sum) / L[i][i]
                m[i][j] = self.div(self.scalar_mul(t, -1), l[i][i])
        inv: Matrix = [[None] * p for _ in range(p)]
        for i in range(p):
            for j in range(i, p):
                acc = None
                for k in range(j, p):
                    prod = self.mul(m[k][i], m[k][j])
                    acc = prod if acc is None else self.add(acc, prod)
                inv[i][j] = acc
                inv[j][i] = acc
        return inv

    def matvec_plain(self, m: Matrix, v_encoded: Sequence[int]) -> list:
        """Enc(M) times a plaintext encoded vector; result carries double scale."""
        out = []
        for row in m:
            acc = None
            for h, k in zip(row, v_encoded):
                if k % self.params.modulus == 0:
                    continue
                term = self.scalar_mul(h, k)
                acc = term if acc is None else self.add(acc, term)
            if acc is None:
                acc = self.encrypt_int(0)
            out.append(acc)
        return out


def signed_residue(v: int, params: FixedPointParams) -> int:
    return signed(v, params.modulus)
