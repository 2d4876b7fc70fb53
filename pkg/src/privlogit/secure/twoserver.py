"""Two-server secure arithmetic over Paillier ciphertexts.

Server A holds ciphertexts and the public key; Server B holds the private key.
Anything A cannot do homomorphically is done by a blinded exchange: A masks the
operand (additively with a uniform ring element, or multiplicatively with a
random positive integer), B decrypts the masked value, computes on it in the
clear, re-encrypts, and A strips the mask homomorphically.  B never decrypts an
unmasked protocol value; the only unmasked information it releases is the
one-bit answer of a sign query.

Request wire layout:  op(1) | shift(2) | count(2) | count x (len(4) | magnitude)
Response wire layout: op(1) | status(1) | count(2) | count x (len(4) | magnitude)
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Callable, List

import gmpy2
from gmpy2 import mpz

from .. import paillier
from ..fixedpoint import FixedPointParams, signed
from .backend import DomainError, OpKind, ProtocolError, SecureBackend

STATUS_OK = 0
STATUS_DOMAIN = 1
STATUS_MALFORMED = 2

# plaintext-returning kinds
_PLAIN_RESPONSE = {OpKind.SIGN, OpKind.REVEAL}


def encode_request(op: OpKind, shift: int, values) -> bytes:
    parts = [struct.pack(">BHH", int(op), shift, len(values))]
    parts.extend(paillier.int_to_bytes(v) for v in values)
    return b"".join(parts)


def decode_request(buf: bytes):
    if len(buf) < 5:
        raise ProtocolError("blinded request shorter than its header")
    op, shift, count = struct.unpack_from(">BHH", buf)
    try:
        op = OpKind(op)
    except ValueError as exc:
        raise ProtocolError(f"unknown op kind {op}") from exc
    values, off = [], 5
    for _ in range(count):
        v, off = paillier.int_from_bytes(buf, off)
        values.append(v)
    if off != len(buf):
        raise ProtocolError("trailing bytes in blinded request")
    return op, shift, values


def encode_response(op: OpKind, status: int, values) -> bytes:
    parts = [struct.pack(">BBH", int(op), status, len(values))]
    parts.extend(paillier.int_to_bytes(v) for v in values)
    return b"".join(parts)


def decode_response(buf: bytes):
    if len(buf) < 4:
        raise ProtocolError("blinded response shorter than its header")
    op, status, count = struct.unpack_from(">BBH", buf)
    values, off = [], 4
    for _ in range(count):
        v, off = paillier.int_from_bytes(buf, off)
        values.append(v)
    if off != len(buf):
        raise ProtocolError("trailing bytes in blinded response")
    return OpKind(op), status, values


@dataclass
class KeyHolder:
    """Server B: decrypts blinded values only, answers, re-encrypts."""

    keypair: paillier.KeyPair
    rng: random.Random = field(default_factory=random.SystemRandom)
    # (op kind, bit lengths of the decrypted blinded values) per request
    transcript: List[tuple] = field(default_factory=list)
    record_transcript: bool = True

    @property
    def public(self) -> paillier.PublicKey:
        return self.keypair.public

    def handle(self, request: bytes) -> bytes:
        try:
            op, shift, values = decode_request(request)
        except (ProtocolError, ValueError):
            return encode_response(OpKind.REVEAL, STATUS_MALFORMED, [])
        pk, sk = self.keypair.public, self.keypair.private
        n = int(pk.n)
        try:
            plain = [paillier.decrypt(sk, paillier.Ciphertext(v, pk)) for v in values]
        except paillier.PaillierError:
            return encode_response(op, STATUS_MALFORMED, [])
        if self.record_transcript:
            self.transcript.append((op, tuple(int(m).bit_length() for m in plain)))

        def enc(m):
            return int(paillier.encrypt_with_key(sk, m % n, self.rng).c)

        if op == OpKind.MUL:
            if len(plain) != 2:
                return encode_response(op, STATUS_MALFORMED, [])
            return encode_response(op, STATUS_OK, [enc(plain[0] * plain[1])])
        if op == OpKind.TRUNCATE:
            return encode_response(op, STATUS_OK, [enc(m >> shift) for m in plain])
        if op == OpKind.RECIPROCAL:
            out = []
            for m in plain:
                z = signed(m, n)
                if z <= 0:
                    return encode_response(op, STATUS_DOMAIN, [])
                out.append(enc(((1 << shift) + z // 2) // z))
            return encode_response(op, STATUS_OK, out)
        if op == OpKind.INVSQRT:
            out = []
            for m in plain:
                z = signed(m, n)
                if z <= 0:
                    return encode_response(op, STATUS_DOMAIN, [])
                out.append(enc(int(gmpy2.isqrt((1 << shift) // z))))
            return encode_response(op, STATUS_OK, out)
        if op == OpKind.SIGN:
            return encode_response(op, STATUS_OK, [1 if 0 < signed(m, n) else 0 for m in plain])
        if op == OpKind.REVEAL:
            return encode_response(op, STATUS_OK, plain)
        return encode_response(op, STATUS_MALFORMED, [])


class LoopbackChannel:
    """Direct request/response to an in-process KeyHolder (still byte-encoded)."""

    def __init__(self, keyholder: KeyHolder):
        self.keyholder = keyholder

    def exchange(self, request: bytes) -> bytes:
        return self.keyholder.handle(request)


class TwoServerBackend(SecureBackend):
    """Server A's side of the blinded-decryption protocols."""

    def __init__(self, pk: paillier.PublicKey, channel, params: FixedPointParams | None = None,
                 rng=None, debug_keypair: paillier.KeyPair | None = None):
        params = params or FixedPointParams(modulus=int(pk.n))
        if params.modulus != int(pk.n):
            raise ValueError("fixed-point modulus must equal the Paillier modulus")
        super().__init__(params)
        self.pk = pk
        self.channel = channel
        self.rng = rng or random.SystemRandom()
        self._debug_keypair = debug_keypair
        self._n = int(pk.n)
        sigma = params.stat_sec_bits
        # additive truncation masks live below 2^(bound + sigma) < n / 8
        self._trunc_bound = self._n.bit_length() - sigma - 4
        self._mask_bits = sigma

    @classmethod
    def loopback(cls, keypair: paillier.KeyPair, params: FixedPointParams | None = None,
                 seed: int | None = None, record_transcript: bool = True) -> "TwoServerBackend":
        """A backend wired directly to an in-process key holder (tests, benchmarks)."""
        rng_a = random.Random(seed) if seed is not None else random.SystemRandom()
        rng_b = random.Random(None if seed is None else seed + 1) if seed is not None else random.SystemRandom()
        holder = KeyHolder(keypair, rng=rng_b, record_transcript=record_transcript)
        backend = cls(keypair.public, LoopbackChannel(holder), params, rng=rng_a, debug_keypair=keypair)
        backend.keyholder = holder
        return backend

    # -- plumbing -----------------------------------------------------------
    def _exchange(self, op: OpKind, shift: int, cts: list) -> list:
        req = encode_request(op, shift, [int(c.c) for c in cts])
        resp = self.channel.exchange(req)
        rop, status, values = decode_response(resp)
        c = self.counters
        c.bytes_exchanged += len(req) + len(resp)
        c.decryptions_at_b += len(cts)
        if status == STATUS_DOMAIN:
            raise DomainError(f"{op.name}: key holder reports a non-positive operand")
        if status != STATUS_OK or rop != op:
            raise ProtocolError(f"{op.name}: key holder rejected the request (status {status})")
        if op in _PLAIN_RESPONSE:
            return values
        c.encryptions_at_b += len(values)
        return [paillier.Ciphertext(v, self.pk) for v in values]

    def _fresh(self, a):
        return paillier.rerandomize(self.pk, a, self.rng)

    def _positive_mask(self, bits: int) -> int:
        return self.rng.randrange(1, 1 << bits)

    # -- local homomorphic ops ---------------------------------------------
    def _encrypt(self, v):
        return paillier.encrypt(self.pk, v, self.rng)

    def _add(self, a, b):
        return paillier.add_ct(self.pk, a, b)

    def _sub(self, a, b):
        return paillier.sub_ct(self.pk, a, b)

    def _scalar_mul(self, a, k):
        return paillier.scalar_mul(self.pk, a, k)

    def _add_plain(self, a, k):
        return paillier.add_plain(self.pk, a, k)

    # -- blinded subprotocols -------------------------------------------------
    def _raw_mul(self, a, b):
        """Enc(x), Enc(y) -> Enc(x*y mod n) at the operands' combined scale."""
        pk, n = self.pk, self._n
        r = self.rng.randrange(n)
        s = self.rng.randrange(n)
        xa = paillier.add_plain(pk, self._fresh(a), r)
        yb = paillier.add_plain(pk, self._fresh(b), s)
        (z,) = self._exchange(OpKind.MUL, 0, [xa, yb])
        # (x+r)(y+s) - r*y - s*x - r*s
        z = paillier.sub_ct(pk, z, paillier.scalar_mul(pk, b, r))
        z = paillier.sub_ct(pk, z, paillier.scalar_mul(pk, a, s))
        return paillier.add_plain(pk, z, -(r * s))

    def _truncate(self, a, shift):
        if not 0 <= shift <= self._trunc_bound:
            raise ValueError(f"truncation shift {shift} out of range")
        pk = self.pk
        offset = 1 << self._trunc_bound
        mask = self.rng.getrandbits(self._trunc_bound + self._mask_bits)
        blinded = paillier.add_plain(pk, self._fresh(a), offset + mask)
        (z,) = self._exchange(OpKind.TRUNCATE, shift, [blinded])
        # floor((v + offset + mask) / 2^s) - floor(mask / 2^s) - offset / 2^s
        return paillier.add_plain(pk, z, -((mask >> shift) + (offset >> shift)))

    def _mul(self, a, b):
        return self._truncate(self._raw_mul(a, b), self.params.frac_bits)

    def _reciprocal(self, b):
        """Enc(B) with B > 0 -> Enc(2^(wide + f) / B), i.e. 1/b at scale 2^wide."""
        shift = self.wide_bits + self.params.frac_bits
        r = self._positive_mask(self._mask_bits)
        blinded = self._fresh(paillier.scalar_mul(self.pk, b, r))
        (w,) = self._exchange(OpKind.RECIPROCAL, shift, [blinded])
        return paillier.scalar_mul(self.pk, w, r)

    def _div(self, a, b):
        inv = self._reciprocal(b)
        return self._truncate(self._raw_mul(a, inv), self.wide_bits)

    def _sqrt(self, a):
        # B sees rho^2 * A and returns 2^wide * 2^(f/2) / (rho * sqrt(A))
        shift = 2 * self.wide_bits + self.params.frac_bits
        rho = self._positive_mask(self._mask_bits // 2)
        blinded = self._fresh(paillier.scalar_mul(self.pk, a, rho * rho))
        (w,) = self._exchange(OpKind.INVSQRT, shift, [blinded])
        inv_sqrt = paillier.scalar_mul(self.pk, w, rho)
        # sqrt(a) = a * (1/sqrt(a))
        return self._truncate(self._raw_mul(a, inv_sqrt), self.wide_bits)

    def _sign(self, a):
        r = self._positive_mask(self._mask_bits)
        blinded = self._fresh(paillier.scalar_mul(self.pk, a, r))
        (bit,) = self._exchange(OpKind.SIGN, 0, [blinded])
        return bit == 1

    def _reveal(self, a):
        mask = self.rng.randrange(self._n)
        blinded = paillier.add_plain(self.pk, self._fresh(a), mask)
        (z,) = self._exchange(OpKind.REVEAL, 0, [blinded])
        return signed(z - mask, self._n)

    def open(self, a):
        if self._debug_keypair is None:
            raise PermissionError("this backend has no debug key; Server A cannot decrypt")
        return paillier.decrypt(self._debug_keypair.private, a)
