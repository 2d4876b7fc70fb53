"""Paillier cryptosystem, g = n + 1 variant.

Plaintexts are residues in [0, n); ciphertexts live in Z*_{n^2}.  Randomness is
always passed in by the caller (a ``random.Random``-like object), so a seeded
generator gives reproducible test runs and ``random.SystemRandom`` gives real
keys and ciphertexts.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

import gmpy2
from gmpy2 import mpz

ALLOWED_KEY_BITS = (1024, 2048, 3072)
_PRIME_ATTEMPTS = 10_000


class PaillierError(Exception):
    pass


class ParameterError(PaillierError, ValueError):
    pass


class MalformedCiphertext(PaillierError, ValueError):
    pass


class KeyMismatch(PaillierError):
    pass


@dataclass(frozen=True)
class PublicKey:
    n: int

    @property
    def nsquare(self):
        return self._nsquare

    @property
    def bits(self) -> int:
        return int(self.n).bit_length()

    def __post_init__(self):
        n = mpz(self.n)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "_nsquare", n * n)

    def __hash__(self):
        return hash(int(self.n))

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.n == other.n


@dataclass(frozen=True)
class PrivateKey:
    public: PublicKey
    p: int
    q: int

    def __post_init__(self):
        p, q = mpz(self.p), mpz(self.q)
        n = self.public.n
        if p * q != n:
            raise ParameterError("p * q does not match the public modulus")
        lam = gmpy2.lcm(p - 1, q - 1)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lambda_n", lam)
        object.__setattr__(self, "mu", gmpy2.invert(lam, n))
        # CRT precomputation for decryption and key-holder encryption
        object.__setattr__(self, "_psq", p * p)
        object.__setattr__(self, "_qsq", q * q)
        object.__setattr__(self, "_hp", gmpy2.invert(_l_func(gmpy2.powmod(n + 1, p - 1, p * p), p), p))
        object.__setattr__(self, "_hq", gmpy2.invert(_l_func(gmpy2.powmod(n + 1, q - 1, q * q), q), q))
        object.__setattr__(self, "_qinv_p", gmpy2.invert(q, p))
        object.__setattr__(self, "_qsq_inv_psq", gmpy2.invert(q * q, p * p))
        object.__setattr__(self, "_n_mod_phi_p", n % (p * (p - 1)))
        object.__setattr__(self, "_n_mod_phi_q", n % (q * (q - 1)))


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey


class Ciphertext:
    """An element of Z*_{n^2}, tagged with the key it belongs to."""

    __slots__ = ("c", "pk")

    def __init__(self, c, pk: PublicKey):
        self.c = mpz(c)
        self.pk = pk

    def __repr__(self):
        return f"Ciphertext(<{int(self.c).bit_length()} bits>)"

    def __eq__(self, other):
        return isinstance(other, Ciphertext) and self.c == other.c and self.pk == other.pk

    def __hash__(self):
        return hash(int(self.c))


def _l_func(u, n):
    return (u - 1) // n


def _random_prime(bits: int, rng) -> mpz:
    for _ in range(_PRIME_ATTEMPTS):
        # top two bits set so that the product has exactly 2*bits bits
        cand = mpz(rng.getrandbits(bits)) | (mpz(3) << (bits - 2)) | 1
        if gmpy2.is_prime(cand, 40):
            return cand
    raise PaillierError(f"no {bits}-bit prime found after {_PRIME_ATTEMPTS} attempts")


def keygen(bits: int = 2048, rng=None) -> KeyPair:
    if bits not in ALLOWED_KEY_BITS:
        raise ParameterError(f"key size {bits} not allowed; use one of {ALLOWED_KEY_BITS}")
    rng = rng or random.SystemRandom()
    half = bits // 2
    for _ in range(100):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != bits or gmpy2.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        pk = PublicKey(n)
        return KeyPair(pk, PrivateKey(pk, p, q))
    raise PaillierError("key generation failed after repeated attempts")


def random_unit(pk: PublicKey, rng) -> mpz:
    while True:
        r = mpz(rng.randrange(1, int(pk.n)))
        if gmpy2.gcd(r, pk.n) == 1:
            return r


def _check_plaintext(pk: PublicKey, m) -> mpz:
    m = mpz(m)
    if not 0 <= m < pk.n:
        raise ParameterError("plaintext must lie in [0, n)")
    return m


def encrypt(pk: PublicKey, m, rng) -> Ciphertext:
    m = _check_plaintext(pk, m)
    r = random_unit(pk, rng)
    nsq = pk.nsquare
    # (n+1)^m = 1 + m*n  (mod n^2)
    c = ((1 + m * pk.n) % nsq) * gmpy2.powmod(r, pk.n, nsq) % nsq
    return Ciphertext(c, pk)


def encrypt_with_key(sk: PrivateKey, m, rng) -> Ciphertext:
    """Encryption by the key holder; uses the factorisation to cut the r^n cost."""
    pk = sk.public
    m = _check_plaintext(pk, m)
    r = random_unit(pk, rng)
    psq, qsq = sk._psq, sk._qsq
    rp = gmpy2.powmod(r % psq, sk._n_mod_phi_p, psq)
    rq = gmpy2.powmod(r % qsq, sk._n_mod_phi_q, qsq)
    # CRT recombination mod n^2
    rn = (rq + qsq * ((rp - rq) * sk._qsq_inv_psq % psq)) % pk.nsquare
    c = ((1 + m * pk.n) % pk.nsquare) * rn % pk.nsquare
    return Ciphertext(c, pk)


def trivial_encrypt(pk: PublicKey, m) -> Ciphertext:
    """Deterministic (n+1)^m with r = 1.  Only for combining with a fresh ciphertext."""
    m = _check_plaintext(pk, m)
    return Ciphertext((1 + m * pk.n) % pk.nsquare, pk)


def _check_ciphertext(pk: PublicKey, c: Ciphertext):
    if c.pk != pk:
        raise KeyMismatch("ciphertext was produced under a different key")
    if not 0 < c.c < pk.nsquare or gmpy2.gcd(c.c, pk.n) != 1:
        raise MalformedCiphertext("value is not an element of Z*_{n^2}")


def decrypt(sk: PrivateKey, c: Ciphertext) -> int:
    pk = sk.public
    _check_ciphertext(pk, c)
    p, q = sk.p, sk.q
    mp = _l_func(gmpy2.powmod(c.c % sk._psq, p - 1, sk._psq), p) * sk._hp % p
    mq = _l_func(gmpy2.powmod(c.c % sk._qsq, q - 1, sk._qsq), q) * sk._hq % q
    return int(mq + q * ((mp - mq) * sk._qinv_p % p))


def decrypt_textbook(sk: PrivateKey, c: Ciphertext) -> int:
    """L(c^lambda mod n^2) * mu mod n, without CRT; kept as a cross-check."""
    pk = sk.public
    _check_ciphertext(pk, c)
    u = gmpy2.powmod(c.c, sk.lambda_n, pk.nsquare)
    return int(_l_func(u, pk.n) * sk.mu % pk.n)


def add_ct(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.pk != pk or b.pk != pk:
        raise KeyMismatch("operands were encrypted under different keys")
    return Ciphertext(a.c * b.c % pk.nsquare, pk)


def neg_ct(pk: PublicKey, a: Ciphertext) -> Ciphertext:
    if a.pk != pk:
        raise KeyMismatch("operand was encrypted under a different key")
    return Ciphertext(gmpy2.invert(a.c, pk.nsquare), pk)


def sub_ct(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    return add_ct(pk, a, neg_ct(pk, b))


def add_plain(pk: PublicKey, a: Ciphertext, m) -> Ciphertext:
    """Enc(x) -> Enc(x + m) without fresh randomness."""
    m = mpz(m) % pk.n
    return Ciphertext(a.c * ((1 + m * pk.n) % pk.nsquare) % pk.nsquare, pk)


def scalar_mul(pk: PublicKey, a: Ciphertext, k) -> Ciphertext:
    """Enc(x) -> Enc(k * x mod n).

    Residues in the upper half of Z_n are treated as negative scalars so the
    exponent stays short: c^(n-j) == (c^-1)^j.
    """
    if a.pk != pk:
        raise KeyMismatch("operand was encrypted under a different key")
    k = mpz(k) % pk.n
    if k > pk.n // 2:
        return Ciphertext(gmpy2.powmod(gmpy2.invert(a.c, pk.nsquare), pk.n - k, pk.nsquare), pk)
    return Ciphertext(gmpy2.powmod(a.c, k, pk.nsquare), pk)


def rerandomize(pk: PublicKey, a: Ciphertext, rng) -> Ciphertext:
    r = random_unit(pk, rng)
    return Ciphertext(a.c * gmpy2.powmod(r, pk.n, pk.nsquare) % pk.nsquare, pk)


# Serialization: 4-byte big-endian length, then big-endian magnitude.

def int_to_bytes(v) -> bytes:
    v = int(v)
    if v < 0:
        raise ValueError("only non-negative integers are length-prefix encoded")
    body = v.to_bytes((v.bit_length() + 7) // 8, "big")
    return len(body).to_bytes(4, "big") + body


def int_from_bytes(buf: bytes, offset: int = 0):
    if offset + 4 > len(buf):
        raise ValueError("truncated length prefix")
    length = int.from_bytes(buf[offset:offset + 4], "big")
    end = offset + 4 + length
    if end > len(buf):
        raise ValueError("truncated integer body")
    return int.from_bytes(buf[offset + 4:end], "big"), end


def public_key_to_bytes(pk: PublicKey) -> bytes:
    return int_to_bytes(pk.n)


def public_key_from_bytes(buf: bytes) -> PublicKey:
    n, _ = int_from_bytes(buf)
    return PublicKey(n)


def private_key_to_bytes(sk: PrivateKey) -> bytes:
    return int_to_bytes(sk.public.n) + int_to_bytes(sk.p) + int_to_bytes(sk.q)


def private_key_from_bytes(buf: bytes) -> KeyPair:
    n, off = int_from_bytes(buf)
    p, off = int_from_bytes(buf, off)
    q, _ = int_from_bytes(buf, off)
    pk = PublicKey(n)
    return KeyPair(pk, PrivateKey(pk, p, q))


def ciphertext_to_bytes(c: Ciphertext) -> bytes:
    return int_to_bytes(c.c)


def ciphertext_from_bytes(pk: PublicKey, buf: bytes) -> Ciphertext:
    c, _ = int_from_bytes(buf)
    ct = Ciphertext(c, pk)
    _check_ciphertext(pk, ct)
    return ct
