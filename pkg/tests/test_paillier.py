import random

import pytest

from privlogit import paillier as pl


@pytest.fixture(scope="module")
def kp(keypair):
    return keypair


@pytest.fixture
def rng():
    return random.Random(7)


class TestKeys:
    def test_sizes(self, kp):
        assert kp.public.bits == 1024
        assert kp.private.p * kp.private.q == kp.public.n

    def test_disallowed_size(self):
        with pytest.raises(pl.ParameterError):
            pl.keygen(512)

    def test_seeded_keygen_is_deterministic(self):
        a = pl.keygen(1024, random.Random(3))
        b = pl.keygen(1024, random.Random(3))
        assert a.public.n == b.public.n


class TestEncryption:
    def test_round_trip(self, kp, rng):
        for m in [0, 1, 12345, int(kp.public.n) - 1]:
            assert pl.decrypt(kp.private, pl.encrypt(kp.public, m, rng)) == m

    def test_crt_matches_textbook(self, kp, rng):
        for _ in range(20):
            c = pl.encrypt(kp.public, rng.randrange(int(kp.public.n)), rng)
            assert pl.decrypt(kp.private, c) == pl.decrypt_textbook(kp.private, c)

    def test_key_holder_encryption(self, kp, rng):
        c = pl.encrypt_with_key(kp.private, 99, rng)
        assert pl.decrypt(kp.private, c) == 99

    def test_probabilistic(self, kp, rng):
        assert pl.encrypt(kp.public, 5, rng) != pl.encrypt(kp.public, 5, rng)

    def test_plaintext_out_of_range(self, kp, rng):
        with pytest.raises(pl.ParameterError):
            pl.encrypt(kp.public, int(kp.public.n), rng)

    def test_malformed_ciphertext(self, kp):
        with pytest.raises(pl.MalformedCiphertext):
            pl.decrypt(kp.private, pl.Ciphertext(0, kp.public))
        with pytest.raises(pl.MalformedCiphertext):
            pl.decrypt(kp.private, pl.Ciphertext(kp.public.n, kp.public))

    def test_key_mismatch(self, kp, rng):
        other = pl.keygen(1024, random.Random(11))
        a = pl.encrypt(kp.public, 1, rng)
        b = pl.encrypt(other.public, 1, rng)
        with pytest.raises(pl.KeyMismatch):
            pl.add_ct(kp.public, a, b)


class TestHomomorphism:
    def test_random_trials(self, kp):
        """10^4 random trials of add, sub, scalar multiplication and add_plain."""
        pk, sk = kp.public, kp.private
        n = int(pk.n)
        rng = random.Random(1)
        for _ in range(2500):
            x, y, k = rng.randrange(n), rng.randrange(n), rng.randrange(n)
            cx, cy = pl.encrypt(pk, x, rng), pl.encrypt(pk, y, rng)
            assert pl.decrypt(sk, pl.add_ct(pk, cx, cy)) == (x + y) % n
            assert pl.decrypt(sk, pl.sub_ct(pk, cx, cy)) == (x - y) % n
            assert pl.decrypt(sk, pl.scalar_mul(pk, cx, k)) == x * k % n
            assert pl.decrypt(sk, pl.add_plain(pk, cx, k)) == (x + k) % n

    def test_negative_scalar(self, kp, rng):
        pk, sk = kp.public, kp.private
        c = pl.encrypt(pk, 10, rng)
        assert pl.decrypt(sk, pl.scalar_mul(pk, c, -3)) == int(pk.n) - 30

    def test_rerandomize(self, kp, rng):
        c = pl.encrypt(kp.public, 42, rng)
        d = pl.rerandomize(kp.public, c, rng)
        assert d != c and pl.decrypt(kp.private, d) == 42

    def test_trivial_encryption(self, kp):
        assert pl.decrypt(kp.private, pl.trivial_encrypt(kp.public, 17)) == 17


class TestSerialization:
    def test_int_codec(self):
        for v in [0, 1, 255, 256, 1 << 2000]:
            got, end = pl.int_from_bytes(pl.int_to_bytes(v))
            assert got == v and end == len(pl.int_to_bytes(v))

    def test_truncated(self):
        with pytest.raises(ValueError):
            pl.int_from_bytes(pl.int_to_bytes(1 << 100)[:-1])

    def test_keys_and_ciphertexts(self, kp, rng):
        pk2 = pl.public_key_from_bytes(pl.public_key_to_bytes(kp.public))
        assert pk2 == kp.public
        kp2 = pl.private_key_from_bytes(pl.private_key_to_bytes(kp.private))
        c = pl.encrypt(kp.public, 1234, rng)
        c2 = pl.ciphertext_from_bytes(kp.public, pl.ciphertext_to_bytes(c))
        assert pl.decrypt(kp2.private, c2) == 1234
