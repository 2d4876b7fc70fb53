import random

import numpy as np
import pytest

from privlogit.core import NotPositiveDefinite, cholesky, solve_via_cholesky
from privlogit.fixedpoint import FixedPointParams, encode, signed
from privlogit.secure import DomainError, KeyHolder, OpKind, ReferenceBackend, TwoServerBackend
from privlogit.secure.counters import OpCounters
from privlogit.secure.twoserver import (STATUS_MALFORMED, decode_request, decode_response, encode_request,
                                        encode_response)

ULP = 2.0 ** -32


def spd(p, seed):
    a = np.random.default_rng(seed).normal(size=(p, p))
    return a @ a.T + p * np.eye(p)


@pytest.fixture(scope="module")
def pair(keypair):
    """(encrypted backend, reference backend) over the same ring."""
    enc = TwoServerBackend.loopback(keypair, seed=3)
    ref = ReferenceBackend(FixedPointParams(modulus=int(keypair.public.n)))
    return enc, ref


def both(pair, fn):
    enc, ref = pair
    return fn(enc), fn(ref)


class TestReferenceBackend:
    def setup_method(self):
        self.b = ReferenceBackend()

    def v(self, h):
        return self.b.open_value(h)

    def test_linear_ops(self):
        b = self.b
        x, y = b.encrypt(1.5), b.encrypt(-4.25)
        assert self.v(b.add(x, y)) == -2.75
        assert self.v(b.sub(x, y)) == 5.75
        assert self.v(b.scalar_mul(x, -3)) == -4.5
        assert self.v(b.add_plain(x, encode(2.0, b.params))) == 3.5

    def test_mul_is_floor(self):
        b = self.b
        tiny = b.encrypt_int(1)
        assert signed(b.open(b.mul(tiny, b.encrypt(-1.0))), b.params.modulus) == -1
        assert self.v(b.mul(b.encrypt(3.0), b.encrypt(-2.5))) == -7.5

    def test_div_sqrt(self):
        b = self.b
        assert self.v(b.div(b.encrypt(7.0), b.encrypt(2.0))) == 3.5
        assert self.v(b.div(b.encrypt(-7.0), b.encrypt(2.0))) == -3.5
        assert self.v(b.sqrt(b.encrypt(9.0))) == 3.0

    def test_domain_errors(self):
        b = self.b
        with pytest.raises(DomainError):
            b.div(b.encrypt(1.0), b.encrypt(0.0))
        with pytest.raises(DomainError):
            b.sqrt(b.encrypt(-1.0))

    def test_sign(self):
        b = self.b
        assert b.sign(b.encrypt(0.5))
        assert not b.sign(b.encrypt(-0.5))
        assert not b.sign(b.encrypt(-0.0))

    def test_reveal(self):
        assert self.b.reveal_value(self.b.encrypt(-6.125)) == -6.125


class TestKernelsOnReference:
    b = ReferenceBackend()

    def test_cholesky_hand_example(self):
        l = self.b.cholesky(self.b.encrypt_matrix([[4.0, 2.0], [2.0, 3.0]]))
        got = self.b.open_matrix(l)
        np.testing.assert_allclose(got, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-6)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            self.b.cholesky(self.b.encrypt_matrix([[1.0, 2.0], [2.0, 1.0]]))

    def test_back_substitute_identity(self):
        l = self.b.cholesky(self.b.encrypt_matrix(np.eye(2)))
        x = self.b.back_substitute(l, self.b.encrypt_vector([3.0, 4.0]))
        np.testing.assert_allclose(self.b.open_vector(x), [3.0, 4.0])

    def test_invert_hand_example(self):
        l = self.b.cholesky(self.b.encrypt_matrix([[4.0, 2.0], [2.0, 3.0]]))
        inv = self.b.open_matrix(self.b.invert(l))
        np.testing.assert_allclose(inv, [[0.375, -0.25], [-0.25, 0.5]], atol=1e-6)

    def test_invert_multiplies_back(self):
        a = spd(8, 1)
        inv = self.b.open_matrix(self.b.invert(self.b.cholesky(self.b.encrypt_matrix(a))))
        np.testing.assert_allclose(a @ inv, np.eye(8), atol=1e-2)

    @pytest.mark.parametrize("p", range(2, 13))
    def test_counter_formulas(self, p):
        b = ReferenceBackend()
        l = b.cholesky(b.encrypt_matrix(spd(p, p)))
        c = b.counters
        assert c.sqrts == p
        assert c.divs == p * (p - 1) // 2
        assert c.signs == p
        assert c.sec_muls == sum(j + (p - 1 - j) * j for j in range(p))
        assert c.choleskys == 1
        before = c.copy()
        b.back_substitute(l, b.encrypt_vector(np.ones(p)))
        d = b.counters - before
        assert (d.sec_muls, d.divs, d.back_substitutions) == (p * (p - 1), 2 * p, 1)


class TestBackendEquivalence:
    """Encrypted results decode to the reference results within 2 ulps."""

    @pytest.mark.parametrize("seed", range(5))
    def test_elementary_ops(self, pair, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(-50, 50, 2)
        pos = abs(b) + 0.5
        ops = [
            lambda be: be.mul(be.encrypt(a), be.encrypt(b)),
            lambda be: be.div(be.encrypt(a), be.encrypt(pos)),
            lambda be: be.sqrt(be.encrypt(pos)),
            lambda be: be.truncate(be.encrypt(a), 5),
            lambda be: be.add(be.encrypt(a), be.encrypt(b)),
            lambda be: be.scalar_mul(be.encrypt(a), 7),
        ]
        for op in ops:
            e, r = both(pair, lambda be: be.open_value(op(be)))
            assert abs(e - r) <= 2 * ULP, (e, r)

    def test_sign_and_reveal(self, pair):
        for x in [-3.0, -ULP, 0.0, ULP, 2.0]:
            e, r = both(pair, lambda be: be.sign(be.encrypt(x)))
            assert e == r
            e, r = both(pair, lambda be: be.reveal_value(be.encrypt(x)))
            assert e == r == x

    def test_domain_error_from_key_holder(self, pair):
        enc, _ = pair
        with pytest.raises(DomainError):
            enc.div(enc.encrypt(1.0), enc.encrypt(-2.0))
        with pytest.raises(DomainError):
            enc.sqrt(enc.encrypt(0.0))

    @pytest.mark.parametrize("p", [2, 5, 8])
    def test_kernels_agree(self, pair, p):
        a = spd(p, 10 + p)
        g = np.random.default_rng(p).normal(size=p)
        oracle_l = cholesky(a)
        oracle_x = solve_via_cholesky(oracle_l, g)
        oracle_inv = np.linalg.inv(a)
        for be in pair:
            l = be.cholesky(be.encrypt_matrix(a))
            np.testing.assert_allclose(be.open_matrix(l), oracle_l, atol=1e-3)
            x = be.back_substitute(l, be.encrypt_vector(g))
            np.testing.assert_allclose(be.open_vector(x), oracle_x, atol=1e-3)
            np.testing.assert_allclose(be.open_matrix(be.invert(l)), oracle_inv, atol=1e-3)

    def test_counters_identical(self, keypair):
        enc = TwoServerBackend.loopback(keypair, seed=5)
        ref = ReferenceBackend(FixedPointParams(modulus=int(keypair.public.n)))
        a = spd(4, 2)
        for be in (enc, ref):
            l = be.cholesky(be.encrypt_matrix(a))
            be.back_substitute(l, be.encrypt_vector(np.ones(4)))
            be.invert(l)
        assert enc.counters.op_counts() == ref.counters.op_counts()
        assert enc.counters.rounds == ref.counters.rounds


class TestKeyHolder:
    def test_request_codec(self):
        blob = encode_request(OpKind.TRUNCATE, 32, [5, 1 << 900])
        assert decode_request(blob) == (OpKind.TRUNCATE, 32, [5, 1 << 900])
        assert decode_response(encode_response(OpKind.SIGN, 0, [1])) == (OpKind.SIGN, 0, [1])

    def test_malformed_request(self, keypair):
        holder = KeyHolder(keypair, rng=random.Random(1))
        _, status, _ = decode_response(holder.handle(b"\x09\x00"))
        assert status == STATUS_MALFORMED

    def test_transcript_depends_only_on_shapes(self, keypair):
        """B's view for two different inputs: same op sequence, same bit-length bounds."""
        views = []
        for seed in (1, 2):
            be = TwoServerBackend.loopback(keypair, seed=seed)
            a = spd(3, seed) * (10 if seed == 2 else 1)
            l = be.cholesky(be.encrypt_matrix(a))
            be.back_substitute(l, be.encrypt_vector(np.random.default_rng(seed).normal(size=3)))
            views.append(be.keyholder.transcript)
        t1, t2 = views
        assert [op for op, _ in t1] == [op for op, _ in t2]
        n_bits = keypair.public.bits
        for (op, bits1), (_, bits2) in zip(t1, t2):
            assert len(bits1) == len(bits2)
            if op in (OpKind.MUL, OpKind.REVEAL):
                # full-ring masks: both views look uniform in Z_n
                assert min(bits1 + bits2) > n_bits - 64
            elif op == OpKind.TRUNCATE:
                bound = n_bits - 3
                assert max(bits1 + bits2) <= bound and min(bits1 + bits2) > bound - 64


class TestCounters:
    def test_arithmetic(self):
        a = OpCounters(sec_muls=3, rounds=6)
        b = OpCounters(sec_muls=1, rounds=2)
        assert (a - b).sec_muls == 2
        assert (a + b).rounds == 8
        assert "bytes_exchanged" not in a.op_counts()
