"""Party actors and session driver for the secure fitting protocols.

Roles: S data-holding nodes, Server A (ciphertext holder and aggregator) and
Server B (key holder).  Server A owns the iteration loop.  At round t it
broadcasts beta_t, the nodes answer with encrypted local shares evaluated at
beta_t, A tests convergence of the aggregated likelihood against round t-1
and, if not converged, computes the next step.  This reproduces the plaintext
optimizers' iteration counts exactly.

The protocol-specific arithmetic lives in small functions (setup_once,
secure_convergence_check, ...) that work on any SecureBackend, so they can be
exercised on the reference backend as well.
"""
from __future__ import annotations

import enum
import hashlib
import json
import random
import threading
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .. import paillier
from ..core import (ConfigurationError, Dataset, Diverged, ModelConfig, NotPositiveDefinite,
                    approx_hessian, gradient, hessian, log_likelihood)
from ..fixedpoint import FixedPointParams, encode
from ..secure.backend import SecureBackend
from ..secure.counters import OpCounters
from ..secure.twoserver import KeyHolder, TwoServerBackend
from . import wire
from .transport import (DEFAULT_TIMEOUT, FOREVER, Endpoint, InProcHub, StashingEndpoint, TcpClientEndpoint,
                        TcpHubEndpoint, TransportError)
from .wire import SERVER_A, SERVER_B, Envelope, MsgType, PartyId, Reader, Role, WireError, Writer

MIN_NODES = 2
MAX_NODES = 64


class Protocol(str, enum.Enum):
    PRIVLOGIT_HESSIAN = "privlogit-hessian"
    PRIVLOGIT_LOCAL = "privlogit-local"
    SECURE_NEWTON = "secure-newton"


class AbortCode(enum.IntEnum):
    CONFIG_MISMATCH = 1
    NOT_POSITIVE_DEFINITE = 2
    DIVERGED = 3
    TRANSPORT = 4
    INTERNAL = 5


class ProtocolAbort(Exception):
    def __init__(self, reason: str, code: AbortCode = AbortCode.INTERNAL, party: Optional[PartyId] = None):
        super().__init__(reason)
        self.reason = reason
        self.code = code
        self.party = party


@dataclass(frozen=True)
class SessionConfig:
    """Parameters every party must agree on (checked by hash in the handshake)."""

    s_nodes: int
    protocol: Protocol = Protocol.PRIVLOGIT_HESSIAN
    lam: float = 0.0
    tol: float = 1e-6
    max_iter: int = 500
    key_bits: int = 1024
    frac_bits: int = 32
    int_bits: int = 64
    stat_sec_bits: int = 40
    seed: int = 0
    # local to each process, not part of the agreement
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if not MIN_NODES <= int(self.s_nodes) <= MAX_NODES:
            raise ConfigurationError(f"node count must be in [{MIN_NODES}, {MAX_NODES}], got {self.s_nodes}")
        if not self.tol > 0:
            raise ConfigurationError(f"tol must be > 0, got {self.tol}")
        if not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if int(self.max_iter) < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.key_bits not in paillier.ALLOWED_KEY_BITS:
            raise ConfigurationError(f"key_bits must be one of {paillier.ALLOWED_KEY_BITS}")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if not self.timeout > 0:
            raise ConfigurationError("timeout must be > 0")

    def agreed_fields(self) -> dict:
        return {
            "s_nodes": int(self.s_nodes), "protocol": self.protocol.value, "lam": float(self.lam),
            "tol": float(self.tol), "max_iter": int(self.max_iter), "key_bits": int(self.key_bits),
            "frac_bits": int(self.frac_bits), "int_bits": int(self.int_bits),
            "stat_sec_bits": int(self.stat_sec_bits), "seed": int(self.seed),
        }

    def digest(self) -> bytes:
        blob = json.dumps(self.agreed_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()

    def session_id(self) -> bytes:
        return hashlib.sha256(b"session" + self.digest()).digest()[:16]

    def fixed_point(self, modulus: int) -> FixedPointParams:
        return FixedPointParams(modulus=int(modulus), frac_bits=self.frac_bits,
                                int_bits=self.int_bits, stat_sec_bits=self.stat_sec_bits)

    def model_config(self) -> ModelConfig:
        return ModelConfig(lam=self.lam, tol=self.tol, max_iter=self.max_iter)

    def party_rng(self, party: PartyId) -> random.Random:
        return random.Random(f"{int(self.seed)}/{party}")


@dataclass
class RoundRecord:
    index: int
    seconds: float
    counters: OpCounters
    updated: bool


@dataclass
class NodeStats:
    encryptions: int = 0
    scalar_muls: int = 0
    adds: int = 0
    seconds: float = 0.0


@dataclass
class ProtocolTrace:
    protocol: str
    iterations: int
    converged: bool
    beta: np.ndarray
    beta_trace: List[np.ndarray]
    handshake_seconds: float
    setup_seconds: float
    total_seconds: float
    counters: OpCounters
    setup_counters: OpCounters
    rounds: List[RoundRecord]
    bytes_per_pair: Dict[str, int] = field(default_factory=dict)
    node_stats: Dict[str, NodeStats] = field(default_factory=dict)

    @property
    def iteration_seconds(self) -> List[float]:
        return [r.seconds for r in self.rounds if r.updated]

    @property
    def iteration_counters(self) -> List[OpCounters]:
        """Center-side counter deltas of the rounds that produced an update."""
        return [r.counters for r in self.rounds if r.updated]


# -- protocol arithmetic on a backend -----------------------------------------

def upper_triangle(m: np.ndarray) -> List[float]:
    p = m.shape[0]
    return [float(m[i, j]) for i in range(p) for j in range(i, p)]


def aggregate_neg_hessian(backend: SecureBackend, shares: Sequence[Sequence], lam: float, p: int):
    """Enc(lam*I - sum_j H_j) from per-node upper-triangle shares of H_j."""
    if any(len(s) != p * (p + 1) // 2 for s in shares):
        raise ProtocolAbort("Hessian share of the wrong length")
    lam_enc = encode(lam, backend.params)
    a = [[None] * p for _ in range(p)]
    idx = 0
    for i in range(p):
        for j in range(i, p):
            v = backend.scalar_mul(backend.sum([s[idx] for s in shares]), -1)
            if i == j and lam_enc:
                v = backend.add_plain(v, lam_enc)
            a[i][j] = a[j][i] = v
            idx += 1
    return a


def setup_once(parts: Sequence[Dataset], lam: float, backend: SecureBackend):
    """Aggregate the nodes' constant Hessian bounds and factor the negation once.

    Returns the encrypted lower-triangular factor L with L L' = -H~.
    """
    if len(parts) < 1:
        raise ValueError("need at least one node")
    p = parts[0].p
    shares = [[backend.encrypt(v) for v in upper_triangle(approx_hessian(d, 0.0))] for d in parts]
    a = aggregate_neg_hessian(backend, shares, lam, p)
    try:
        return backend.cholesky(a)
    except NotPositiveDefinite as exc:
        raise ProtocolAbort(f"aggregated Hessian bound is not invertible ({exc}): increase lambda or check rank",
                            AbortCode.NOT_POSITIVE_DEFINITE) from exc


def tolerance_fraction(tol: float) -> Fraction:
    frac = Fraction(tol).limit_denominator(10 ** 12)
    if frac <= 0:
        raise ConfigurationError(f"tolerance {tol} is too small to represent")
    return frac


def secure_convergence_check(l_enc_curr, l_enc_prev, tol: float, backend: SecureBackend,
                             absolute: bool = False) -> bool:
    """True iff |l_curr - l_prev| / |l_prev| < tol, decided from one sign bit.

    Evaluates d = num*(-l_prev) - den*(l_curr - l_prev) with tol = num/den;
    valid when l_prev < 0.  Without ``absolute`` the change is assumed
    non-negative (monotone ascent).  With it, |l_curr - l_prev| is formed first
    by a sign test and a conditional negation, costing one more sign bit.
    """
    if l_enc_prev is None:
        return False
    frac = tolerance_fraction(tol)
    diff = backend.sub(l_enc_curr, l_enc_prev)
    if absolute and not backend.sign(diff):
        diff = backend.scalar_mul(diff, -1)
    d = backend.sub(backend.scalar_mul(l_enc_prev, -frac.numerator), backend.scalar_mul(diff, frac.denominator))
    return backend.sign(d)


# -- payload helpers ------------------------------------------------------------

def _ct_ints(cts) -> List[int]:
    return [int(c.c) for c in cts]


def _read_cts(payload: bytes, pk: paillier.PublicKey, expect: Optional[int] = None) -> list:
    r = Reader(payload)
    vals = r.vector()
    r.done()
    if expect is not None and len(vals) != expect:
        raise WireError(f"expected {expect} ciphertexts, got {len(vals)}")
    nsq = int(pk.nsquare)
    for v in vals:
        if not 0 < v < nsq:
            raise WireError("ciphertext outside Z_{n^2}")
    return [paillier.Ciphertext(v, pk) for v in vals]


def abort_payload(code: AbortCode, reason: str) -> bytes:
    return Writer().u8(int(code)).blob(reason.encode("utf-8", "replace")).getvalue()


def parse_abort(env: Envelope) -> ProtocolAbort:
    try:
        r = Reader(env.payload)
        code = AbortCode(r.u8())
        reason = r.blob().decode("utf-8", "replace")
    except (WireError, ValueError):
        code, reason = AbortCode.INTERNAL, "abort with unreadable payload"
    return ProtocolAbort(f"{env.sender} aborted: {reason}", code, env.sender)


class _Party:
    party: PartyId

    def __init__(self, config: SessionConfig, endpoint: Endpoint):
        self.config = config
        self.ep = endpoint
        self.session = config.session_id()
        self.rng = config.party_rng(endpoint.party)

    def _send(self, to: PartyId, mtype: MsgType, payload: bytes = b""):
        self.ep.send(Envelope(self.session, self.ep.party, to, mtype, payload))

    def _guarded(self, body):
        """Run body; on failure tell Server A (unless A caused it) and re-raise."""
        try:
            body()
        except ProtocolAbort as exc:
            if exc.party != SERVER_A:
                self._try_abort(exc.code, exc.reason)
            raise
        except (TransportError, WireError) as exc:
            self._try_abort(AbortCode.TRANSPORT, str(exc))
            raise ProtocolAbort(f"{self.ep.party}: {exc}", AbortCode.TRANSPORT) from exc
        except Exception as exc:
            self._try_abort(AbortCode.INTERNAL, f"{type(exc).__name__}: {exc}")
            raise

    def _try_abort(self, code: AbortCode, reason: str):
        try:
            self._send(SERVER_A, MsgType.ABORT, abort_payload(code, f"{self.ep.party}: {reason}"))
        except Exception:  # the link itself may be gone
            pass

    def _recv(self, timeout: Optional[float] = None) -> Envelope:
        env = self.ep.recv(timeout)
        if env.session != self.session:
            raise ProtocolAbort(f"{self.ep.party}: frame from a different session", AbortCode.CONFIG_MISMATCH)
        if env.msg_type == MsgType.ABORT:
            raise parse_abort(env)
        return env


class NodeParty(_Party):
    """One data-holding organisation; sees only its own rows and public outputs."""

    def __init__(self, index: int, data: Dataset, config: SessionConfig, endpoint: Endpoint):
        super().__init__(config, endpoint)
        if endpoint.party != wire.node(index):
            raise ValueError("endpoint does not belong to this node")
        self.index = index
        self.data = data
        self.stats = NodeStats()
        self.final_beta: Optional[np.ndarray] = None
        self.pk: Optional[paillier.PublicKey] = None

    def _enc(self, x: float) -> paillier.Ciphertext:
        self.stats.encryptions += 1
        return paillier.encrypt(self.pk, encode(x, self.params) % int(self.pk.n), self.rng)

    def _enc_all(self, xs) -> List[int]:
        return [int(self._enc(float(v)).c) for v in xs]

    def run(self):
        self._guarded(self._run)

    def _run(self):
        proto = self.config.protocol
        self._send(SERVER_A, MsgType.HELLO, Writer().raw(self.config.digest()).u16(self.data.p).getvalue())
        ack = self._recv()
        if ack.msg_type != MsgType.CONFIG_ACK:
            raise ProtocolAbort(f"{self.ep.party}: expected ConfigAck, got {ack.msg_type.name}")
        self.pk = paillier.public_key_from_bytes(Reader(ack.payload).blob())
        self.params = self.config.fixed_point(int(self.pk.n))
        n = int(self.pk.n)
        t0 = time.perf_counter()
        if proto != Protocol.SECURE_NEWTON:
            tri = upper_triangle(approx_hessian(self.data, 0.0))
            self._send(SERVER_A, MsgType.LOCAL_HESSIAN, Writer().vector(self._enc_all(tri)).getvalue())
        self.stats.seconds += time.perf_counter() - t0
        inv = None
        while True:
            # idle until Server A speaks: its setup may legitimately take long
            env = self._recv(FOREVER)
            t0 = time.perf_counter()
            if env.msg_type == MsgType.INV_HESSIAN_BROADCAST:
                r = Reader(env.payload)
                inv = [[paillier.Ciphertext(v, self.pk) for v in row] for row in r.matrix()]
                r.done()
            elif env.msg_type == MsgType.BETA_BROADCAST:
                r = Reader(env.payload)
                r.u32()
                beta = np.array([v / self.params.scale for v in r.vector(signed=True)])
                r.done()
                if beta.shape[0] != self.data.p:
                    raise ProtocolAbort(f"{self.ep.party}: coefficient vector of the wrong length")
                g = gradient(self.data, beta, 0.0)
                if proto == Protocol.SECURE_NEWTON:
                    h = upper_triangle(hessian(self.data, beta, 0.0))
                    self._send(SERVER_A, MsgType.LOCAL_HESSIAN, Writer().vector(self._enc_all(h)).getvalue())
                if proto == Protocol.PRIVLOGIT_LOCAL:
                    if inv is None:
                        raise ProtocolAbort(f"{self.ep.party}: coefficients arrived before the inverse")
                    ks = [encode(float(v), self.params) % n for v in g]
                    out = []
                    for row in inv:
                        acc = None
                        for c, k in zip(row, ks):
                            if k == 0:
                                continue
                            term = paillier.scalar_mul(self.pk, c, k)
                            self.stats.scalar_muls += 1
                            acc = term if acc is None else paillier.add_ct(self.pk, acc, term)
                            self.stats.adds += 1
                        acc = paillier.encrypt(self.pk, 0, self.rng) if acc is None else paillier.rerandomize(
                            self.pk, acc, self.rng)
                        out.append(int(acc.c))
                    self._send(SERVER_A, MsgType.LOCAL_NEWTON_STEP, Writer().vector(out).getvalue())
                else:
                    self._send(SERVER_A, MsgType.LOCAL_GRADIENT, Writer().vector(self._enc_all(g)).getvalue())
                l_share = log_likelihood(self.data, beta, 0.0)
                self._send(SERVER_A, MsgType.LOCAL_LOGLIK, Writer().vector(self._enc_all([l_share])).getvalue())
            elif env.msg_type == MsgType.CONVERGED_NOTICE:
                r = Reader(env.payload)
                r.u8()
                r.u32()
                self.final_beta = np.array([v / self.params.scale for v in r.vector(signed=True)])
                return
            else:
                raise ProtocolAbort(f"{self.ep.party}: unexpected {env.msg_type.name}")
            self.stats.seconds += time.perf_counter() - t0


class KeyHolderParty(_Party):
    """Server B: generates the key pair and answers blinded requests."""

    def __init__(self, config: SessionConfig, endpoint: Endpoint, keypair: Optional[paillier.KeyPair] = None,
                 record_transcript: bool = False):
        super().__init__(config, endpoint)
        self.keypair = keypair
        self.record_transcript = record_transcript
        self.holder: Optional[KeyHolder] = None

    def run(self):
        self._guarded(self._run)

    def _run(self):
        if self.keypair is None:
            self.keypair = paillier.keygen(self.config.key_bits, self.rng)
        elif self.keypair.public.bits != self.config.key_bits:
            raise ProtocolAbort("server-b: supplied key does not match key_bits", AbortCode.CONFIG_MISMATCH)
        pk_bytes = paillier.public_key_to_bytes(self.keypair.public)
        self._send(SERVER_A, MsgType.HELLO, Writer().raw(self.config.digest()).blob(pk_bytes).getvalue())
        ack = self._recv()
        if ack.msg_type != MsgType.CONFIG_ACK:
            raise ProtocolAbort(f"server-b: expected ConfigAck, got {ack.msg_type.name}")
        self.holder = KeyHolder(self.keypair, rng=self.rng, record_transcript=self.record_transcript)
        while True:
            env = self._recv(FOREVER)
            if env.msg_type == MsgType.BLINDED_REQUEST:
                self._send(SERVER_A, MsgType.BLINDED_RESPONSE, self.holder.handle(env.payload))
            elif env.msg_type == MsgType.CONVERGED_NOTICE:
                return
            else:
                raise ProtocolAbort(f"server-b: unexpected {env.msg_type.name}")


class _BlindedChannel:
    """Routes the backend's blinded exchanges to Server B over the transport."""

    def __init__(self, center: "CenterParty"):
        self.center = center

    def exchange(self, request: bytes) -> bytes:
        c = self.center
        c._send(SERVER_B, MsgType.BLINDED_REQUEST, request)
        env = c.ep.recv_from(SERVER_B, MsgType.BLINDED_RESPONSE)
        if env.msg_type == MsgType.ABORT:
            raise parse_abort(env)
        return env.payload


class CenterParty(_Party):
    """Server A: aggregates ciphertexts and drives the iteration loop."""

    def __init__(self, config: SessionConfig, endpoint: Endpoint):
        super().__init__(config, StashingEndpoint(endpoint))
        self.nodes = [wire.node(j) for j in range(1, config.s_nodes + 1)]
        self.backend: Optional[TwoServerBackend] = None
        self._connected: List[PartyId] = []

    def _from(self, sender: PartyId, mtype: MsgType) -> Envelope:
        env = self.ep.recv_from(sender, mtype)
        if env.msg_type == MsgType.ABORT:
            raise parse_abort(env)
        if env.session != self.session:
            raise ProtocolAbort(f"frame from {sender} carries a foreign session id", AbortCode.CONFIG_MISMATCH)
        return env

    def _broadcast(self, mtype: MsgType, payload: bytes, include_b: bool = False):
        for nd in self.nodes:
            self._send(nd, mtype, payload)
        if include_b:
            self._send(SERVER_B, mtype, payload)

    def abort_all(self, code: AbortCode, reason: str):
        payload = abort_payload(code, reason)
        for party in self._connected:
            try:
                self._send(party, MsgType.ABORT, payload)
            except Exception:  # best effort while tearing down
                pass

    def run(self) -> ProtocolTrace:
        try:
            return self._run()
        except ProtocolAbort as exc:
            self.abort_all(exc.code, exc.reason)
            raise
        except Diverged as exc:
            self.abort_all(AbortCode.DIVERGED, str(exc))
            raise
        except (TransportError, WireError) as exc:
            self.abort_all(AbortCode.TRANSPORT, str(exc))
            raise ProtocolAbort(f"server-a: {exc}", AbortCode.TRANSPORT) from exc
        except Exception as exc:
            self.abort_all(AbortCode.INTERNAL, repr(exc))
            raise

    def _handshake(self):
        digest = self.config.digest()
        expected = set(self.nodes) | {SERVER_B}
        pk, p = None, None
        while expected:
            env = self.ep.recv()
            if env.msg_type == MsgType.ABORT:
                raise parse_abort(env)
            if env.msg_type != MsgType.HELLO or env.sender not in expected:
                raise ProtocolAbort(f"unexpected {env.msg_type.name} from {env.sender} during handshake")
            if env.session != self.session:
                self._connected.append(env.sender)
                raise ProtocolAbort(f"{env.sender} joined a different session", AbortCode.CONFIG_MISMATCH)
            self._connected.append(env.sender)
            expected.discard(env.sender)
            r = Reader(env.payload)
            if r._take(32) != digest:
                raise ProtocolAbort(f"configuration hash mismatch with {env.sender}", AbortCode.CONFIG_MISMATCH)
            if env.sender == SERVER_B:
                pk = paillier.public_key_from_bytes(r.blob())
            else:
                pj = r.u16()
                if p is not None and pj != p:
                    raise ProtocolAbort(f"{env.sender} has {pj} columns, others have {p}", AbortCode.CONFIG_MISMATCH)
                p = pj
            r.done()
        if pk.bits != self.config.key_bits:
            raise ProtocolAbort("server-b offered a key of the wrong size", AbortCode.CONFIG_MISMATCH)
        ack = Writer().blob(paillier.public_key_to_bytes(pk)).getvalue()
        self._send(SERVER_B, MsgType.CONFIG_ACK, ack)
        self._broadcast(MsgType.CONFIG_ACK, ack)
        return pk, p

    def _run(self) -> ProtocolTrace:
        cfg = self.config
        proto = cfg.protocol
        t_start = time.perf_counter()
        pk, p = self._handshake()
        self.pk = pk
        params = cfg.fixed_point(int(pk.n))
        be = TwoServerBackend(pk, _BlindedChannel(self), params, rng=self.rng)
        self.backend = be
        f = params.frac_bits
        t_setup = time.perf_counter()
        handshake_seconds = t_setup - t_start

        tri = p * (p + 1) // 2
        l_fac = inv = None
        if proto != Protocol.SECURE_NEWTON:
            shares = [_read_cts(self._from(nd, MsgType.LOCAL_HESSIAN).payload, pk, tri) for nd in self.nodes]
            a = aggregate_neg_hessian(be, shares, cfg.lam, p)
            try:
                l_fac = be.cholesky(a)
            except NotPositiveDefinite as exc:
                raise ProtocolAbort(f"aggregated Hessian bound is not invertible ({exc}): "
                                    "increase lambda or check rank", AbortCode.NOT_POSITIVE_DEFINITE) from exc
            if proto == Protocol.PRIVLOGIT_LOCAL:
                inv = be.invert(l_fac)
                payload = Writer().matrix([[int(h.c) for h in row] for row in inv]).getvalue()
                self._broadcast(MsgType.INV_HESSIAN_BROADCAST, payload)
        setup_counters = be.counters.copy()
        setup_seconds = time.perf_counter() - t_setup

        beta_int = [0] * p
        beta_trace = [np.zeros(p)]
        rounds: List[RoundRecord] = []
        l_prev = None
        converged = False
        iterations = 0
        t = 0
        while True:
            t0, c0 = time.perf_counter(), be.counters.copy()
            self._broadcast(MsgType.BETA_BROADCAST, Writer().u32(t).vector(beta_int, signed=True).getvalue())
            beta = np.array([v / params.scale for v in beta_int])
            h_shares, g_shares, step_shares, l_shares = [], [], [], []
            for nd in self.nodes:
                if proto == Protocol.SECURE_NEWTON:
                    h_shares.append(_read_cts(self._from(nd, MsgType.LOCAL_HESSIAN).payload, pk, tri))
                if proto == Protocol.PRIVLOGIT_LOCAL:
                    step_shares.append(_read_cts(self._from(nd, MsgType.LOCAL_NEWTON_STEP).payload, pk, p))
                else:
                    g_shares.append(_read_cts(self._from(nd, MsgType.LOCAL_GRADIENT).payload, pk, p))
                l_shares.append(_read_cts(self._from(nd, MsgType.LOCAL_LOGLIK).payload, pk, 1)[0])
            l_curr = be.sum(l_shares)
            if cfg.lam:
                l_curr = be.add_plain(l_curr, -encode(0.5 * cfg.lam * float(beta @ beta), params))
            if t >= 1 and secure_convergence_check(l_curr, l_prev, cfg.tol, be,
                                                   absolute=proto == Protocol.SECURE_NEWTON):
                converged = True
                rounds.append(RoundRecord(t, time.perf_counter() - t0, be.counters - c0, False))
                break
            if t == cfg.max_iter:
                rounds.append(RoundRecord(t, time.perf_counter() - t0, be.counters - c0, False))
                break

            if proto == Protocol.PRIVLOGIT_LOCAL:
                step = [be.sum([s[i] for s in step_shares]) for i in range(p)]
                if cfg.lam:
                    corr = be.matvec_plain(inv, [encode(cfg.lam * float(b), params) for b in beta])
                    step = [be.sub(s, c) for s, c in zip(step, corr)]
                # the step carries scale 2^(2f); floor it back to 2^f
                delta = [be.reveal(s) >> f for s in step]
            else:
                g = [be.sum([s[i] for s in g_shares]) for i in range(p)]
                if cfg.lam:
                    g = [be.add_plain(gi, -encode(cfg.lam * float(b), params)) for gi, b in zip(g, beta)]
                fac = l_fac
                if proto == Protocol.SECURE_NEWTON:
                    a = aggregate_neg_hessian(be, h_shares, cfg.lam, p)
                    try:
                        fac = be.cholesky(a)
                    except NotPositiveDefinite as exc:
                        raise Diverged(f"secure Newton step {t}: {exc}") from exc
                delta = [be.reveal(x) for x in be.back_substitute(fac, g)]
            beta_int = [b + d for b, d in zip(beta_int, delta)]
            bound = params.value_bound
            if any(abs(b) >= bound for b in beta_int):
                raise Diverged(f"coefficients left the fixed-point range at step {t}")
            iterations += 1
            beta_trace.append(np.array([v / params.scale for v in beta_int]))
            rounds.append(RoundRecord(t, time.perf_counter() - t0, be.counters - c0, True))
            l_prev = l_curr
            t += 1

        notice = Writer().u8(int(converged)).u32(iterations).vector(beta_int, signed=True).getvalue()
        self._broadcast(MsgType.CONVERGED_NOTICE, notice, include_b=True)
        return ProtocolTrace(
            protocol=proto.value, iterations=iterations, converged=converged,
            beta=np.array([v / params.scale for v in beta_int]), beta_trace=beta_trace,
            handshake_seconds=handshake_seconds, setup_seconds=setup_seconds,
            total_seconds=time.perf_counter() - t_start, counters=be.counters.copy(),
            setup_counters=setup_counters, rounds=rounds)


# -- session driver ---------------------------------------------------------------

@dataclass
class SessionResult:
    trace: ProtocolTrace
    center: CenterParty
    keyholder: KeyHolderParty
    nodes: List[NodeParty]
    envelopes: List[Envelope]


def _thread(target, errors: list, name: str) -> threading.Thread:
    def body():
        try:
            target()
        except BaseException as exc:  # surfaced by the driver
            errors.append((name, exc))

    th = threading.Thread(target=body, name=name, daemon=True)
    th.start()
    return th


def run_session(parts: Sequence[Dataset], config: SessionConfig, transport: str = "inproc",
                keypair: Optional[paillier.KeyPair] = None, listen: str = "127.0.0.1:0",
                record: bool = False, record_transcript: bool = False) -> SessionResult:
    """Run every party of one session in this process, one thread per party.

    ``transport`` is "inproc" (queues) or "tcp" (sockets on ``listen``).
    Raises ProtocolAbort or Diverged if the session aborts.
    """
    if len(parts) != config.s_nodes:
        raise ConfigurationError(f"{len(parts)} partitions for a session of {config.s_nodes} nodes")
    if len({d.p for d in parts}) != 1:
        raise ConfigurationError("all partitions must have the same columns")
    if transport == "inproc":
        hub = InProcHub(config.timeout, record=record)
        center_ep = hub.endpoint(SERVER_A)
        ledger = hub.ledger

        def connect(party):
            return hub.endpoint(party)
    elif transport == "tcp":
        center_ep = TcpHubEndpoint(listen, config.timeout, record=record)
        ledger = center_ep.ledger

        def connect(party):
            return TcpClientEndpoint(party, center_ep.address, config.timeout)
    else:
        raise ConfigurationError(f"unknown transport {transport!r}")

    errors: list = []
    center = CenterParty(config, center_ep)
    keyholder_box, node_box, threads = [], [], []

    def start_b():
        kh = KeyHolderParty(config, connect(SERVER_B), keypair, record_transcript)
        keyholder_box.append(kh)
        try:
            kh.run()
        finally:
            kh.ep.close()

    def start_node(j, data):
        def go():
            nd = NodeParty(j, data, config, connect(wire.node(j)))
            node_box.append(nd)
            try:
                nd.run()
            finally:
                nd.ep.close()
        return go

    threads.append(_thread(start_b, errors, "server-b"))
    for j, data in enumerate(parts, start=1):
        threads.append(_thread(start_node(j, data), errors, f"node{j}"))
    try:
        trace = center.run()
    finally:
        for th in threads:
            th.join(timeout=config.timeout)
        center_ep.close()
    if errors:
        name, exc = errors[0]
        raise ProtocolAbort(f"{name} failed: {exc}", getattr(exc, "code", AbortCode.INTERNAL)) from exc
    trace.bytes_per_pair = ledger.as_dict()
    nodes = sorted(node_box, key=lambda nd: nd.index)
    trace.node_stats = {str(nd.ep.party): nd.stats for nd in nodes}
    return SessionResult(trace, center, keyholder_box[0], nodes, list(ledger.log))


def _run(protocol: Protocol, parts, config: Optional[SessionConfig], **kw) -> ProtocolTrace:
    if config is None:
        config = SessionConfig(s_nodes=len(parts), protocol=protocol)
    else:
        config = replace(config, protocol=protocol)
    return run_session(parts, config, **kw).trace


def run_privlogit_hessian(parts: Sequence[Dataset], config: Optional[SessionConfig] = None, **kw) -> ProtocolTrace:
    """Constant-Hessian protocol: factor once, back-substitute at the center each step."""
    return _run(Protocol.PRIVLOGIT_HESSIAN, parts, config, **kw)


def run_privlogit_local(parts: Sequence[Dataset], config: Optional[SessionConfig] = None, **kw) -> ProtocolTrace:
    """Constant-Hessian protocol with the inverse shipped to nodes once."""
    return _run(Protocol.PRIVLOGIT_LOCAL, parts, config, **kw)


def run_secure_newton(parts: Sequence[Dataset], config: Optional[SessionConfig] = None, **kw) -> ProtocolTrace:
    """Baseline: exact Hessian aggregated, factored and solved every iteration."""
    return _run(Protocol.SECURE_NEWTON, parts, config, **kw)
