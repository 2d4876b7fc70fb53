"""Envelope framing and payload codecs.

Envelope header (28 bytes, big-endian):

    version(1) = 0x01 | session(16) | from: role(1) node(2) | to: role(1) node(2)
    | msg_type(1) | payload length(4)

followed by the payload.  Big integers are a 4-byte length plus big-endian
magnitude, with a trailing sign byte (0 = non-negative, 1 = negative) when the
value is signed.  Matrices are rows(2) | cols(2) | row-major entries.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .. import paillier

VERSION = 0x01
HEADER = struct.Struct(">B16sBHBHBI")
HEADER_SIZE = HEADER.size


class WireError(Exception):
    """Malformed frame or payload."""


class Role(enum.IntEnum):
    NODE = 0
    SERVER_A = 1
    SERVER_B = 2


class MsgType(enum.IntEnum):
    HELLO = 1
    CONFIG_ACK = 2
    LOCAL_HESSIAN = 3
    LOCAL_GRADIENT = 4
    LOCAL_LOGLIK = 5
    LOCAL_NEWTON_STEP = 6
    BLINDED_REQUEST = 7
    BLINDED_RESPONSE = 8
    BETA_BROADCAST = 9
    INV_HESSIAN_BROADCAST = 10
    CONVERGED_NOTICE = 11
    ABORT = 12


@dataclass(frozen=True)
class PartyId:
    role: Role
    index: int = 0

    def __str__(self):
        if self.role == Role.NODE:
            return f"node{self.index}"
        return "server-a" if self.role == Role.SERVER_A else "server-b"


SERVER_A = PartyId(Role.SERVER_A)
SERVER_B = PartyId(Role.SERVER_B)


def node(j: int) -> PartyId:
    return PartyId(Role.NODE, j)


@dataclass(frozen=True)
class Envelope:
    session: bytes
    sender: PartyId
    to: PartyId
    msg_type: MsgType
    payload: bytes = b""
    version: int = VERSION

    def to_bytes(self) -> bytes:
        if len(self.session) != 16:
            raise WireError("session id must be 16 bytes")
        head = HEADER.pack(self.version, self.session, int(self.sender.role), self.sender.index,
                           int(self.to.role), self.to.index, int(self.msg_type), len(self.payload))
        return head + self.payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Envelope":
        if len(buf) < HEADER_SIZE:
            raise WireError("frame shorter than the envelope header")
        head = parse_header(buf[:HEADER_SIZE])
        length = head.pop("length")
        if len(buf) != HEADER_SIZE + length:
            raise WireError(f"length prefix {length} does not match payload of {len(buf) - HEADER_SIZE} bytes")
        return cls(payload=bytes(buf[HEADER_SIZE:]), **head)


def parse_header(head: bytes) -> dict:
    version, session, frole, fidx, trole, tidx, mtype, length = HEADER.unpack(head)
    if version != VERSION:
        raise WireError(f"unsupported envelope version {version}")
    try:
        msg_type = MsgType(mtype)
        sender = PartyId(Role(frole), fidx)
        to = PartyId(Role(trole), tidx)
    except ValueError as exc:
        raise WireError(f"unknown enum value in header: {exc}") from exc
    return dict(version=version, session=session, sender=sender, to=to, msg_type=msg_type, length=length)


# -- payload codecs ----------------------------------------------------------

class Writer:
    def __init__(self):
        self._parts = []

    def u8(self, v: int):
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int):
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int):
        self._parts.append(struct.pack(">I", v))
        return self

    def f64(self, v: float):
        self._parts.append(struct.pack(">d", v))
        return self

    def raw(self, b: bytes):
        self._parts.append(b)
        return self

    def blob(self, b: bytes):
        return self.u32(len(b)).raw(b)

    def uint(self, v: int):
        self._parts.append(paillier.int_to_bytes(v))
        return self

    def sint(self, v: int):
        v = int(v)
        self._parts.append(paillier.int_to_bytes(abs(v)) + (b"\x01" if v < 0 else b"\x00"))
        return self

    def matrix(self, rows, signed: bool = False):
        """rows: list of equal-length lists of ints."""
        r = len(rows)
        c = len(rows[0]) if r else 0
        self.u16(r).u16(c)
        put = self.sint if signed else self.uint
        for row in rows:
            if len(row) != c:
                raise WireError("ragged matrix")
            for v in row:
                put(v)
        return self

    def vector(self, values, signed: bool = False):
        return self.matrix([[v] for v in values], signed)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def _take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise WireError("payload truncated")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def uint(self) -> int:
        try:
            v, self.off = paillier.int_from_bytes(self.buf, self.off)
        except ValueError as exc:
            raise WireError(str(exc)) from exc
        return v

    def sint(self) -> int:
        v = self.uint()
        sign = self.u8()
        if sign not in (0, 1):
            raise WireError(f"bad sign byte {sign}")
        return -v if sign else v

    def matrix(self, signed: bool = False):
        r, c = self.u16(), self.u16()
        get = self.sint if signed else self.uint
        return [[get() for _ in range(c)] for _ in range(r)]

    def vector(self, signed: bool = False):
        m = self.matrix(signed)
        if m and len(m[0]) != 1:
            raise WireError("expected a column vector")
        return [row[0] for row in m]

    def done(self):
        if self.off != len(self.buf):
            raise WireError(f"{len(self.buf) - self.off} trailing payload bytes")
