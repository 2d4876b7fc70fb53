"""Message transports: in-process queues and TCP sockets.

Topology is a star around Server A: nodes and Server B talk only to A.  Every
endpoint exchanges whole Envelope frames; delivery is reliable and ordered per
(sender, receiver) pair.  Byte counts per directed pair are kept on the hub.
"""
from __future__ import annotations

import queue
import socket
import threading
from collections import defaultdict
from typing import Callable, Dict, List, Optional

from .wire import HEADER_SIZE, SERVER_A, Envelope, MsgType, PartyId, WireError, parse_header

DEFAULT_TIMEOUT = 30.0
# wait until the peer speaks or the link drops
FOREVER = float("inf")
MAX_PAYLOAD = 1 << 30


class TransportError(Exception):
    """Delivery failed: malformed or truncated frame, closed peer."""


class TransportTimeout(TransportError):
    pass


class _Failure:
    """Queued in place of a frame when a reader thread hits an error."""

    def __init__(self, exc: Exception):
        self.exc = exc


class ByteLedger:
    """Thread-safe byte counts per directed party pair."""

    def __init__(self, record: bool = False):
        self._lock = threading.Lock()
        self.counts: Dict[tuple, int] = defaultdict(int)
        self.record = record
        self.log: List[Envelope] = []

    def add(self, env: Envelope, size: int):
        with self._lock:
            self.counts[(env.sender, env.to)] += size
            if self.record:
                self.log.append(env)

    def as_dict(self) -> Dict[str, int]:
        with self._lock:
            return {f"{a}->{b}": n for (a, b), n in sorted(self.counts.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1])))}


class Endpoint:
    """One party's view of the transport."""

    party: PartyId
    timeout: float = DEFAULT_TIMEOUT

    def send(self, env: Envelope) -> None:
        raise NotImplementedError

    def _recv_frame(self, timeout: float) -> bytes:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> Envelope:
        buf = self._recv_frame(self.timeout if timeout is None else timeout)
        try:
            return Envelope.from_bytes(buf)
        except WireError as exc:
            raise TransportError(f"{self.party}: malformed frame: {exc}") from exc

    def close(self) -> None:
        pass


class StashingEndpoint:
    """Wraps an endpoint so callers can wait for a specific (sender, type).

    Frames that arrive early are kept in arrival order and handed out when
    asked for; per-pair ordering is preserved.
    """

    def __init__(self, inner: Endpoint):
        self.inner = inner
        self.party = inner.party
        self._stash: List[Envelope] = []

    @property
    def timeout(self):
        return self.inner.timeout

    def send(self, env: Envelope):
        self.inner.send(env)

    def recv_match(self, pred: Callable[[Envelope], bool], timeout: Optional[float] = None) -> Envelope:
        for i, env in enumerate(self._stash):
            if pred(env):
                return self._stash.pop(i)
        while True:
            env = self.inner.recv(timeout)
            if env.msg_type == MsgType.ABORT or pred(env):
                return env
            self._stash.append(env)

    def recv_from(self, sender: PartyId, msg_type: MsgType, timeout: Optional[float] = None) -> Envelope:
        return self.recv_match(lambda e: e.sender == sender and e.msg_type == msg_type, timeout)

    def recv(self, timeout: Optional[float] = None) -> Envelope:
        if self._stash:
            return self._stash.pop(0)
        return self.inner.recv(timeout)

    def close(self):
        self.inner.close()


# -- in-process --------------------------------------------------------------

class InProcHub:
    """Queues keyed by party; frames travel as bytes so the codec is exercised."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT, record: bool = False):
        self.timeout = timeout
        self.ledger = ByteLedger(record)
        self._queues: Dict[PartyId, queue.Queue] = {}
        self._lock = threading.Lock()

    def _queue(self, party: PartyId) -> queue.Queue:
        with self._lock:
            if party not in self._queues:
                self._queues[party] = queue.Queue()
            return self._queues[party]

    def endpoint(self, party: PartyId) -> "InProcEndpoint":
        return InProcEndpoint(self, party)

    def inject(self, to: PartyId, frame: bytes):
        """Deliver raw bytes (tests use this for corrupt frames)."""
        self._queue(to).put(frame)


class InProcEndpoint(Endpoint):
    def __init__(self, hub: InProcHub, party: PartyId):
        self.hub = hub
        self.party = party
        self.timeout = hub.timeout
        self._inbox = hub._queue(party)

    def send(self, env: Envelope):
        if env.sender != self.party:
            raise TransportError(f"{self.party} cannot send as {env.sender}")
        frame = env.to_bytes()
        self.hub.ledger.add(env, len(frame))
        self.hub._queue(env.to).put(frame)

    def _recv_frame(self, timeout):
        try:
            item = self._inbox.get(timeout=None if timeout == FOREVER else timeout)
        except queue.Empty:
            raise TransportTimeout(f"{self.party}: no message within {timeout} s") from None
        if isinstance(item, _Failure):
            raise TransportError(str(item.exc)) from item.exc
        return item


# -- TCP -----------------------------------------------------------------------

def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            if got == 0:
                raise EOFError
            raise TransportError(f"connection closed after {got} of {n} bytes (truncated frame)")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    """One envelope frame: the header carries the payload length."""
    head = _read_exact(sock, HEADER_SIZE)
    try:
        length = parse_header(head)["length"]
    except WireError as exc:
        raise TransportError(f"malformed frame header: {exc}") from exc
    if length > MAX_PAYLOAD:
        raise TransportError(f"payload of {length} bytes exceeds the {MAX_PAYLOAD} limit")
    try:
        payload = _read_exact(sock, length) if length else b""
    except EOFError:
        raise TransportError("connection closed before the payload (truncated frame)") from None
    return head + payload


def parse_addr(addr: str) -> tuple:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


class TcpHubEndpoint(Endpoint):
    """Server A's endpoint: listens, one reader thread per connected party.

    A connecting party's first frame must be sent by that party; its sender
    field registers the socket for replies.
    """

    def __init__(self, listen: str, timeout: float = DEFAULT_TIMEOUT, record: bool = False):
        self.party = SERVER_A
        self.timeout = timeout
        self.ledger = ByteLedger(record)
        self._inbox: queue.Queue = queue.Queue()
        self._socks: Dict[PartyId, socket.socket] = {}
        self._send_locks: Dict[PartyId, threading.Lock] = {}
        self._registered = threading.Condition()
        self._closed = False
        self._listener = socket.create_server(parse_addr(listen), reuse_port=False)
        self._listener.settimeout(0.2)
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn: socket.socket):
        who = None
        try:
            while True:
                try:
                    frame = read_frame(conn)
                except EOFError:
                    if not self._closed and who is not None:
                        self._inbox.put(_Failure(TransportError(f"{who} disconnected")))
                    return
                env = Envelope.from_bytes(frame)
                if who is None:
                    who = env.sender
                    with self._registered:
                        self._socks[who] = conn
                        self._send_locks[who] = threading.Lock()
                        self._registered.notify_all()
                elif env.sender != who:
                    raise TransportError(f"frame from {env.sender} on {who}'s connection")
                self.ledger.add(env, len(frame))
                self._inbox.put(frame)
        except (TransportError, WireError, OSError) as exc:
            if not self._closed:
                self._inbox.put(_Failure(exc if isinstance(exc, TransportError) else TransportError(str(exc))))

    def send(self, env: Envelope):
        with self._registered:
            ok = self._registered.wait_for(lambda: env.to in self._socks, timeout=self.timeout)
            if not ok:
                raise TransportTimeout(f"{env.to} never connected")
            sock, lock = self._socks[env.to], self._send_locks[env.to]
        frame = env.to_bytes()
        self.ledger.add(env, len(frame))
        with lock:
            try:
                sock.sendall(frame)
            except OSError as exc:
                raise TransportError(f"send to {env.to} failed: {exc}") from exc

    def _recv_frame(self, timeout):
        try:
            item = self._inbox.get(timeout=None if timeout == FOREVER else timeout)
        except queue.Empty:
            raise TransportTimeout(f"server-a: no message within {timeout} s") from None
        if isinstance(item, _Failure):
            raise item.exc
        return item

    def close(self):
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        for s in list(self._socks.values()):
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()


class TcpClientEndpoint(Endpoint):
    """A node's or Server B's connection to Server A."""

    def __init__(self, party: PartyId, connect: str, timeout: float = DEFAULT_TIMEOUT,
                 connect_timeout: float | None = None):
        self.party = party
        self.timeout = timeout
        host, port = parse_addr(connect)
        deadline_timeout = timeout if connect_timeout is None else connect_timeout
        self._sock = _connect_with_retry(host, port, deadline_timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()

    def send(self, env: Envelope):
        if env.sender != self.party:
            raise TransportError(f"{self.party} cannot send as {env.sender}")
        with self._lock:
            try:
                self._sock.sendall(env.to_bytes())
            except OSError as exc:
                raise TransportError(f"send failed: {exc}") from exc

    def _recv_frame(self, timeout):
        self._sock.settimeout(None if timeout == FOREVER else timeout)
        try:
            return read_frame(self._sock)
        except socket.timeout:
            raise TransportTimeout(f"{self.party}: no message within {timeout} s") from None
        except EOFError:
            raise TransportError(f"{self.party}: server-a closed the connection") from None
        except OSError as exc:
            raise TransportError(f"{self.party}: {exc}") from exc

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def _connect_with_retry(host: str, port: int, timeout: float) -> socket.socket:
    import time

    deadline = time.monotonic() + timeout
    while True:
        try:
            return socket.create_connection((host, port), timeout=timeout)
        except OSError:
            if time.monotonic() >= deadline:
                raise TransportTimeout(f"could not connect to {host}:{port} within {timeout} s") from None
            time.sleep(0.05)
