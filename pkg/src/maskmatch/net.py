"""Message transport between named parties, with byte and message accounting.

Two interchangeable networks are provided: an in-process one built on
queues and a loopback TCP one. Both frame every message as
``{u32 payload length, u8 kind, u64 session id, payload}``; only payload
bytes count as logical traffic, framing is tallied separately.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass
from enum import IntEnum

from .mpc import ProtocolError

FRAME = struct.Struct("<IBQ")
# a failing party aborts its peers, so this only bounds a hung peer; it must
# exceed the longest legitimate computation between messages (large databases)
RECV_TIMEOUT = 3600.0


class Kind(IntEnum):
    SETUP_REQUEST = 1
    KEY_DELIVERY = 2
    SWITCH_KEY_DELIVERY = 3
    INDICATOR_REQUEST = 4
    INDICATOR_REPLY = 5
    ENROLL_UPLOAD = 6
    QUERY_CIPHERTEXT = 7
    MASKED_DISTANCES = 8
    DEALER_BATCH = 9
    REVEAL_START = 10
    CMP_ROUND = 11
    B2A_ROUND = 12
    FINAL_BIT = 13
    ACK = 14


PHASE_OF_KIND = {
    Kind.SETUP_REQUEST: "setup",
    Kind.KEY_DELIVERY: "setup",
    Kind.SWITCH_KEY_DELIVERY: "setup",
    Kind.INDICATOR_REQUEST: "enroll",
    Kind.INDICATOR_REPLY: "enroll",
    Kind.ENROLL_UPLOAD: "enroll",
    Kind.ACK: "enroll",
    Kind.QUERY_CIPHERTEXT: "distance",
    Kind.MASKED_DISTANCES: "distance",
    Kind.DEALER_BATCH: "offline",
    Kind.REVEAL_START: "reveal",
    Kind.CMP_ROUND: "reveal",
    Kind.B2A_ROUND: "reveal",
    Kind.FINAL_BIT: "reveal",
}


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: int
    session: int
    seq: int
    payload: bytes

    def frame(self) -> bytes:
        return FRAME.pack(len(self.payload), self.kind, self.session) + self.payload


class NetStats:
    """Per-edge byte and message counters plus per-phase wall-clock and HE op tallies."""

    def __init__(self):
        self._lock = threading.Lock()
        self.sent = defaultdict(int)
        self.received = defaultdict(int)
        self.messages = defaultdict(int)
        self.framing = 0
        self.phase_bytes = defaultdict(int)
        self.phase_time = defaultdict(float)
        self.ops = defaultdict(int)

    def on_send(self, msg: Message):
        with self._lock:
            edge = (msg.src, msg.dst)
            self.sent[edge] += len(msg.payload)
            self.messages[edge] += 1
            self.framing += FRAME.size
            self.phase_bytes[PHASE_OF_KIND.get(msg.kind, "other")] += len(msg.payload)

    def on_recv(self, msg: Message):
        with self._lock:
            self.received[(msg.src, msg.dst)] += len(msg.payload)

    def count_op(self, name: str, n: int = 1):
        with self._lock:
            self.ops[name] += n

    @contextmanager
    def phase(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            with self._lock:
                self.phase_time[name] += time.perf_counter() - start

    def edge(self, src: str, dst: str) -> int:
        return self.sent[(src, dst)]

    @property
    def total_bytes(self) -> int:
        return sum(self.sent.values())

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "sent": dict(self.sent),
                "received": dict(self.received),
                "messages": dict(self.messages),
                "phase_bytes": dict(self.phase_bytes),
                "phase_time": dict(self.phase_time),
                "ops": dict(self.ops),
                "framing": self.framing,
            }

    @staticmethod
    def delta(after: dict, before: dict) -> dict:
        out = {}
        for key, val in after.items():
            if isinstance(val, dict):
                prev = before.get(key, {})
                out[key] = {k: v - prev.get(k, 0) for k, v in val.items() if v - prev.get(k, 0)}
            else:
                out[key] = val - before.get(key, 0)
        return out


class Transcript:
    """Messages recorded per directed edge in send order.

    Parties run concurrently, so only the per-edge order is deterministic;
    the digest walks edges in sorted order.
    """

    def __init__(self, keep_payloads: bool = True):
        self._lock = threading.Lock()
        self.keep_payloads = keep_payloads
        self.edges: dict[tuple[str, str], list] = defaultdict(list)

    def record(self, msg: Message):
        with self._lock:
            body = msg.payload if self.keep_payloads else hashlib.sha256(msg.payload).digest()
            self.edges[(msg.src, msg.dst)].append((msg.kind, msg.session, body))

    def digest(self) -> str:
        h = hashlib.sha256()
        for edge in sorted(self.edges):
            h.update(f"{edge[0]}>{edge[1]}".encode())
            for kind, session, body in self.edges[edge]:
                h.update(struct.pack("<BQ", kind, session))
                h.update(hashlib.sha256(body).digest() if self.keep_payloads else body)
        return h.hexdigest()

    def kinds(self, src: str, dst: str) -> list[int]:
        return [k for k, _, _ in self.edges[(src, dst)]]


class Network:
    def __init__(self, parties, record: bool = True):
        self.parties = tuple(parties)
        self.stats = NetStats()
        self.transcript = Transcript(keep_payloads=False) if record else None
        self._seq = defaultdict(int)
        self._seq_lock = threading.Lock()
        self.aborted = threading.Event()

    def endpoint(self, name: str) -> "Endpoint":
        if name not in self.parties:
            raise KeyError(name)
        return Endpoint(self, name)

    def _next_seq(self, src, dst) -> int:
        with self._seq_lock:
            self._seq[(src, dst)] += 1
            return self._seq[(src, dst)]

    def deliver(self, msg: Message):
        self.stats.on_send(msg)
        if self.transcript is not None:
            self.transcript.record(msg)
        self._put(msg)

    def fetch(self, src: str, dst: str) -> Message:
        msg = self._get(src, dst)
        self.stats.on_recv(msg)
        return msg

    def abort(self):
        """Wake every blocked receiver with a ProtocolError."""
        self.aborted.set()

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalNetwork(Network):
    """Ordered in-memory queues, one per directed edge."""

    def __init__(self, parties, record: bool = True):
        super().__init__(parties, record)
        self._queues = {(a, b): queue.Queue() for a in self.parties for b in self.parties if a != b}

    def _put(self, msg: Message):
        self._queues[(msg.src, msg.dst)].put(msg)

    def _get(self, src, dst) -> Message:
        q = self._queues[(src, dst)]
        deadline = time.monotonic() + RECV_TIMEOUT
        while time.monotonic() < deadline:
            if self.aborted.is_set():
                raise ProtocolError(f"{dst} aborted while waiting for {src}")
            try:
                return q.get(timeout=0.05)
            except queue.Empty:
                continue
        raise ProtocolError(f"{dst} timed out waiting for {src}")


class TcpNetwork(Network):
    """Loopback TCP: one connected socket pair per unordered pair of parties."""

    def __init__(self, parties, record: bool = True):
        super().__init__(parties, record)
        self._socks: dict[tuple[str, str], socket.socket] = {}
        with socket.create_server(("127.0.0.1", 0)) as server:
            port = server.getsockname()[1]
            for i, a in enumerate(self.parties):
                for b in self.parties[i + 1:]:
                    client = socket.create_connection(("127.0.0.1", port))
                    conn, _ = server.accept()
                    for s in (client, conn):
                        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                        s.settimeout(RECV_TIMEOUT)
                    self._socks[(a, b)] = client
                    self._socks[(b, a)] = conn

    def _put(self, msg: Message):
        # the socket stored under (src, dst) is src's end of the pair
        self._socks[(msg.src, msg.dst)].sendall(msg.frame())

    def _get(self, src, dst) -> Message:
        sock = self._socks[(dst, src)]
        head = _recv_exact(sock, FRAME.size)
        length, kind, session = FRAME.unpack(head)
        payload = _recv_exact(sock, length)
        return Message(src, dst, kind, session, 0, payload)

    def abort(self):
        super().abort()
        for s in self._socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def close(self):
        for s in self._socks.values():
            try:
                s.close()
            except OSError:
                pass
        self._socks.clear()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            chunk = sock.recv(min(n - len(buf), 1 << 20))
        except socket.timeout:
            raise ProtocolError("timed out waiting for peer") from None
        except OSError as exc:
            raise ProtocolError(f"connection failed: {exc}") from None
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        buf += chunk
    return bytes(buf)


class Endpoint:
    """One party's view of the network."""

    def __init__(self, net: Network, name: str):
        self.net = net
        self.name = name

    def send(self, dst: str, kind: int, payload: bytes, session: int = 0):
        msg = Message(self.name, dst, int(kind), session, self.net._next_seq(self.name, dst), bytes(payload))
        self.net.deliver(msg)

    def recv(self, src: str, kind: int, session: int | None = None) -> bytes:
        msg = self.net.fetch(src, self.name)
        if msg.kind != int(kind):
            raise ProtocolError(
                f"{self.name} expected {Kind(kind).name} from {src}, got {_kind_name(msg.kind)}"
            )
        if session is not None and msg.session != session:
            raise ProtocolError(f"session mismatch: expected {session}, got {msg.session}")
        return msg.payload

    def link(self, peer: str, party: int, session: int = 0) -> "PeerLink":
        return PeerLink(self, peer, party, session)


def _kind_name(kind: int) -> str:
    try:
        return Kind(kind).name
    except ValueError:
        return str(kind)


class PeerLink:
    """Adapter giving the two-party gadgets a fixed peer and session."""

    def __init__(self, endpoint: Endpoint, peer: str, party: int, session: int):
        self.endpoint = endpoint
        self.peer = peer
        self.party = party
        self.session = session

    def send(self, kind: int, payload: bytes) -> None:
        self.endpoint.send(self.peer, kind, payload, self.session)

    def recv(self, kind: int) -> bytes:
        return self.endpoint.recv(self.peer, kind, self.session)


def run_parties(*tasks, net: Network | None = None):
    """Run zero-argument callables concurrently; return their results in order.

    The first exception raised by any task is re-raised after all threads
    end; if ``net`` is given it is aborted so that peers stop waiting.
    """
    results = [None] * len(tasks)
    errors: list[BaseException] = []

    def wrap(i, fn):
        try:
            results[i] = fn()
        except BaseException as exc:  # surfaced to the caller below
            errors.append(exc)
            if net is not None:
                net.abort()

    threads = [threading.Thread(target=wrap, args=(i, fn), daemon=True) for i, fn in enumerate(tasks)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return results


def make_network(kind: str, parties, record: bool = True) -> Network:
    if kind == "local":
        return LocalNetwork(parties, record)
    if kind == "tcp":
        return TcpNetwork(parties, record)
    raise ValueError(f"unknown transport {kind!r}")
