"""Message transport between the three parties.

Frame layout (little endian)::

    uint32 payload length | uint8 protocol tag | uint16 layer index | payload

The 7 header bytes count towards ``framed_bytes`` only, so payload totals can
be compared with the analytic cost model byte for byte. Ledgers are updated
by the sender; every frame is attributed to one (layer, protocol, phase).
"""
from __future__ import annotations

import hashlib
import json
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .ledger import PROTOCOL_TAGS, TAG_NAMES, CommLedger
from .sharing import PartyId

HEADER = struct.Struct("<IBH")
HEADER_SIZE = HEADER.size  # 7
NO_LAYER = 0xFFFF
DEFAULT_TIMEOUT = 60.0


class TransportError(RuntimeError):
    """Connection loss or timeout; the session must be aborted."""


class HandshakeError(RuntimeError):
    """Parties disagree on the public session parameters."""


@dataclass(frozen=True)
class Frame:
    protocol: str
    layer: int
    payload: bytes

    def encode(self) -> bytes:
        return HEADER.pack(len(self.payload), PROTOCOL_TAGS[self.protocol], self.layer) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Frame":
        length, tag, layer = HEADER.unpack_from(data)
        payload = data[HEADER_SIZE:]
        if len(payload) != length:
            raise TransportError(f"frame length mismatch: header says {length}, got {len(payload)}")
        return cls(TAG_NAMES[tag], layer, payload)


class Transport:
    """Base class: framing, ledger attribution and per-peer ordered queues."""

    def __init__(self, party: PartyId, timeout: float = DEFAULT_TIMEOUT, ledger: CommLedger | None = None):
        self.party = PartyId(party)
        self.timeout = timeout
        self.ledger = ledger if ledger is not None else CommLedger()
        self.transcript: list[tuple[int, bytes]] | None = None

    def peers(self):
        return [p for p in PartyId if p != self.party]

    def send(self, peer, payload: bytes, protocol: str, layer: int = NO_LAYER, phase: str = "online"):
        peer = PartyId(peer)
        if peer == self.party:
            raise ValueError("cannot send to self")
        data = Frame(protocol, layer, bytes(payload)).encode()
        self._send_raw(peer, data)
        self.ledger.record(layer, protocol, phase, payload=len(payload), framed=len(data))
        if self.transcript is not None:
            self.transcript.append((int(peer), data))

    def recv(self, peer) -> Frame:
        return Frame.decode(self._recv_raw(PartyId(peer)))

    def close(self):
        pass

    def _send_raw(self, peer: PartyId, data: bytes):
        raise NotImplementedError

    def _recv_raw(self, peer: PartyId) -> bytes:
        raise NotImplementedError


class InProcessHub:
    """Queues for every ordered pair of parties in a single process."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self.queues = {(a, b): queue.Queue() for a in PartyId for b in PartyId if a != b}

    def endpoint(self, party, ledger: CommLedger | None = None) -> "InProcessTransport":
        return InProcessTransport(self, party, ledger)


class InProcessTransport(Transport):
    def __init__(self, hub: InProcessHub, party, ledger=None):
        super().__init__(party, hub.timeout, ledger)
        self.hub = hub

    def _send_raw(self, peer, data):
        self.hub.queues[(self.party, peer)].put(data)

    def _recv_raw(self, peer):
        try:
            return self.hub.queues[(peer, self.party)].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"{self.party.name}: timed out waiting for {peer.name}") from None


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise TransportError("connection closed by peer")
        buf += chunk
    return bytes(buf)


class TcpTransport(Transport):
    """One TCP connection per peer; a reader thread per socket keeps sends from deadlocking.

    Party ``i`` listens on its own address and dials every peer with a lower
    id; the dialing side announces itself with a single id byte.
    """

    def __init__(self, party, addresses: dict, timeout: float = DEFAULT_TIMEOUT, ledger=None):
        super().__init__(party, timeout, ledger)
        self.addresses = {PartyId(k): tuple(v) for k, v in addresses.items()}
        self.socks: dict[PartyId, socket.socket] = {}
        self.inbox: dict[PartyId, queue.Queue] = {p: queue.Queue() for p in self.peers()}
        self._errors: dict[PartyId, BaseException] = {}
        self._threads: list[threading.Thread] = []
        self._listener: socket.socket | None = None

    def connect(self) -> "TcpTransport":
        host, port = self.addresses[self.party]
        higher = [p for p in self.peers() if p > self.party]
        lower = [p for p in self.peers() if p < self.party]
        if higher:
            self._listener = socket.create_server((host, port), reuse_port=False)
            self._listener.settimeout(self.timeout)
        for p in lower:
            self.socks[p] = self._dial(p)
        for _ in higher:
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                raise TransportError(f"{self.party.name}: no connection from peers within {self.timeout}s") from None
            conn.settimeout(None)
            peer = PartyId(_recv_exact(conn, 1)[0])
            self.socks[peer] = conn
        if self._listener is not None:
            self._listener.close()
        for p, s in self.socks.items():
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._reader, args=(p, s), daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _dial(self, peer) -> socket.socket:
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                s = socket.create_connection(self.addresses[peer], timeout=self.timeout)
                s.settimeout(None)
                s.sendall(bytes([int(self.party)]))
                return s
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"{self.party.name}: cannot reach {peer.name} at {self.addresses[peer]}") from None
                time.sleep(0.05)

    def _reader(self, peer, sock):
        try:
            while True:
                header = _recv_exact(sock, HEADER_SIZE)
                length = HEADER.unpack(header)[0]
                self.inbox[peer].put(header + _recv_exact(sock, length))
        except BaseException as exc:  # noqa: BLE001 - surfaced to the receiving caller
            self._errors[peer] = exc
            self.inbox[peer].put(None)

    def _send_raw(self, peer, data):
        try:
            self.socks[peer].sendall(data)
        except OSError as exc:
            raise TransportError(f"{self.party.name}: send to {peer.name} failed: {exc}") from exc

    def _recv_raw(self, peer):
        try:
            data = self.inbox[peer].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"{self.party.name}: timed out waiting for {peer.name}") from None
        if data is None:
            raise TransportError(f"{self.party.name}: connection to {peer.name} lost: {self._errors.get(peer)}")
        return data

    def close(self):
        for s in self.socks.values():
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()


@dataclass
class SessionConfig:
    party: PartyId
    transport: str = "inprocess"
    addresses: dict = field(default_factory=dict)
    master_seed: str = "00" * 32
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        self.party = PartyId(self.party)
        if self.transport not in ("inprocess", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.transport == "tcp" and set(PartyId(k) for k in self.addresses) != set(PartyId):
            raise ValueError("tcp sessions need an address for each of the three parties")


def default_addresses(base_port: int, host: str = "127.0.0.1") -> dict:
    return {p: (host, base_port + int(p)) for p in PartyId}


def public_digest(obj) -> bytes:
    """SHA-256 of the canonical JSON form of the public session parameters."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).digest()


def handshake(transport: Transport, digest: bytes):
    """Exchange digests with both peers; abort on any mismatch."""
    for p in transport.peers():
        transport.send(p, digest, "handshake")
    for p in transport.peers():
        frame = transport.recv(p)
        if frame.protocol != "handshake":
            raise HandshakeError(f"expected handshake from {p.name}, got {frame.protocol}")
        if frame.payload != digest:
            raise HandshakeError(
                f"{transport.party.name}: model/plan digest mismatch with {p.name} "
                f"({digest.hex()[:12]} != {frame.payload.hex()[:12]})"
            )
