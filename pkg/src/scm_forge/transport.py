"""Message transports: in-memory linked pairs and framed TCP.

A link is one endpoint of an ordered, reliable-unless-faulted duplex
channel carrying opaque byte packages. Receives honor an idle deadline
(default 30 s, SCM_IDLE_DEADLINE_MS overrides, <= 0 means wait forever);
a closed link rejects send and receive deterministically.

Fault plans act on in-memory pairs only and address packages by ordinal,
counted across both directions in the order they are sent.
"""
from __future__ import annotations

import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    AddressInUse,
    ConnectionRefused,
    FrameTooLarge,
    TransportClosed,
)

DEFAULT_IDLE_DEADLINE_MS = 30_000
MAX_FRAME_BYTES = 4 * 1024 * 1024

_FRAME_HEADER = struct.Struct(">I")


def idle_deadline_ms(override: int | None = None) -> int:
    if override is not None:
        return override
    env = os.environ.get("SCM_IDLE_DEADLINE_MS")
    if env:
        return int(env)
    return DEFAULT_IDLE_DEADLINE_MS


class TransportLink:
    """Endpoint contract; concrete links implement _send/_receive/_close."""

    def send(self, package: bytes) -> None:
        raise NotImplementedError

    def receive(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


@dataclass
class FaultPlan:
    """Scripted faults keyed by package ordinal (1-based, both directions)."""

    drop: set[int] = field(default_factory=set)
    corrupt: set[int] = field(default_factory=set)
    delay_ms: dict[int, int] = field(default_factory=dict)

    def apply(self, ordinal: int, package: bytes) -> bytes | None:
        """Returns the (possibly corrupted) package, or None when dropped."""
        if ordinal in self.drop:
            return None
        if ordinal in self.corrupt and package:
            mutated = bytearray(package)
            mutated[0] ^= 0xFF
            return bytes(mutated)
        return package

    def delay_for(self, ordinal: int) -> float:
        return self.delay_ms.get(ordinal, 0) / 1000.0


class _PairState:
    """Shared side of an in-memory pair: global ordinal counter and plan."""

    def __init__(self, plan: FaultPlan | None):
        self.plan = plan or FaultPlan()
        self.lock = threading.Lock()
        self.ordinal = 0

    def next_ordinal(self) -> int:
        with self.lock:
            self.ordinal += 1
            return self.ordinal


class MemoryLink(TransportLink):
    def __init__(self, state: _PairState, deadline_ms: int):
        self._state = state
        self._deadline_ms = deadline_ms
        self._inbox: queue.Queue[bytes] = queue.Queue()
        self._peer: "MemoryLink | None" = None
        self._closed = False

    def send(self, package: bytes) -> None:
        if self._closed:
            raise TransportClosed("link is closed")
        peer = self._peer
        assert peer is not None
        ordinal = self._state.next_ordinal()
        delay = self._state.plan.delay_for(ordinal)
        if delay:
            time.sleep(delay)
        delivered = self._state.plan.apply(ordinal, package)
        if delivered is None:
            return  # swallowed by the link; the sender never knows
        if peer._closed:
            raise TransportClosed("peer is closed")
        peer._inbox.put(delivered)

    def receive(self) -> bytes:
        if self._closed:
            raise TransportClosed("link is closed")
        timeout = None if self._deadline_ms <= 0 else self._deadline_ms / 1000.0
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportClosed(
                f"idle deadline of {self._deadline_ms} ms expired") from None

    def close(self) -> None:
        self._closed = True


def link_pair(fault_plan: FaultPlan | None = None,
              deadline_ms: int | None = None) -> tuple[MemoryLink, MemoryLink]:
    """Connected in-memory endpoints; faults hit packages from either side."""
    state = _PairState(fault_plan)
    deadline = idle_deadline_ms(deadline_ms)
    a = MemoryLink(state, deadline)
    b = MemoryLink(state, deadline)
    a._peer = b
    b._peer = a
    return a, b


class TcpLink(TransportLink):
    """Stream socket endpoint with 4-byte big-endian length-prefixed frames."""

    def __init__(self, sock: socket.socket, deadline_ms: int,
                 max_frame: int = MAX_FRAME_BYTES):
        self._sock = sock
        self._deadline_ms = deadline_ms
        self._max_frame = max_frame
        self._closed = False
        sock.settimeout(None if deadline_ms <= 0 else deadline_ms / 1000.0)

    def send(self, package: bytes) -> None:
        if self._closed:
            raise TransportClosed("link is closed")
        if len(package) > self._max_frame:
            raise FrameTooLarge(f"{len(package)} bytes exceed {self._max_frame}")
        try:
            self._sock.sendall(_FRAME_HEADER.pack(len(package)) + package)
        except OSError as exc:
            raise TransportClosed(f"send failed: {exc}") from None

    def _read_exact(self, count: int) -> bytes:
        buf = bytearray()
        while len(buf) < count:
            try:
                chunk = self._sock.recv(count - len(buf))
            except socket.timeout:
                raise TransportClosed(
                    f"idle deadline of {self._deadline_ms} ms expired") from None
            except OSError as exc:
                raise TransportClosed(f"receive failed: {exc}") from None
            if not chunk:
                raise TransportClosed("peer disconnected")
            buf.extend(chunk)
        return bytes(buf)

    def receive(self) -> bytes:
        if self._closed:
            raise TransportClosed("link is closed")
        (length,) = _FRAME_HEADER.unpack(self._read_exact(_FRAME_HEADER.size))
        if length > self._max_frame:
            raise FrameTooLarge(f"frame of {length} bytes exceeds {self._max_frame}")
        return self._read_exact(length)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class TcpListener:
    """Accepts one framed-TCP link per call; bind once, hand out endpoints."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            if exc.errno == 98:  # EADDRINUSE
                raise AddressInUse(f"{host}:{port} is in use") from None
            raise
        sock.listen()
        self._sock = sock
        self.address = sock.getsockname()

    def accept(self, deadline_ms: int | None = None,
               timeout_s: float | None = 10.0) -> TcpLink:
        self._sock.settimeout(timeout_s)
        try:
            conn, _ = self._sock.accept()
        except socket.timeout:
            raise TransportClosed("no connection arrived") from None
        return TcpLink(conn, idle_deadline_ms(deadline_ms))

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_link(dial_addr: tuple[str, int], deadline_ms: int | None = None) -> TcpLink:
    """Dial a listener and return the connected endpoint."""
    try:
        sock = socket.create_connection(dial_addr, timeout=10.0)
    except ConnectionRefusedError:
        raise ConnectionRefused(f"nothing listening at {dial_addr}") from None
    return TcpLink(sock, idle_deadline_ms(deadline_ms))


def tcp_link_pair(deadline_ms: int | None = None) -> tuple[TcpLink, TcpLink]:
    """Loopback-connected pair, dialer first; handy for tests and fleets."""
    listener = TcpListener()
    dialer = tcp_link(listener.address, deadline_ms)
    accepted = listener.accept(deadline_ms)
    listener.close()
    return dialer, accepted
