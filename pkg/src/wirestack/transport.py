"""Transport policies: objects that move wire units to and from an endpoint.

A transport is either STREAM (preserves byte order, never loses bytes
within a connection, no unit boundaries) or DATAGRAM (whole units that may
be reordered, dropped, or duplicated, but never corrupted or split).
Transports carry layer output verbatim; they add no wire format.

Each transport owns a send and a receive :class:`~wirestack.core.WireBuffer`
used by the protocol stack for assembly and copy instrumentation. A
transport instance belongs to one event loop; only the establishment
helpers (`tcp_listen`, `tcp_connect`, `udp_bind`, ...) may be called from
other threads, before ownership is handed over.
"""

from __future__ import annotations

import errno
import logging
import socket
from collections import deque
from enum import Enum
from typing import Optional

from wirestack.core import (
    AddressInUse,
    Buf,
    Closed,
    ConnectionRefused,
    PayloadTooLarge,
    Unreachable,
    WireBuffer,
)

__all__ = [
    "UnitKind",
    "TransportPolicy",
    "MockTransport",
    "TcpTransport",
    "TcpListener",
    "UdpTransport",
    "UdpListener",
    "UdpPeerTransport",
    "tcp_listen",
    "tcp_connect",
    "udp_bind",
    "udp_pair",
    "UDP_MAX_DATAGRAM",
]

log = logging.getLogger(__name__)

UDP_MAX_DATAGRAM = 65507
RECV_CHUNK = 65536

# Outbound queue depth that triggers a watermark warning (once per crossing).
OUTBOUND_WATERMARK = 1 << 20


class UnitKind(Enum):
    STREAM = "stream"
    DATAGRAM = "datagram"


class TransportPolicy:
    """Read/write interface over an endpoint plus its buffers."""

    unit_kind: UnitKind = UnitKind.DATAGRAM

    def __init__(self) -> None:
        self.send_buffer = WireBuffer()
        self.recv_buffer = WireBuffer()
        self.closed = False

    def write(self, unit: Buf) -> None:
        raise NotImplementedError

    def read(self) -> Optional[bytes]:
        """Next datagram / stream chunk, or ``None`` when nothing is pending."""
        raise NotImplementedError

    def fileno(self) -> Optional[int]:
        """Pollable descriptor, or ``None`` for push-fed transports."""
        return None

    def wants_write(self) -> bool:
        return False

    def on_writable(self) -> None:
        pass

    def close(self) -> None:
        self.closed = True

    def unit_limit(self) -> Optional[int]:
        return None


class MockTransport(TransportPolicy):
    """Deterministic in-memory endpoint: scripted inbound, captured outbound.

    Reads return exactly the prepared units in order; writes append to
    ``outbound``. ``copy_count`` sums both buffer counters so benchmarks
    can assert copy behavior of full send/receive paths.
    """

    def __init__(self, unit_kind: UnitKind = UnitKind.DATAGRAM, inbound=(),
                 capture: bool = True):
        super().__init__()
        self.unit_kind = unit_kind
        self.inbound: deque[bytes] = deque(bytes(u) for u in inbound)
        self.outbound: list[bytes] = []
        self.capture = capture  # benchmarks disable retention to avoid allocator churn
        self.written = 0

    def prepare(self, units) -> None:
        self.inbound.extend(bytes(u) for u in units)

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("mock transport is closed")
        if self.unit_kind is UnitKind.DATAGRAM and len(unit) > UDP_MAX_DATAGRAM:
            raise PayloadTooLarge(f"datagram of {len(unit)} bytes exceeds {UDP_MAX_DATAGRAM}")
        self.written += 1
        if self.capture:
            self.outbound.append(bytes(unit))

    def read(self) -> Optional[bytes]:
        if self.closed:
            raise Closed("mock transport is closed")
        return self.inbound.popleft() if self.inbound else None

    @property
    def copy_count(self) -> int:
        return self.send_buffer.copy_count + self.recv_buffer.copy_count

    def reset_copy_count(self) -> None:
        self.send_buffer.reset_copy_count()
        self.recv_buffer.reset_copy_count()

    def unit_limit(self) -> Optional[int]:
        return UDP_MAX_DATAGRAM if self.unit_kind is UnitKind.DATAGRAM else None


def _map_oserror(exc: OSError) -> Exception:
    if exc.errno == errno.EADDRINUSE:
        return AddressInUse(str(exc))
    if exc.errno == errno.ECONNREFUSED:
        return ConnectionRefused(str(exc))
    if exc.errno in (errno.ENETUNREACH, errno.EHOSTUNREACH):
        return Unreachable(str(exc))
    return exc


class TcpTransport(TransportPolicy):
    """Non-blocking stream endpoint with an internal outbound queue.

    ``write`` never blocks: bytes that do not fit the socket buffer are
    queued and flushed on writable events. The queue is unbounded; a log
    warning fires when it crosses the watermark.
    """

    unit_kind = UnitKind.STREAM

    def __init__(self, sock: socket.socket, connecting: bool = False):
        super().__init__()
        sock.setblocking(False)
        self.sock = sock
        self.connecting = connecting
        self._out = bytearray()
        self._warned = False
        self.connect_error: Optional[Exception] = None

    def fileno(self) -> Optional[int]:
        return self.sock.fileno() if not self.closed else None

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("stream endpoint is closed")
        self._out += unit
        if not self.connecting:
            self._flush()
        if len(self._out) > OUTBOUND_WATERMARK and not self._warned:
            self._warned = True
            log.warning("outbound queue above %d bytes on fd %s",
                        OUTBOUND_WATERMARK, self.sock.fileno())

    def read(self) -> Optional[bytes]:
        if self.closed:
            raise Closed("stream endpoint is closed")
        try:
            chunk = self.sock.recv(RECV_CHUNK)
        except (BlockingIOError, InterruptedError):
            return None
        except OSError as exc:
            self.close()
            raise Closed(str(exc)) from exc
        if chunk == b"":
            self.close()
            raise Closed("peer closed the connection")
        return chunk

    def wants_write(self) -> bool:
        return self.connecting or bool(self._out)

    def on_writable(self) -> None:
        if self.connecting:
            err = self.sock.getsockopt(socket.SOL_SOCKET, socket.SO_ERROR)
            self.connecting = False
            if err:
                self.connect_error = _map_oserror(OSError(err, errno.errorcode.get(err, str(err))))
                return
        self._flush()

    def _flush(self) -> None:
        while self._out:
            try:
                sent = self.sock.send(self._out)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                self.close()
                raise Closed(str(exc)) from exc
            del self._out[:sent]

    def pending_out(self) -> int:
        return len(self._out)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.sock.close()
            except OSError:
                pass


class TcpListener(TransportPolicy):
    """Listening stream endpoint; readable events mean pending connections."""

    unit_kind = UnitKind.STREAM

    def __init__(self, sock: socket.socket):
        super().__init__()
        sock.setblocking(False)
        self.sock = sock
        self.address = sock.getsockname()

    def fileno(self) -> Optional[int]:
        return self.sock.fileno() if not self.closed else None

    def accept(self) -> Optional[tuple[socket.socket, tuple]]:
        try:
            return self.sock.accept()
        except (BlockingIOError, InterruptedError):
            return None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()


class UdpTransport(TransportPolicy):
    """Connected datagram endpoint (fixed peer).

    A send that would block is queued whole and flushed on the next
    writable event, preserving datagram boundaries.
    """

    unit_kind = UnitKind.DATAGRAM

    def __init__(self, sock: socket.socket):
        super().__init__()
        sock.setblocking(False)
        self.sock = sock
        self.address = sock.getsockname()
        self._backlog: deque[bytes] = deque()

    def fileno(self) -> Optional[int]:
        return self.sock.fileno() if not self.closed else None

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("datagram endpoint is closed")
        if len(unit) > UDP_MAX_DATAGRAM:
            raise PayloadTooLarge(f"datagram of {len(unit)} bytes exceeds {UDP_MAX_DATAGRAM}")
        if self._backlog:
            self._backlog.append(bytes(unit))
            return
        try:
            self.sock.send(bytes(unit))
        except (BlockingIOError, InterruptedError):
            self._backlog.append(bytes(unit))
        except OSError as exc:
            raise _map_oserror(exc) from exc

    def wants_write(self) -> bool:
        return bool(self._backlog)

    def on_writable(self) -> None:
        while self._backlog:
            try:
                self.sock.send(self._backlog[0])
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                raise _map_oserror(exc) from exc
            self._backlog.popleft()

    def read(self) -> Optional[bytes]:
        if self.closed:
            raise Closed("datagram endpoint is closed")
        try:
            return self.sock.recv(RECV_CHUNK)
        except (BlockingIOError, InterruptedError):
            return None
        except ConnectionRefusedError:
            # ICMP port unreachable from a previous send; surface as refusal
            raise ConnectionRefused("peer port unreachable") from None

    def connect(self, address) -> None:
        self.sock.connect(address)

    def unit_limit(self) -> Optional[int]:
        return UDP_MAX_DATAGRAM

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()


class UdpListener(TransportPolicy):
    """Unconnected datagram socket multiplexing several peers.

    The accept broker reads ``(datagram, source address)`` pairs from here
    and demultiplexes by source; per-peer traffic flows through
    :class:`UdpPeerTransport` instances sharing this socket.
    """

    unit_kind = UnitKind.DATAGRAM

    def __init__(self, sock: socket.socket):
        super().__init__()
        sock.setblocking(False)
        self.sock = sock
        self.address = sock.getsockname()
        self._backlog: deque[tuple[bytes, tuple]] = deque()

    def fileno(self) -> Optional[int]:
        return self.sock.fileno() if not self.closed else None

    def read_from(self) -> Optional[tuple[bytes, tuple]]:
        try:
            return self.sock.recvfrom(RECV_CHUNK)
        except (BlockingIOError, InterruptedError):
            return None

    def write_to(self, unit: Buf, address) -> None:
        if len(unit) > UDP_MAX_DATAGRAM:
            raise PayloadTooLarge(f"datagram of {len(unit)} bytes exceeds {UDP_MAX_DATAGRAM}")
        if self._backlog:
            self._backlog.append((bytes(unit), address))
            return
        try:
            self.sock.sendto(bytes(unit), address)
        except (BlockingIOError, InterruptedError):
            self._backlog.append((bytes(unit), address))

    def wants_write(self) -> bool:
        return bool(self._backlog)

    def on_writable(self) -> None:
        while self._backlog:
            unit, address = self._backlog[0]
            try:
                self.sock.sendto(unit, address)
            except (BlockingIOError, InterruptedError):
                return
            self._backlog.popleft()

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.sock.close()


class UdpPeerTransport(TransportPolicy):
    """Per-peer view over a shared unconnected datagram socket.

    Not pollable itself: the owning accept broker injects inbound
    datagrams into the endpoint broker directly.
    """

    unit_kind = UnitKind.DATAGRAM

    def __init__(self, listener: UdpListener, address):
        super().__init__()
        self.listener = listener
        self.address = address

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("datagram endpoint is closed")
        self.listener.write_to(unit, self.address)

    def read(self) -> Optional[bytes]:
        return None

    def unit_limit(self) -> Optional[int]:
        return UDP_MAX_DATAGRAM


def tcp_listen(host: str = "127.0.0.1", port: int = 0) -> TcpListener:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        sock.bind((host, port))
        sock.listen(128)
    except OSError as exc:
        sock.close()
        raise _map_oserror(exc) from exc
    return TcpListener(sock)


def tcp_connect(host: str, port: int) -> TcpTransport:
    """Start a non-blocking connect; completion (or refusal) surfaces via
    the multiplexer's writable event on the returned transport."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setblocking(False)
    try:
        sock.connect((host, port))
    except BlockingIOError:
        pass
    except OSError as exc:
        sock.close()
        raise _map_oserror(exc) from exc
    return TcpTransport(sock, connecting=True)


def udp_bind(host: str = "127.0.0.1", port: int = 0) -> UdpListener:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise _map_oserror(exc) from exc
    return UdpListener(sock)


def udp_pair(host: str = "127.0.0.1") -> tuple[UdpTransport, UdpTransport]:
    """Two connected datagram endpoints on the loopback, wired to each other."""
    a = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    b = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    a.bind((host, 0))
    b.bind((host, 0))
    a.connect(b.getsockname())
    b.connect(a.getsockname())
    return UdpTransport(a), UdpTransport(b)
