"""Brokers and the multiplexer event loop that schedules them.

An :class:`EndpointBroker` binds one transport policy to one protocol
stack behind a message-passing interface: its behavior callable runs once
per inbound message, and :meth:`EndpointBroker.send` may be called from
any thread (it is routed through the owning loop's command mailbox). An
:class:`AcceptBroker` owns a listening endpoint and spawns endpoint
brokers: per accepted connection for streams, per new source address for
datagram multiplexing.

One :class:`Multiplexer` is one event-loop thread owning all of its
brokers, transports, and layer state; nothing it owns is touched from
other threads except through ``call_soon_threadsafe``. Timers live on a
clock object (monotonic by default); handing in a
:class:`~wirestack.simnet.VirtualClock` makes every timeout deterministic
for tests and simulations.

A behavior that blocks stalls its whole loop; mitigation is left to users.
"""

from __future__ import annotations

import heapq
import logging
import selectors
import socket
import threading
import time
from collections import deque
from typing import Callable, Optional

from wirestack.core import Closed, MalformedHeader, Message, NodeId, PeerClosed
from wirestack.layers import LayerStack, ReceiveContext, SendContext, HeartbeatLayer, MS
from wirestack.simnet import Timer
from wirestack.transport import TcpListener, TcpTransport, TransportPolicy, UdpListener, UdpPeerTransport, UnitKind

__all__ = [
    "MonotonicClock",
    "Multiplexer",
    "EndpointBroker",
    "AcceptBroker",
]

log = logging.getLogger(__name__)

POLL_GRANULARITY = 1 * MS
MAX_POLL = 200 * MS


class MonotonicClock:
    """Timer queue on the system monotonic clock (integer nanoseconds)."""

    def __init__(self) -> None:
        self._heap: list[Timer] = []
        self._seq = 0

    def now(self) -> int:
        return time.monotonic_ns()

    def schedule(self, at: int, callback: Callable[[], None]) -> Timer:
        timer = Timer(at, self._seq, callback)
        self._seq += 1
        heapq.heappush(self._heap, timer)
        return timer

    def schedule_in(self, delay: int, callback: Callable[[], None]) -> Timer:
        return self.schedule(self.now() + delay, callback)

    def next_deadline(self) -> Optional[int]:
        heap = self._heap
        while heap and heap[0].cancelled:
            heapq.heappop(heap)
        return heap[0].at if heap else None

    def fire_due(self) -> int:
        """Run every timer whose deadline has passed; returns the count."""
        fired = 0
        now = self.now()
        heap = self._heap
        while heap and heap[0].at <= now:
            timer = heapq.heappop(heap)
            if timer.cancelled:
                continue
            fired += 1
            timer.callback()
        return fired


class Multiplexer:
    """Single-threaded readiness poller plus timer wheel plus command mailbox.

    Level-triggered: a registered transport's broker is called back while
    data is pending. The poll timeout tracks the nearest timer deadline at
    millisecond granularity, so timers fire at or after their deadline,
    each at most once.
    """

    def __init__(self, clock=None):
        self.clock = clock if clock is not None else MonotonicClock()
        self._selector = selectors.DefaultSelector()
        self._commands: deque[Callable[[], None]] = deque()
        self._lock = threading.Lock()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._wake_w.setblocking(False)
        self._selector.register(self._wake_r, selectors.EVENT_READ, None)
        self._running = False
        self.thread_ident: Optional[int] = None

    # -- registration ------------------------------------------------------

    def register(self, transport: TransportPolicy, broker) -> None:
        fd = transport.fileno()
        if fd is None:
            return  # push-fed transport; nothing to poll
        events = selectors.EVENT_READ
        if transport.wants_write():
            events |= selectors.EVENT_WRITE
        self._selector.register(fd, events, (transport, broker))

    def update_interest(self, transport: TransportPolicy) -> None:
        fd = transport.fileno()
        if fd is None:
            return
        try:
            key = self._selector.get_key(fd)
        except KeyError:
            return
        events = selectors.EVENT_READ
        if transport.wants_write():
            events |= selectors.EVENT_WRITE
        if key.events != events:
            self._selector.modify(fd, events, key.data)

    def unregister(self, transport: TransportPolicy) -> None:
        fd = transport.fileno()
        if fd is None:
            return
        try:
            self._selector.unregister(fd)
        except KeyError:
            pass

    # -- timers and commands ------------------------------------------------

    def set_timer(self, delay: int, callback: Callable[[], None]) -> Timer:
        return self.clock.schedule(self.clock.now() + delay, callback)

    def call_soon_threadsafe(self, fn: Callable[[], None]) -> None:
        with self._lock:
            self._commands.append(fn)
        try:
            self._wake_w.send(b"\x00")
        except (BlockingIOError, OSError):
            pass

    def stop(self) -> None:
        self.call_soon_threadsafe(self._stop)

    def _stop(self) -> None:
        self._running = False

    # -- the loop ------------------------------------------------------------

    def run(self) -> None:
        """Loop until stopped: poll readiness, dispatch, fire timers, drain commands."""
        self._running = True
        self.thread_ident = threading.get_ident()
        try:
            while self._running:
                self.run_once()
        finally:
            self.thread_ident = None

    def run_once(self, timeout_override: Optional[float] = None) -> None:
        self._drain_commands()
        timeout = timeout_override
        if timeout is None:
            deadline = self.clock.next_deadline()
            if deadline is None:
                timeout = MAX_POLL / 1e9
            else:
                wait = max(0, deadline - self.clock.now())
                wait = min(wait, MAX_POLL)
                # round up to the poll granularity
                wait = ((wait + POLL_GRANULARITY - 1) // POLL_GRANULARITY) * POLL_GRANULARITY
                timeout = wait / 1e9
        try:
            events = self._selector.select(timeout)
        except OSError as exc:
            log.error("poller failed: %s", exc)
            self._running = False
            raise
        for key, mask in events:
            if key.data is None:
                self._drain_wakeup()
                continue
            transport, broker = key.data
            if mask & selectors.EVENT_WRITE:
                broker.handle_writable(transport)
            if mask & selectors.EVENT_READ:
                broker.handle_readable(transport)
        self.clock.fire_due()
        self._drain_commands()

    def _drain_wakeup(self) -> None:
        try:
            while self._wake_r.recv(4096):
                pass
        except (BlockingIOError, OSError):
            pass

    def _drain_commands(self) -> None:
        while True:
            with self._lock:
                if not self._commands:
                    return
                fn = self._commands.popleft()
            try:
                fn()
            except Exception:
                log.exception("command raised")

    def close(self) -> None:
        self._selector.close()
        self._wake_r.close()
        self._wake_w.close()


class EndpointBroker:
    """One transport bound to one protocol stack behind a message handler.

    ``behavior(broker, message)`` runs exactly once per message the stack
    emits. All state is touched only from the owning loop; ``send`` is the
    one cross-thread entry point. Transport failures surface through
    ``on_error`` (default: log).
    """

    def __init__(
        self,
        transport: TransportPolicy,
        stack: LayerStack,
        behavior: Callable[["EndpointBroker", Message], None],
        clock=None,
        mux: Optional[Multiplexer] = None,
        peer: NodeId = 0,
        on_error: Optional[Callable[[Exception], None]] = None,
    ):
        if stack.stream != (transport.unit_kind is UnitKind.STREAM):
            raise ValueError("stack framing does not match the transport unit kind")
        if stack.max_unit is None:
            stack.max_unit = transport.unit_limit()
        self.transport = transport
        self.stack = stack
        self.behavior = behavior
        self.mux = mux
        self.clock = mux.clock if mux is not None else (clock if clock is not None else MonotonicClock())
        self.peer = peer
        self.on_error = on_error
        self.delivered = 0
        self.malformed = 0
        self._timer: Optional[Timer] = None
        self._closed = False

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "EndpointBroker":
        receiver = getattr(self.transport, "set_receiver", None)
        if receiver is not None:
            receiver(self.inject)
        if self.mux is not None:
            self.mux.register(self.transport, self)
        return self

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._timer is not None:
            self._timer.cancel()
        if self.mux is not None:
            self.mux.unregister(self.transport)
        self.transport.close()

    # -- sending -------------------------------------------------------------

    def send(self, msg: Message) -> None:
        """Run ``msg`` through the stack and hand the wire units to the transport.

        Safe to call from any thread; off-loop calls are routed through the
        multiplexer's command mailbox.
        """
        mux = self.mux
        if (
            mux is not None
            and mux.thread_ident is not None
            and mux.thread_ident != threading.get_ident()
        ):
            mux.call_soon_threadsafe(lambda: self._send(msg))
            return
        self._send(msg)

    def _check_owner(self) -> None:
        # single-threaded ownership: state mutations only on the owning loop
        owner = self.mux.thread_ident if self.mux is not None else None
        if owner is not None and owner != threading.get_ident():
            raise RuntimeError("broker state touched off its owning loop thread")

    def _send(self, msg: Message) -> None:
        self._check_owner()
        if self._closed or self.transport.closed:
            self._error(PeerClosed("send on a closed endpoint"))
            return
        ctx = SendContext(buffer=self.transport.send_buffer, now=self.clock.now())
        try:
            units = self.stack.send(msg, ctx)
            for unit in units:
                self.transport.write(unit)
        except Closed as exc:
            self._error(PeerClosed(str(exc)))
            return
        self._after_io()

    # -- receiving -----------------------------------------------------------

    def handle_readable(self, transport: Optional[TransportPolicy] = None) -> None:
        while True:
            try:
                data = self.transport.read()
            except Closed as exc:
                self._peer_gone(exc)
                return
            if data is None:
                return
            self._ingest(data)

    def handle_writable(self, transport: Optional[TransportPolicy] = None) -> None:
        try:
            self.transport.on_writable()
        except Closed as exc:
            self._peer_gone(exc)
            return
        err = getattr(self.transport, "connect_error", None)
        if err is not None:
            self.transport.connect_error = None
            self._error(err)
        if self.mux is not None:
            self.mux.update_interest(self.transport)

    def inject(self, data: bytes) -> None:
        """Push-fed entry point (simulated links, shared datagram sockets)."""
        self._ingest(data)

    def _ingest(self, data: bytes) -> None:
        self._check_owner()
        ctx = ReceiveContext(buffer=self.transport.recv_buffer, now=self.clock.now())
        try:
            msgs = self.stack.receive(data, ctx)
        except MalformedHeader:
            self.malformed += 1
            return
        self._write_all(ctx.outbound)
        self._after_io()
        for msg in msgs:
            self.delivered += 1
            self.behavior(self, msg)

    # -- timers ----------------------------------------------------------------

    def _on_timer(self) -> None:
        self._timer = None
        if self._closed:
            return
        msgs, outbound = self.stack.poll(self.clock.now())
        self._write_all(outbound)
        self._after_io()
        for msg in msgs:
            self.delivered += 1
            self.behavior(self, msg)

    def _after_io(self) -> None:
        self._rearm()
        if self.mux is not None:
            self.mux.update_interest(self.transport)

    def _rearm(self) -> None:
        deadline = self.stack.next_deadline()
        timer = self._timer
        if timer is not None and not timer.cancelled:
            if deadline is not None and timer.at <= deadline:
                return
            timer.cancel()
            self._timer = None
        if deadline is not None:
            self._timer = self.clock.schedule(deadline, self._on_timer)

    # -- plumbing ----------------------------------------------------------------

    def _write_all(self, units) -> None:
        if self._closed:
            return
        try:
            for unit in units:
                self.transport.write(unit)
        except Closed as exc:
            self._peer_gone(exc)

    def _peer_gone(self, exc: Exception) -> None:
        if self.mux is not None:
            self.mux.unregister(self.transport)
        self._error(exc if isinstance(exc, PeerClosed) else PeerClosed(str(exc)))

    def _error(self, exc: Exception) -> None:
        if self.on_error is not None:
            self.on_error(exc)
        else:
            log.warning("broker error: %s", exc)

    def peer_status(self) -> Optional[str]:
        """Heartbeat verdict ("alive"/"suspected"), or None without that layer."""
        for layer in self.stack.layers:
            if isinstance(layer, HeartbeatLayer):
                return layer.status(self.clock.now())
        return None


class AcceptBroker:
    """Listening endpoint governed by an accept policy (the factory).

    For stream listeners every accepted connection spawns one endpoint
    broker. For datagram listeners the single socket is multiplexed: the
    first datagram from an unknown source spawns a broker keyed by that
    source address and is replayed into it.

    ``factory(transport, address)`` must return an (unstarted)
    :class:`EndpointBroker`; the accept broker starts it.
    """

    def __init__(self, listener, factory, mux: Optional[Multiplexer] = None):
        self.listener = listener
        self.factory = factory
        self.mux = mux
        self.spawned: dict = {}
        self.accept_failures = 0

    def start(self) -> "AcceptBroker":
        if self.mux is not None:
            self.mux.register(self.listener, self)
        return self

    def handle_readable(self, transport=None) -> None:
        if isinstance(self.listener, TcpListener):
            self._accept_streams()
        elif isinstance(self.listener, UdpListener):
            self._demux_datagrams()
        else:
            raise TypeError(f"unsupported listener {type(self.listener).__name__}")

    def handle_writable(self, transport=None) -> None:
        pass

    def _accept_streams(self) -> None:
        while True:
            pair = self.listener.accept()
            if pair is None:
                return
            sock, address = pair
            try:
                broker = self.factory(TcpTransport(sock), address)
                broker.start()
                self.spawned[address] = broker
            except Exception:
                self.accept_failures += 1
                log.exception("accept failed; listener continues")

    def _demux_datagrams(self) -> None:
        while True:
            pair = self.listener.read_from()
            if pair is None:
                return
            data, address = pair
            broker = self.spawned.get(address)
            if broker is None:
                try:
                    broker = self.factory(UdpPeerTransport(self.listener, address), address)
                    broker.start()
                    self.spawned[address] = broker
                except Exception:
                    self.accept_failures += 1
                    log.exception("datagram spawn failed; listener continues")
                    continue
            broker.inject(data)

    def close(self) -> None:
        if self.mux is not None:
            self.mux.unregister(self.listener)
        self.listener.close()
        for broker in self.spawned.values():
            broker.close()
