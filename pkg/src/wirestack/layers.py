"""Protocol layers and their composition into a protocol policy.

A :class:`LayerStack` is an ordered list of layers over a terminal message
codec. ``layers[0]`` is the outermost layer (closest to the transport).
Send traverses innermost→outermost so the outermost header ends up first
on the wire; receive traverses outermost→innermost, the exact reverse.

The canonical datagram composition, outermost first, is

    reliability | ordering | slicing | framing codec

so retransmissions cover every datagram, ordering sits outside framing,
and one framed message may span several datagrams via slicing. Ordering
and reliability keep independent sequence spaces; either can be deployed
without the other.

Copy accounting: each layer treats everything inside its own header as its
payload. Buffering a unit for later delivery (out-of-order arrivals, slice
reassembly, cross-chunk stream fragments) physically copies those bytes
and is charged to the context's :class:`~wirestack.core.WireBuffer`;
passing a unit straight through hands over a view and is free.

All layer state is single-owner: exactly one execution context (an event
loop or a test driver) may call send/receive/poll on a stack. Instances
may be handed between threads but never shared concurrently.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, Optional, Sequence

from wirestack import kernels
from wirestack.core import (
    Buf,
    MalformedHeader,
    Message,
    PayloadTooLarge,
    U32_MAX,
    WindowFull,
    WireBuffer,
)

__all__ = [
    "MS",
    "SECOND",
    "SendUnit",
    "SendContext",
    "ReceiveContext",
    "Layer",
    "OrderingLayer",
    "ReliabilityLayer",
    "SlicingLayer",
    "HeartbeatLayer",
    "Resequencer",
    "RawDatagram",
    "BaspDatagram",
    "RawStream",
    "BaspStream",
    "LayerStack",
    "build_stack",
    "STACK_TOKENS",
]

# All durations and timestamps are integer nanoseconds on a monotonic axis.
MS = 1_000_000
SECOND = 1_000_000_000

_SEQ_MASK = 0xFFFF

DEFAULT_RTO = 40 * MS
DEFAULT_DELIVERY_TIMEOUT = 100 * MS
DEFAULT_MAX_PENDING = 5
DEFAULT_MTU = 1400


class SendUnit:
    """A wire unit under construction: header segments plus an opaque body.

    Layers push their header innermost-first; assembly reverses the pushes
    so headers occupy a contiguous prefix in stack order. A unit marked
    ``wire`` already is final bytes (retransmissions, acknowledgements) and
    skips re-assembly when nothing was pushed on top of it.
    """

    __slots__ = ("headers", "body", "wire")

    def __init__(self, body: Buf, wire: bool = False):
        self.headers: list[bytes] = []
        self.body = body
        self.wire = wire

    def push_header(self, header: bytes) -> None:
        self.headers.append(header)

    def size(self) -> int:
        return sum(len(h) for h in self.headers) + len(self.body)

    def assemble(self, out: WireBuffer) -> bytes:
        """Write headers then body into ``out`` and snapshot the unit.

        The body write is the payload copy the send path pays for.
        """
        out.clear()
        for header in reversed(self.headers):
            out.append_header(header)
        out.append_payload(self.body)
        return out.take()

    def assemble_final(self, out: WireBuffer) -> bytes:
        if self.wire and not self.headers and type(self.body) is bytes:
            return self.body
        return self.assemble(out)


class SendContext:
    """Per-send scratch state: the policy buffer and requested timeouts."""

    __slots__ = ("buffer", "timeouts", "now")

    def __init__(self, buffer: Optional[WireBuffer] = None, now: int = 0):
        self.buffer = buffer if buffer is not None else WireBuffer()
        self.timeouts: list[tuple[str, int]] = []
        self.now = now


class ReceiveContext:
    """Per-receive scratch state.

    ``outbound`` collects wire units a layer wants sent back (ACKs,
    retransmissions, beacons) after they were wrapped by the layers above
    the emitter; ``timeouts`` mirrors :class:`SendContext`.
    """

    __slots__ = ("buffer", "outbound", "timeouts", "now", "_controls")

    def __init__(self, buffer: Optional[WireBuffer] = None, now: int = 0):
        self.buffer = buffer if buffer is not None else WireBuffer()
        self.outbound: list[bytes] = []
        self.timeouts: list[tuple[str, int]] = []
        self.now = now
        self._controls: list[tuple[object, bytes]] = []

    def control(self, layer: "Layer", data: bytes) -> None:
        """Queue ``data`` to be sent back out, wrapped by the layers outside ``layer``."""
        self._controls.append((layer, data))


class Layer:
    """Base layer: passes everything through untouched."""

    name = "layer"
    header_size = 0

    def on_send(self, units: list[SendUnit], ctx: SendContext) -> list[SendUnit]:
        return units

    def on_receive(self, unit: Buf, ctx: ReceiveContext) -> list[Buf]:
        return [unit]

    def on_poll(self, now: int, ctx: ReceiveContext) -> list[Buf]:
        """Handle due timeouts; returns inner units released downward."""
        return []

    def next_deadline(self) -> Optional[int]:
        return None


class Resequencer:
    """16-bit serial resequencing state, independent of byte handling.

    Tracks the next expected serial and a bounded map of buffered
    out-of-order items. When buffering another item would exceed
    ``max_pending``, or when the owner forces a flush, delivery resumes at
    the smallest buffered serial and the maximal contiguous run from there
    is emitted. Serials skipped by a flush count as abandoned; a late
    arrival for one of them falls into the past window and is dropped.
    """

    __slots__ = ("next_expected", "pending", "max_pending", "abandoned")

    def __init__(self, max_pending: int = DEFAULT_MAX_PENDING, first: int = 0):
        if max_pending < 1:
            raise ValueError("max_pending must be at least 1")
        self.next_expected = first & _SEQ_MASK
        self.pending: dict[int, object] = {}
        self.max_pending = max_pending
        self.abandoned = 0

    def push(self, seq: int, item) -> tuple[list, bool]:
        """Feed one arrival; returns ``(items now deliverable, item buffered?)``."""
        seq &= _SEQ_MASK
        ne = self.next_expected
        if seq == ne:
            out = [item]
            ne = (ne + 1) & _SEQ_MASK
            pending = self.pending
            while ne in pending:
                out.append(pending.pop(ne))
                ne = (ne + 1) & _SEQ_MASK
            self.next_expected = ne
            return out, False
        if kernels.seq_is_before(seq, ne):
            return [], False
        if seq in self.pending:
            self.pending[seq] = item  # duplicate of a buffered serial: last wins
            return [], True
        if len(self.pending) >= self.max_pending:
            return self._overflow(seq, item)
        self.pending[seq] = item
        return [], True

    def flush(self) -> list:
        """Forced flush: resume from the smallest buffered serial."""
        if not self.pending:
            return []
        return self._run_from(self._smallest())

    def _overflow(self, seq: int, item) -> tuple[list, bool]:
        self.pending[seq] = item
        out = self._run_from(self._smallest())
        return out, seq in self.pending

    def _smallest(self) -> int:
        ne = self.next_expected
        return min(self.pending, key=lambda s: (s - ne) & _SEQ_MASK)

    def _run_from(self, start: int) -> list:
        self.abandoned += (start - self.next_expected) & _SEQ_MASK
        out = []
        s = start
        pending = self.pending
        while s in pending:
            out.append(pending.pop(s))
            s = (s + 1) & _SEQ_MASK
        self.next_expected = s
        return out


class OrderingLayer(Layer):
    """Stamps outgoing units with a 16-bit serial and resequences inbound ones.

    In-order units pass through as views (no copy). Early units are copied
    into a pending buffer of at most ``max_pending`` entries; delivery
    resumes from the smallest buffered serial when the buffer would
    overflow or when the delivery timeout expires. Past-window serials are
    dropped silently.
    """

    name = "ordering"
    header_size = kernels.ORDERING_SIZE

    def __init__(
        self,
        max_pending: int = DEFAULT_MAX_PENDING,
        delivery_timeout: int = DEFAULT_DELIVERY_TIMEOUT,
        first: int = 0,
    ):
        self._send_seq = first & _SEQ_MASK
        self.rx = Resequencer(max_pending, first=first)
        self.delivery_timeout = delivery_timeout
        self._deadline: Optional[int] = None
        self.copied_bytes = 0

    def on_send(self, units, ctx):
        seq = self._send_seq
        for unit in units:
            unit.push_header(kernels.pack_ordering(seq))
            seq = (seq + 1) & _SEQ_MASK
        self._send_seq = seq
        return units

    def on_receive(self, unit, ctx):
        if len(unit) < self.header_size:
            raise MalformedHeader("unit too short for the ordering header")
        seq = kernels.unpack_ordering(unit, 0)
        inner = memoryview(unit)[self.header_size:]
        out, buffered = self.rx.push(seq, inner)
        if buffered:
            # the receive buffer is transient, so a buffered unit must be copied out
            copy = bytes(inner)
            self.rx.pending[seq] = copy
            ctx.buffer.count_copy(len(copy))
            self.copied_bytes += len(copy)
        self._rearm(ctx.now, ctx)
        return out

    def on_poll(self, now, ctx):
        if self._deadline is None or now < self._deadline:
            return []
        out = self.rx.flush()
        self._deadline = None
        self._rearm(now, ctx)
        return out

    def next_deadline(self):
        return self._deadline

    def _rearm(self, now: int, ctx) -> None:
        if not self.rx.pending:
            self._deadline = None
        elif self._deadline is None:
            self._deadline = now + self.delivery_timeout
            ctx.timeouts.append((self.name, self._deadline))


class ReliabilityLayer(Layer):
    """Repeat-until-acknowledged delivery with duplicate suppression.

    Every outgoing unit becomes DATA with a fresh serial and is kept for
    retransmission on a fixed (non-adaptive) timeout until the matching
    ACK arrives. The receive side acknowledges every DATA unit (including
    duplicates) and delivers each serial upward exactly once.
    """

    name = "reliability"
    header_size = kernels.RELIABILITY_SIZE

    WINDOW = 1 << 15  # serial-window safety bound for both directions

    DATA = 0x00
    ACK = 0x01

    def __init__(self, rto: int = DEFAULT_RTO, first: int = 0):
        self.rto = rto
        self._send_seq = first & _SEQ_MASK
        self.unacked: dict[int, list] = {}  # seq -> [deadline, wire bytes]
        self._deadlines: list[tuple[int, int]] = []  # lazy heap of (deadline, seq)
        self._delivered: set[int] = set()
        self._delivered_fifo: deque[int] = deque()
        self.retransmissions = 0
        self.duplicates_suppressed = 0
        self.acks_sent = 0

    def on_send(self, units, ctx):
        out = []
        for unit in units:
            if len(self.unacked) >= self.WINDOW:
                raise WindowFull("2^15 units already await acknowledgement")
            seq = self._send_seq
            self._send_seq = (seq + 1) & _SEQ_MASK
            unit.push_header(kernels.pack_reliability(self.DATA, seq))
            wire = unit.assemble(ctx.buffer)  # materialized now; kept for retransmits
            deadline = ctx.now + self.rto
            self.unacked[seq] = [deadline, wire]
            heapq.heappush(self._deadlines, (deadline, seq))
            ctx.timeouts.append((self.name, deadline))
            out.append(SendUnit(wire, wire=True))
        return out

    def on_receive(self, unit, ctx):
        if len(unit) < self.header_size:
            raise MalformedHeader("unit too short for the reliability header")
        kind, seq = kernels.unpack_reliability(unit, 0)
        if kind == self.DATA:
            ctx.control(self, kernels.pack_reliability(self.ACK, seq))
            self.acks_sent += 1
            if seq in self._delivered:
                self.duplicates_suppressed += 1
                return []
            self._remember(seq)
            return [memoryview(unit)[self.header_size:]]
        if kind == self.ACK:
            self.unacked.pop(seq, None)
            return []
        raise MalformedHeader(f"unknown reliability kind byte 0x{kind:02x}")

    def on_poll(self, now, ctx):
        heap = self._deadlines
        while heap and heap[0][0] <= now:
            deadline, seq = heapq.heappop(heap)
            entry = self.unacked.get(seq)
            if entry is None or entry[0] != deadline:
                continue  # acknowledged or rescheduled since
            entry[0] = now + self.rto
            heapq.heappush(heap, (entry[0], seq))
            self.retransmissions += 1
            ctx.control(self, entry[1])
        deadline = self.next_deadline()
        if deadline is not None:
            ctx.timeouts.append((self.name, deadline))
        return []

    def next_deadline(self):
        heap = self._deadlines
        while heap:
            deadline, seq = heap[0]
            entry = self.unacked.get(seq)
            if entry is None or entry[0] != deadline:
                heapq.heappop(heap)  # stale
                continue
            return deadline
        return None

    def _remember(self, seq: int) -> None:
        self._delivered.add(seq)
        fifo = self._delivered_fifo
        fifo.append(seq)
        if len(fifo) > self.WINDOW:  # keep only the most recent window
            self._delivered.discard(fifo.popleft())


class _Partial:
    __slots__ = ("count", "parts")

    def __init__(self, count: int):
        self.count = count
        self.parts: dict[int, bytes] = {}


class SlicingLayer(Layer):
    """Splits units into fragments that fit one datagram and reassembles them.

    Each fragment carries (message id, index, count). Fragments may arrive
    in any order; the unit is released once all of them are present.
    Conflicting counts for one message id discard the partial state.
    """

    name = "slicing"
    header_size = kernels.SLICE_SIZE

    def __init__(self, mtu: int = DEFAULT_MTU):
        if mtu <= self.header_size:
            raise ValueError("mtu must exceed the slice header size")
        self.mtu = mtu
        self._next_id = 0
        self.partial: dict[int, _Partial] = {}

    def on_send(self, units, ctx):
        budget = self.mtu - self.header_size
        out = []
        for unit in units:
            inner = unit.assemble(ctx.buffer)
            count = max(1, -(-len(inner) // budget))
            if count > 0xFF:
                raise PayloadTooLarge(
                    f"{len(inner)} bytes need {count} slices; the header caps at 255"
                )
            mid = self._next_id
            self._next_id = (mid + 1) & _SEQ_MASK
            view = memoryview(inner)
            for index in range(count):
                piece = SendUnit(view[index * budget:(index + 1) * budget])
                piece.push_header(kernels.pack_slice(mid, index, count))
                out.append(piece)
        return out

    def on_receive(self, unit, ctx):
        if len(unit) < self.header_size:
            raise MalformedHeader("unit too short for the slice header")
        mid, index, count = kernels.unpack_slice(unit, 0)
        if count < 1 or index >= count:
            raise MalformedHeader(f"slice index {index} outside count {count}")
        fragment = memoryview(unit)[self.header_size:]
        if count == 1:
            return [fragment]
        entry = self.partial.get(mid)
        if entry is not None and entry.count != count:
            del self.partial[mid]  # defensive reset on conflicting slice count
            entry = None
        if entry is None:
            entry = self.partial[mid] = _Partial(count)
        entry.parts[index] = bytes(fragment)  # idempotent on duplicates
        ctx.buffer.count_copy(len(fragment))
        if len(entry.parts) == count:
            del self.partial[mid]
            return [b"".join(entry.parts[i] for i in range(count))]
        return []


class HeartbeatLayer(Layer):
    """Liveness beacons and peer-failure suspicion.

    Emits a one-byte beacon every ``interval`` of silence on the send side;
    any inbound unit (data or beacon) refreshes the peer deadline. After
    ``misses`` silent intervals the peer is reported as suspected. Data
    units carry a one-byte marker so beacons and data share the wire.
    """

    name = "heartbeat"
    header_size = 1

    DATA_MARK = b"\x00"
    BEACON = b"\x01"

    def __init__(self, interval: int = SECOND, misses: int = 3):
        self.interval = interval
        self.misses = misses
        self._last_beacon: Optional[int] = None
        self._peer_deadline: Optional[int] = None

    def on_send(self, units, ctx):
        for unit in units:
            unit.push_header(self.DATA_MARK)
        self._last_beacon = ctx.now  # data traffic substitutes for a beacon
        return units

    def on_receive(self, unit, ctx):
        if len(unit) < 1:
            raise MalformedHeader("empty unit at the heartbeat layer")
        self._peer_deadline = ctx.now + self.misses * self.interval
        mark = unit[0]
        if mark == 1:
            if len(unit) != 1:
                raise MalformedHeader("beacon with trailing bytes")
            return []
        if mark == 0:
            return [memoryview(unit)[1:]]
        raise MalformedHeader(f"unknown heartbeat marker 0x{mark:02x}")

    def on_poll(self, now, ctx):
        if self._peer_deadline is None:
            self._peer_deadline = now + self.misses * self.interval
        if self._last_beacon is None or now - self._last_beacon >= self.interval:
            ctx.control(self, self.BEACON)
            self._last_beacon = now
        ctx.timeouts.append((self.name, self.next_deadline()))
        return []

    def status(self, now: int) -> str:
        """``"alive"`` or ``"suspected"`` as of ``now``."""
        if self._peer_deadline is not None and now >= self._peer_deadline:
            return "suspected"
        return "alive"

    def next_deadline(self):
        beat = (self._last_beacon or 0) + self.interval
        if self._peer_deadline is None:
            return beat
        return min(beat, self._peer_deadline)


class RawDatagram:
    """Identity framing: the unit body is the payload; actor ids do not survive."""

    stream = False
    header_size = 0

    def __init__(self):
        self.reads = 0

    def encode(self, msg: Message, ctx: SendContext) -> SendUnit:
        return SendUnit(msg.payload)

    def decode(self, unit: Buf, ctx: ReceiveContext) -> list[Message]:
        self.reads += 1
        return [Message(0, 0, unit)]


class BaspDatagram:
    """Framing codec for datagrams: one header read per unit, payload by view."""

    stream = False
    header_size = kernels.BASP_SIZE

    def __init__(self):
        self.reads = 0

    def encode(self, msg: Message, ctx: SendContext) -> SendUnit:
        size = len(msg.payload)
        if size > U32_MAX:
            raise PayloadTooLarge("payload size does not fit the 32-bit header field")
        unit = SendUnit(msg.payload)
        unit.push_header(kernels.pack_basp(msg.source, msg.destination, size))
        return unit

    def decode(self, unit: Buf, ctx: ReceiveContext) -> list[Message]:
        if len(unit) < self.header_size:
            raise MalformedHeader("datagram shorter than the framing header")
        source, destination, size = kernels.unpack_basp(unit, 0)
        if len(unit) != self.header_size + size:
            raise MalformedHeader(
                f"datagram length {len(unit)} does not match 20+{size}"
            )
        self.reads += 1
        return [Message(source, destination, memoryview(unit)[self.header_size:])]


class RawStream:
    """Identity framing over a stream: every nonempty chunk is one payload.

    Message boundaries survive only as long as the transport preserves the
    written chunks; anything that re-chunks the stream merges or splits
    messages. Useful as the no-op baseline.
    """

    stream = True
    header_size = 0

    def __init__(self):
        self.reads = 0

    def encode(self, msg: Message, ctx: SendContext) -> SendUnit:
        return SendUnit(msg.payload)

    def feed(self, chunk: Buf, ctx: ReceiveContext) -> list[Message]:
        if not len(chunk):
            return []
        self.reads += 1
        return [Message(0, 0, chunk)]


class BaspStream:
    """Length-prefixed framing over a byte stream.

    Implements the two-phase read: accumulate the 20-byte header, decode
    the payload size, accumulate that many payload bytes, emit, repeat.
    Emissions are invariant under any re-chunking of the stream. Frames
    fully contained in one chunk are parsed in place (payloads are views);
    bytes spanning chunk boundaries are copied into a reassembly buffer
    and charged to the copy counter wholesale.
    """

    stream = True
    header_size = kernels.BASP_SIZE

    def __init__(self):
        self._buf = bytearray()
        self.reads = 0

    def encode(self, msg: Message, ctx: SendContext) -> SendUnit:
        size = len(msg.payload)
        if size > U32_MAX:
            raise PayloadTooLarge("payload size does not fit the 32-bit header field")
        unit = SendUnit(msg.payload)
        unit.push_header(kernels.pack_basp(msg.source, msg.destination, size))
        return unit

    def feed(self, chunk: Buf, ctx: ReceiveContext) -> list[Message]:
        if not isinstance(chunk, bytes):
            chunk = bytes(chunk)  # views must outlive this call; keep them immutable
        if not self._buf:
            frames, consumed = kernels.scan_stream(chunk, 0)
            self.reads += 2 * len(frames)
            view = memoryview(chunk)
            out = [
                Message(src, dst, view[off:off + size])
                for src, dst, off, size in frames
            ]
            if consumed < len(chunk):
                self._buf += view[consumed:]
                ctx.buffer.count_copy(len(chunk) - consumed)
            return out
        self._buf += chunk
        ctx.buffer.count_copy(len(chunk))
        frames, consumed = kernels.scan_stream(self._buf, 0)
        self.reads += 2 * len(frames)
        out = [
            Message(src, dst, bytes(self._buf[off:off + size]))
            for src, dst, off, size in frames
        ]
        if consumed:
            del self._buf[:consumed]
        return out

    @property
    def buffered(self) -> int:
        return len(self._buf)


class LayerStack:
    """Ordered protocol layers over a terminal message codec.

    ``layers`` lists the outermost layer first. Stream codecs cannot carry
    datagram-oriented layers (their headers have no framing of their own),
    so layered stacks require a datagram codec.
    """

    def __init__(self, layers: Sequence[Layer], codec, max_unit: Optional[int] = None):
        self.layers = list(layers)
        self.codec = codec
        self.stream = bool(codec.stream)
        self.max_unit = max_unit
        if self.stream and self.layers:
            raise ValueError("layered stacks require datagram framing")

    # -- send path ---------------------------------------------------------

    def send(self, msg: Message, ctx: Optional[SendContext] = None) -> list[bytes]:
        """Run ``msg`` innermost→outermost; returns ready-to-write wire units.

        Stream transports concatenate the units; datagram transports send
        each unit as one datagram.
        """
        if ctx is None:
            ctx = SendContext()
        units = [self.codec.encode(msg, ctx)]
        for layer in reversed(self.layers):
            units = layer.on_send(units, ctx)
        wires = [unit.assemble_final(ctx.buffer) for unit in units]
        if self.max_unit is not None:
            for wire in wires:
                if len(wire) > self.max_unit:
                    raise PayloadTooLarge(
                        f"wire unit of {len(wire)} bytes exceeds the transport "
                        f"limit of {self.max_unit} (add a slicing layer)"
                    )
        return wires

    # -- receive path ------------------------------------------------------

    def receive(self, unit: Buf, ctx: Optional[ReceiveContext] = None) -> list[Message]:
        """Run one wire unit outermost→innermost; returns deliverable messages.

        Buffering layers may emit nothing now and release messages later
        (from a subsequent unit or from :meth:`poll`).
        """
        if ctx is None:
            ctx = ReceiveContext()
        if self.stream:
            msgs = self.codec.feed(unit, ctx)
        else:
            msgs = self._descend(0, unit, ctx)
        self._wrap_controls(ctx)
        return msgs

    def feed(self, chunk: Buf, ctx: Optional[ReceiveContext] = None) -> list[Message]:
        """Stream-transport entry point; alias of :meth:`receive` for chunks."""
        return self.receive(chunk, ctx)

    # -- timeouts ----------------------------------------------------------

    def poll(self, now: int, ctx: Optional[ReceiveContext] = None) -> tuple[list[Message], list[bytes]]:
        """Fire due layer timeouts; returns ``(messages, wire units to send)``."""
        if ctx is None:
            ctx = ReceiveContext(now=now)
        ctx.now = now
        msgs: list[Message] = []
        for idx, layer in enumerate(self.layers):
            for unit in layer.on_poll(now, ctx):
                msgs.extend(self._descend(idx + 1, unit, ctx))
        self._wrap_controls(ctx)
        return msgs, ctx.outbound

    def next_deadline(self) -> Optional[int]:
        deadlines = [d for d in (l.next_deadline() for l in self.layers) if d is not None]
        return min(deadlines) if deadlines else None

    # -- internals ---------------------------------------------------------

    def _descend(self, start: int, unit: Buf, ctx: ReceiveContext) -> list[Message]:
        units = [unit]
        for i in range(start, len(self.layers)):
            layer = self.layers[i]
            released: list[Buf] = []
            for u in units:
                released.extend(layer.on_receive(u, ctx))
            units = released
            if not units:
                return []
        msgs: list[Message] = []
        for u in units:
            msgs.extend(self.codec.decode(u, ctx))
        return msgs

    def _wrap_controls(self, ctx: ReceiveContext) -> None:
        if not ctx._controls:
            return
        controls, ctx._controls = ctx._controls, []
        for layer, data in controls:
            idx = self.layers.index(layer)
            units = [SendUnit(data, wire=True)]
            sctx = SendContext(buffer=ctx.buffer, now=ctx.now)
            for outer in reversed(self.layers[:idx]):
                units = outer.on_send(units, sctx)
            ctx.timeouts.extend(sctx.timeouts)
            for unit in units:
                ctx.outbound.append(unit.assemble_final(ctx.buffer))


def _canonical_order(layers: list[Layer]) -> list[Layer]:
    rank = {"heartbeat": 0, "reliability": 1, "ordering": 2, "slicing": 3}
    return sorted(layers, key=lambda l: rank[l.name])


def build_stack(
    token: str,
    *,
    rto: int = DEFAULT_RTO,
    max_pending: int = DEFAULT_MAX_PENDING,
    delivery_timeout: int = DEFAULT_DELIVERY_TIMEOUT,
    mtu: int = DEFAULT_MTU,
    max_unit: Optional[int] = None,
) -> LayerStack:
    """Build a named stack composition.

    Tokens::

        raw            identity framing over datagrams
        basp           framing header over datagrams
        ordering       resequencing over raw datagrams
        ordering_basp  resequencing over framed datagrams
        rudp           reliability over framed datagrams
        roudp          reliability + ordering over framed datagrams
        full           reliability + ordering + slicing over framed datagrams
        tcp            framing codec over a byte stream
        raw-stream     identity framing over a byte stream
        basp-stream    alias of ``tcp``
    """
    make: dict[str, Callable[[], LayerStack]] = {
        "raw": lambda: LayerStack([], RawDatagram(), max_unit),
        "basp": lambda: LayerStack([], BaspDatagram(), max_unit),
        "ordering": lambda: LayerStack(
            [OrderingLayer(max_pending, delivery_timeout)], RawDatagram(), max_unit
        ),
        "ordering_basp": lambda: LayerStack(
            [OrderingLayer(max_pending, delivery_timeout)], BaspDatagram(), max_unit
        ),
        "rudp": lambda: LayerStack([ReliabilityLayer(rto)], BaspDatagram(), max_unit),
        "roudp": lambda: LayerStack(
            [ReliabilityLayer(rto), OrderingLayer(max_pending, delivery_timeout)],
            BaspDatagram(),
            max_unit,
        ),
        "full": lambda: LayerStack(
            _canonical_order(
                [
                    ReliabilityLayer(rto),
                    OrderingLayer(max_pending, delivery_timeout),
                    SlicingLayer(mtu),
                ]
            ),
            BaspDatagram(),
            max_unit,
        ),
        "tcp": lambda: LayerStack([], BaspStream(), max_unit),
        "basp-stream": lambda: LayerStack([], BaspStream(), max_unit),
        "raw-stream": lambda: LayerStack([], RawStream(), max_unit),
    }
    try:
        return make[token]()
    except KeyError:
        raise ValueError(f"unknown stack token {token!r}") from None


STACK_TOKENS = (
    "raw",
    "basp",
    "ordering",
    "ordering_basp",
    "rudp",
    "roudp",
    "full",
    "tcp",
    "basp-stream",
    "raw-stream",
)
