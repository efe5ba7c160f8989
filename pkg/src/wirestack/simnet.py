"""Deterministic in-process impaired-link simulation.

Replaces a VM-hosted network emulator with two pieces that keep the
controlled variables (loss probability, one-way delay, seeded randomness)
and make every experiment bit-reproducible:

* :class:`VirtualClock`, an integer-nanosecond event clock advanced
  explicitly; events fire in timestamp order, ties in insertion order.
* :class:`SimLink`, a bidirectional datagram link with per-unit Bernoulli
  loss, fixed one-way delay, optional reorder jitter and duplication, all
  drawn from one seeded RNG.

:class:`SimStreamLink` offers a qualitative stand-in for a kernel stream
transport over the same impairments: loss hits individual units before a
built-in retransmission with doubling backoff, and delivery stays reliable
and in order. It is an emulation for trend comparison, not a reproduction
of any kernel's congestion control.

Everything here is single-threaded and driven by whoever owns the clock.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Callable, Optional

from wirestack.core import Buf, Closed
from wirestack.layers import MS
from wirestack.transport import TransportPolicy, UnitKind

__all__ = [
    "VirtualClock",
    "Timer",
    "LinkModel",
    "SimLink",
    "SimEndpoint",
    "SimStreamLink",
]


class Timer:
    """Handle for a scheduled callback; cancellation is lazy."""

    __slots__ = ("at", "seq", "callback", "cancelled")

    def __init__(self, at: int, seq: int, callback: Callable[[], None]):
        self.at = at
        self.seq = seq
        self.callback = callback
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "Timer") -> bool:
        return (self.at, self.seq) < (other.at, other.seq)


class VirtualClock:
    """Monotonic virtual time plus an event queue.

    Time never decreases. :meth:`advance` delivers every event with a
    timestamp up to the new time, in timestamp order (ties resolve in
    insertion order); callbacks may schedule further events, including at
    already-passed virtual instants, which then fire within the same
    advance.
    """

    def __init__(self, start: int = 0):
        self._now = start
        self._heap: list[Timer] = []
        self._seq = 0

    def now(self) -> int:
        return self._now

    def schedule(self, at: int, callback: Callable[[], None]) -> Timer:
        if at < self._now:
            at = self._now
        timer = Timer(at, self._seq, callback)
        self._seq += 1
        heapq.heappush(self._heap, timer)
        return timer

    def schedule_in(self, delay: int, callback: Callable[[], None]) -> Timer:
        return self.schedule(self._now + delay, callback)

    def next_deadline(self) -> Optional[int]:
        heap = self._heap
        while heap and heap[0].cancelled:
            heapq.heappop(heap)
        return heap[0].at if heap else None

    def fire_due(self) -> int:
        """Run events due at the current time (used by the poll loop)."""
        return self.advance_to(self._now)

    def advance(self, duration: int) -> int:
        if duration < 0:
            raise ValueError("time cannot go backwards")
        return self.advance_to(self._now + duration)

    def advance_to(self, target: int) -> int:
        """Advance to ``target``, firing due events; returns the fire count."""
        if target < self._now:
            raise ValueError("time cannot go backwards")
        fired = 0
        heap = self._heap
        while heap and heap[0].at <= target:
            timer = heapq.heappop(heap)
            if timer.cancelled:
                continue
            self._now = timer.at
            fired += 1
            timer.callback()
        self._now = target
        return fired

    def advance_next(self) -> bool:
        """Jump to the next scheduled event; False when the queue is empty."""
        deadline = self.next_deadline()
        if deadline is None:
            return False
        self.advance_to(deadline)
        return True

    def pending(self) -> int:
        return sum(1 for t in self._heap if not t.cancelled)


@dataclass
class LinkModel:
    """Impairment parameters for one simulated link (applied per direction).

    ``loss`` and ``duplicate`` are per-unit probabilities; ``delay`` is the
    one-way latency and ``reorder_jitter`` an extra uniform delay, both in
    nanoseconds. Identical (traffic, seed, model) triples produce identical
    delivery traces.
    """

    loss: float = 0.0
    delay: int = 0
    seed: int = 0
    reorder_jitter: int = 0
    duplicate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must be a probability")
        if not 0.0 <= self.duplicate <= 1.0:
            raise ValueError("duplicate must be a probability")
        if self.delay < 0 or self.reorder_jitter < 0:
            raise ValueError("delays cannot be negative")


class SimEndpoint(TransportPolicy):
    """Datagram transport bound to one side of a :class:`SimLink`.

    Push-fed: inbound units are delivered through the receiver callback
    installed with :meth:`set_receiver` (falling back to an inbox drained
    via :meth:`read`).
    """

    unit_kind = UnitKind.DATAGRAM

    def __init__(self, link: "SimLink", direction: int):
        super().__init__()
        self._link = link
        self._direction = direction
        self._receiver: Optional[Callable[[bytes], None]] = None
        self._inbox: list[bytes] = []

    def set_receiver(self, receiver: Callable[[bytes], None]) -> None:
        self._receiver = receiver
        while self._inbox:
            receiver(self._inbox.pop(0))

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("simulated endpoint is closed")
        self._link.transmit(self._direction, bytes(unit))

    def read(self) -> Optional[bytes]:
        return self._inbox.pop(0) if self._inbox else None

    def deliver(self, unit: bytes) -> None:
        if self.closed:
            return
        if self._receiver is not None:
            self._receiver(unit)
        else:
            self._inbox.append(unit)


class SimLink:
    """Bidirectional impaired datagram link on a virtual clock.

    Endpoints ``a`` and ``b`` are transports; a unit written on one side is
    dropped with probability ``loss``, otherwise scheduled for delivery on
    the other side after ``delay`` plus a uniform jitter draw. With
    ``duplicate`` probability a second copy is delivered as well.
    """

    def __init__(self, model: LinkModel, clock: VirtualClock):
        self.model = model
        self.clock = clock
        self.rng = random.Random(model.seed)
        self.a = SimEndpoint(self, 0)
        self.b = SimEndpoint(self, 1)
        self.sent = [0, 0]
        self.dropped = [0, 0]
        self.delivered = [0, 0]
        self.duplicated = [0, 0]

    def transmit(self, direction: int, unit: bytes) -> None:
        self.sent[direction] += 1
        model = self.model
        rng = self.rng
        if model.loss and rng.random() < model.loss:
            self.dropped[direction] += 1
            return
        self._schedule(direction, unit)
        if model.duplicate and rng.random() < model.duplicate:
            self.duplicated[direction] += 1
            self._schedule(direction, unit)

    def _schedule(self, direction: int, unit: bytes) -> None:
        model = self.model
        at = self.clock.now() + model.delay
        if model.reorder_jitter:
            at += int(self.rng.random() * model.reorder_jitter)
        target = self.b if direction == 0 else self.a
        def deliver():
            self.delivered[direction] += 1
            target.deliver(unit)
        self.clock.schedule(at, deliver)


class _StreamEndpoint(TransportPolicy):
    """One side of a :class:`SimStreamLink`; see there."""

    unit_kind = UnitKind.STREAM

    def __init__(self, link: "SimStreamLink", direction: int):
        super().__init__()
        self._link = link
        self._direction = direction
        self._receiver: Optional[Callable[[bytes], None]] = None
        self._inbox: list[bytes] = []

    def set_receiver(self, receiver: Callable[[bytes], None]) -> None:
        self._receiver = receiver
        while self._inbox:
            receiver(self._inbox.pop(0))

    def write(self, unit: Buf) -> None:
        if self.closed:
            raise Closed("simulated endpoint is closed")
        self._link.transmit(self._direction, bytes(unit))

    def read(self) -> Optional[bytes]:
        return self._inbox.pop(0) if self._inbox else None

    def deliver(self, chunk: bytes) -> None:
        if self.closed:
            return
        if self._receiver is not None:
            self._receiver(chunk)
        else:
            self._inbox.append(chunk)


class SimStreamLink:
    """Reliable in-order stream over an impaired path (qualitative emulation).

    Loss applies to each written unit before an internal retransmission
    whose timeout starts at ``min_rto`` and doubles per consecutive loss of
    the same unit, resetting on success. Delivery time therefore grows
    with the accumulated backoff; bytes are never lost or reordered. This
    mimics the trend of a loss-adaptive kernel stream, nothing more.
    """

    def __init__(self, model: LinkModel, clock: VirtualClock, min_rto: int = 40 * MS):
        self.model = model
        self.clock = clock
        self.min_rto = min_rto
        self.rng = random.Random(model.seed)
        self.a = _StreamEndpoint(self, 0)
        self.b = _StreamEndpoint(self, 1)
        self.retransmissions = [0, 0]
        self._last_arrival = [0, 0]

    def transmit(self, direction: int, unit: bytes) -> None:
        now = self.clock.now()
        penalty = 0
        rto = self.min_rto
        while self.model.loss and self.rng.random() < self.model.loss:
            penalty += rto
            rto *= 2
            self.retransmissions[direction] += 1
        arrival = max(now + penalty + self.model.delay, self._last_arrival[direction])
        self._last_arrival[direction] = arrival
        target = self.b if direction == 0 else self.a
        self.clock.schedule(arrival, lambda: target.deliver(unit))
