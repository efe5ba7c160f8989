"""Identities, message records, wire headers, and bit-exact codecs.

Wire formats (all integers big-endian, sizes constant):

  framing (BASP) header:  source u64 | destination u64 | payload_size u32   20 bytes
  ordering header:        sequence u16                                       2 bytes
  reliability header:     kind u8 (0x00=DATA, 0x01=ACK) | sequence u16       3 bytes
  slice header:           message_id u16 | slice_index u8 | slice_count u8   4 bytes

Sequence numbers live in a 16-bit space and wrap; :func:`seq_is_before`
compares them under serial-number arithmetic with a deterministic
tie-break at the antipode.

Everything here is a passive value: instances may move freely between
threads, nothing mutates shared state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import ClassVar, Union

from wirestack import kernels
from wirestack.kernels import seq_is_before  # re-exported; see module docstring

__all__ = [
    "ActorId",
    "NodeId",
    "Buf",
    "ProtocolError",
    "Incomplete",
    "MalformedHeader",
    "PayloadTooLarge",
    "WindowFull",
    "Closed",
    "PeerClosed",
    "AddressInUse",
    "ConnectionRefused",
    "Unreachable",
    "Stalled",
    "WireBuffer",
    "BaspHeader",
    "OrderingHeader",
    "ReliabilityKind",
    "ReliabilityHeader",
    "SliceHeader",
    "Message",
    "encode_basp",
    "decode_basp",
    "encode_ordering",
    "decode_ordering",
    "encode_reliability",
    "decode_reliability",
    "encode_slice",
    "decode_slice",
    "seq_is_before",
]

# 64-bit unsigned identities. Plain ints; range-checked at the codec boundary.
ActorId = int
NodeId = int

# Anything the codecs accept as input bytes.
Buf = Union[bytes, bytearray, memoryview]

U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF


class ProtocolError(Exception):
    """Base class for all stack errors."""


class Incomplete(ProtocolError):
    """Not enough bytes yet; a stream framer should wait for more data."""


class MalformedHeader(ProtocolError):
    """A wire unit is shorter than the header some layer expected."""


class PayloadTooLarge(ProtocolError):
    """Unit exceeds what the transport (or the slicing layer) can carry."""


class WindowFull(ProtocolError):
    """Too many unacknowledged units for the 16-bit sequence space."""


class Closed(ProtocolError):
    """The endpoint is gone (stream close/reset, or local close)."""


class PeerClosed(Closed):
    """Asynchronous notification that the remote endpoint went away."""


class AddressInUse(ProtocolError):
    """Local bind failed because the address is taken."""


class ConnectionRefused(ProtocolError):
    """The remote endpoint actively refused the connection."""


class Unreachable(ProtocolError):
    """No route to the remote endpoint."""


class Stalled(ProtocolError):
    """An experiment made no progress within its watchdog window."""


class WireBuffer:
    """Growable byte buffer that counts payload-byte copies.

    ``append_header`` is free; ``append_payload`` and ``count_copy`` tally
    payload bytes moved into or out of the buffer. The counter only ever
    grows and survives :meth:`clear`; it resets solely through
    :meth:`reset_copy_count`, which benchmarks call between measurements.
    """

    __slots__ = ("data", "copy_count")

    def __init__(self) -> None:
        self.data = bytearray()
        self.copy_count = 0

    def append_header(self, chunk: Buf) -> None:
        self.data += chunk

    def append_payload(self, chunk: Buf) -> None:
        self.data += chunk
        self.copy_count += len(chunk)

    def count_copy(self, nbytes: int) -> None:
        """Record ``nbytes`` payload bytes copied somewhere else on our behalf."""
        self.copy_count += nbytes

    def reset_copy_count(self) -> None:
        self.copy_count = 0

    def clear(self) -> None:
        del self.data[:]

    def take(self) -> bytes:
        """Immutable snapshot of the assembled unit (handoff, not a payload copy)."""
        return bytes(self.data)

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class BaspHeader:
    """Framing header: who sent it, who gets it, how many payload bytes follow."""

    source: ActorId
    destination: ActorId
    payload_size: int

    SIZE: ClassVar[int] = kernels.BASP_SIZE


@dataclass(frozen=True)
class OrderingHeader:
    sequence: int

    SIZE: ClassVar[int] = kernels.ORDERING_SIZE


class ReliabilityKind(IntEnum):
    DATA = 0x00
    ACK = 0x01


@dataclass(frozen=True)
class ReliabilityHeader:
    kind: ReliabilityKind
    sequence: int

    SIZE: ClassVar[int] = kernels.RELIABILITY_SIZE


@dataclass(frozen=True)
class SliceHeader:
    message_id: int
    slice_index: int
    slice_count: int

    SIZE: ClassVar[int] = kernels.SLICE_SIZE


@dataclass(slots=True)
class Message:
    """Application payload plus source/destination actor ids.

    ``payload`` may be any bytes-like object; receive paths hand out
    memoryviews into the wire unit to keep in-order delivery copy-free.
    Views compare equal to the bytes they describe, so roundtrip checks
    can compare messages directly.
    """

    source: ActorId
    destination: ActorId
    payload: Buf

    def payload_bytes(self) -> bytes:
        return bytes(self.payload)


def encode_basp(header: BaspHeader, out: WireBuffer) -> int:
    """Append the 20-byte framing header to ``out``; returns 20.

    Header bytes are not payload, so ``out.copy_count`` is untouched.
    """
    out.append_header(
        kernels.pack_basp(header.source, header.destination, header.payload_size)
    )
    return BaspHeader.SIZE


def decode_basp(data: Buf, offset: int = 0) -> tuple[BaspHeader, int]:
    """Parse a framing header; returns ``(header, bytes consumed)``.

    Raises :class:`Incomplete` when fewer than 20 bytes are available,
    signalling a stream framer to wait for more data.
    """
    if len(data) - offset < BaspHeader.SIZE:
        raise Incomplete("need 20 bytes for the framing header")
    source, destination, size = kernels.unpack_basp(data, offset)
    return BaspHeader(source, destination, size), BaspHeader.SIZE


def encode_ordering(header: OrderingHeader, out: WireBuffer) -> int:
    out.append_header(kernels.pack_ordering(header.sequence))
    return OrderingHeader.SIZE


def decode_ordering(data: Buf, offset: int = 0) -> tuple[OrderingHeader, int]:
    if len(data) - offset < OrderingHeader.SIZE:
        raise Incomplete("need 2 bytes for the ordering header")
    return OrderingHeader(kernels.unpack_ordering(data, offset)), OrderingHeader.SIZE


def encode_reliability(header: ReliabilityHeader, out: WireBuffer) -> int:
    out.append_header(kernels.pack_reliability(int(header.kind), header.sequence))
    return ReliabilityHeader.SIZE


def decode_reliability(data: Buf, offset: int = 0) -> tuple[ReliabilityHeader, int]:
    if len(data) - offset < ReliabilityHeader.SIZE:
        raise Incomplete("need 3 bytes for the reliability header")
    kind, sequence = kernels.unpack_reliability(data, offset)
    if kind not in (0, 1):
        raise MalformedHeader(f"unknown reliability kind byte 0x{kind:02x}")
    return ReliabilityHeader(ReliabilityKind(kind), sequence), ReliabilityHeader.SIZE


def encode_slice(header: SliceHeader, out: WireBuffer) -> int:
    out.append_header(
        kernels.pack_slice(header.message_id, header.slice_index, header.slice_count)
    )
    return SliceHeader.SIZE


def decode_slice(data: Buf, offset: int = 0) -> tuple[SliceHeader, int]:
    if len(data) - offset < SliceHeader.SIZE:
        raise Incomplete("need 4 bytes for the slice header")
    message_id, index, count = kernels.unpack_slice(data, offset)
    if count < 1 or index >= count:
        raise MalformedHeader(f"slice index {index} outside count {count}")
    return SliceHeader(message_id, index, count), SliceHeader.SIZE
