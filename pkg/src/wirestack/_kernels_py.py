"""Pure-Python codec kernels.

Reference implementation of the hot byte-level operations. A compiled
twin lives in ``_speedups.pyx``; ``wirestack.kernels`` picks whichever is
importable. Both backends must stay bit-compatible: the codec test suite
runs against every backend it can import.

All multi-byte integers are big-endian (network order).
"""

import struct

BACKEND = "python"

BASP_SIZE = 20
ORDERING_SIZE = 2
RELIABILITY_SIZE = 3
SLICE_SIZE = 4

SEQ_SPACE = 1 << 16
SEQ_HALF = 1 << 15

_U64_MAX = (1 << 64) - 1
_U32_MAX = (1 << 32) - 1

_BASP = struct.Struct(">QQI")
_ORDERING = struct.Struct(">H")
_RELIABILITY = struct.Struct(">BH")
_SLICE = struct.Struct(">HBB")


def pack_basp(source, destination, payload_size):
    """source u64 | destination u64 | payload_size u32 -> 20 bytes."""
    if not (0 <= source <= _U64_MAX and 0 <= destination <= _U64_MAX):
        raise ValueError("actor id out of 64-bit range")
    if not 0 <= payload_size <= _U32_MAX:
        raise ValueError("payload size out of 32-bit range")
    return _BASP.pack(source, destination, payload_size)


def unpack_basp(buf, offset=0):
    if len(buf) - offset < BASP_SIZE:
        raise ValueError("buffer too short for framing header")
    return _BASP.unpack_from(buf, offset)


def pack_ordering(sequence):
    """sequence u16 -> 2 bytes."""
    if not 0 <= sequence < SEQ_SPACE:
        raise ValueError("sequence out of 16-bit range")
    return _ORDERING.pack(sequence)


def unpack_ordering(buf, offset=0):
    if len(buf) - offset < ORDERING_SIZE:
        raise ValueError("buffer too short for ordering header")
    return _ORDERING.unpack_from(buf, offset)[0]


def pack_reliability(kind, sequence):
    """kind u8 (0=DATA, 1=ACK) | sequence u16 -> 3 bytes."""
    if kind not in (0, 1):
        raise ValueError("reliability kind must be 0 (DATA) or 1 (ACK)")
    if not 0 <= sequence < SEQ_SPACE:
        raise ValueError("sequence out of 16-bit range")
    return _RELIABILITY.pack(kind, sequence)


def unpack_reliability(buf, offset=0):
    if len(buf) - offset < RELIABILITY_SIZE:
        raise ValueError("buffer too short for reliability header")
    return _RELIABILITY.unpack_from(buf, offset)


def pack_slice(message_id, slice_index, slice_count):
    """message_id u16 | slice_index u8 | slice_count u8 -> 4 bytes."""
    if not 0 <= message_id < SEQ_SPACE:
        raise ValueError("message id out of 16-bit range")
    if not (0 <= slice_index <= 0xFF and 1 <= slice_count <= 0xFF):
        raise ValueError("slice index/count out of 8-bit range")
    if slice_index >= slice_count:
        raise ValueError("slice index must be below slice count")
    return _SLICE.pack(message_id, slice_index, slice_count)


def unpack_slice(buf, offset=0):
    if len(buf) - offset < SLICE_SIZE:
        raise ValueError("buffer too short for slice header")
    return _SLICE.unpack_from(buf, offset)


def seq_is_before(a, b):
    """Serial-number order on the 16-bit sequence space.

    True iff ``a`` precedes ``b``: a != b and (b - a) mod 2^16 < 2^15.
    The antipodal distance 2^15 is ambiguous by construction; it is
    resolved deterministically as "before" when a < b numerically.
    """
    a &= 0xFFFF
    b &= 0xFFFF
    if a == b:
        return False
    d = (b - a) & 0xFFFF
    if d == SEQ_HALF:
        return a < b
    return d < SEQ_HALF


def scan_stream(buf, offset=0):
    """Scan complete frames out of a stream buffer.

    Returns ``(frames, consumed)`` where each frame is
    ``(source, destination, payload_offset, payload_size)`` and
    ``consumed`` is the offset of the first incomplete frame. The parse is
    the two-phase read: a full 20-byte header first, then the payload size
    it announces.
    """
    n = len(buf)
    frames = []
    while n - offset >= BASP_SIZE:
        source, destination, size = _BASP.unpack_from(buf, offset)
        end = offset + BASP_SIZE + size
        if end > n:
            break
        frames.append((source, destination, offset + BASP_SIZE, size))
        offset = end
    return frames, offset
