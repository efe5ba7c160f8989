# cython: language_level=3
# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled codec kernels.

Bit-compatible twin of ``wirestack._kernels_py``; see that module for the
wire-format documentation. Keep the two in lockstep.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize

BACKEND = "c"

BASP_SIZE = 20
ORDERING_SIZE = 2
RELIABILITY_SIZE = 3
SLICE_SIZE = 4

SEQ_SPACE = 1 << 16
SEQ_HALF = 1 << 15

DEF _BASP = 20
DEF _ORD = 2
DEF _REL = 3
DEF _SLC = 4


cdef inline void _w16(unsigned char *p, unsigned int v) noexcept nogil:
    p[0] = <unsigned char> (v >> 8)
    p[1] = <unsigned char> v


cdef inline void _w32(unsigned char *p, unsigned long v) noexcept nogil:
    p[0] = <unsigned char> (v >> 24)
    p[1] = <unsigned char> (v >> 16)
    p[2] = <unsigned char> (v >> 8)
    p[3] = <unsigned char> v


cdef inline void _w64(unsigned char *p, unsigned long long v) noexcept nogil:
    p[0] = <unsigned char> (v >> 56)
    p[1] = <unsigned char> (v >> 48)
    p[2] = <unsigned char> (v >> 40)
    p[3] = <unsigned char> (v >> 32)
    p[4] = <unsigned char> (v >> 24)
    p[5] = <unsigned char> (v >> 16)
    p[6] = <unsigned char> (v >> 8)
    p[7] = <unsigned char> v


cdef inline unsigned int _r16(const unsigned char *p) noexcept nogil:
    return (<unsigned int> p[0] << 8) | p[1]


cdef inline unsigned long _r32(const unsigned char *p) noexcept nogil:
    return ((<unsigned long> p[0] << 24) | (<unsigned long> p[1] << 16)
            | (<unsigned long> p[2] << 8) | p[3])


cdef inline unsigned long long _r64(const unsigned char *p) noexcept nogil:
    return ((<unsigned long long> p[0] << 56) | (<unsigned long long> p[1] << 48)
            | (<unsigned long long> p[2] << 40) | (<unsigned long long> p[3] << 32)
            | (<unsigned long long> p[4] << 24) | (<unsigned long long> p[5] << 16)
            | (<unsigned long long> p[6] << 8) | p[7])


def pack_basp(unsigned long long source, unsigned long long destination,
              unsigned long payload_size):
    """source u64 | destination u64 | payload_size u32 -> 20 bytes."""
    if payload_size > 0xFFFFFFFFUL:
        raise ValueError("payload size out of 32-bit range")
    cdef unsigned char out[_BASP]
    _w64(&out[0], source)
    _w64(&out[8], destination)
    _w32(&out[16], payload_size)
    return PyBytes_FromStringAndSize(<char *> out, _BASP)


def unpack_basp(const unsigned char[::1] buf, Py_ssize_t offset=0):
    if offset < 0 or buf.shape[0] - offset < _BASP:
        raise ValueError("buffer too short for framing header")
    cdef const unsigned char *p = &buf[offset]
    return _r64(p), _r64(p + 8), _r32(p + 16)


def pack_ordering(unsigned long sequence):
    """sequence u16 -> 2 bytes."""
    if sequence > 0xFFFFUL:
        raise ValueError("sequence out of 16-bit range")
    cdef unsigned char out[_ORD]
    _w16(&out[0], <unsigned int> sequence)
    return PyBytes_FromStringAndSize(<char *> out, _ORD)


def unpack_ordering(const unsigned char[::1] buf, Py_ssize_t offset=0):
    if offset < 0 or buf.shape[0] - offset < _ORD:
        raise ValueError("buffer too short for ordering header")
    return _r16(&buf[offset])


def pack_reliability(unsigned long kind, unsigned long sequence):
    """kind u8 (0=DATA, 1=ACK) | sequence u16 -> 3 bytes."""
    if kind > 1:
        raise ValueError("reliability kind must be 0 (DATA) or 1 (ACK)")
    if sequence > 0xFFFFUL:
        raise ValueError("sequence out of 16-bit range")
    cdef unsigned char out[_REL]
    out[0] = <unsigned char> kind
    _w16(&out[1], <unsigned int> sequence)
    return PyBytes_FromStringAndSize(<char *> out, _REL)


def unpack_reliability(const unsigned char[::1] buf, Py_ssize_t offset=0):
    if offset < 0 or buf.shape[0] - offset < _REL:
        raise ValueError("buffer too short for reliability header")
    cdef const unsigned char *p = &buf[offset]
    return p[0], _r16(p + 1)


def pack_slice(unsigned long message_id, unsigned long slice_index,
               unsigned long slice_count):
    """message_id u16 | slice_index u8 | slice_count u8 -> 4 bytes."""
    if message_id > 0xFFFFUL:
        raise ValueError("message id out of 16-bit range")
    if slice_index > 0xFF or slice_count < 1 or slice_count > 0xFF:
        raise ValueError("slice index/count out of 8-bit range")
    if slice_index >= slice_count:
        raise ValueError("slice index must be below slice count")
    cdef unsigned char out[_SLC]
    _w16(&out[0], <unsigned int> message_id)
    out[2] = <unsigned char> slice_index
    out[3] = <unsigned char> slice_count
    return PyBytes_FromStringAndSize(<char *> out, _SLC)


def unpack_slice(const unsigned char[::1] buf, Py_ssize_t offset=0):
    if offset < 0 or buf.shape[0] - offset < _SLC:
        raise ValueError("buffer too short for slice header")
    cdef const unsigned char *p = &buf[offset]
    return _r16(p), p[2], p[3]


def seq_is_before(unsigned long a, unsigned long b):
    """Serial-number order on the 16-bit sequence space.

    True iff ``a`` precedes ``b``: a != b and (b - a) mod 2^16 < 2^15.
    The antipodal distance 2^15 resolves to "before" when a < b numerically.
    """
    a &= 0xFFFFUL
    b &= 0xFFFFUL
    if a == b:
        return False
    cdef unsigned long d = (b - a) & 0xFFFFUL
    if d == 0x8000UL:
        return a < b
    return d < 0x8000UL


def scan_stream(const unsigned char[::1] buf, Py_ssize_t offset=0):
    """Scan complete frames out of a stream buffer.

    Returns ``(frames, consumed)``; each frame is
    ``(source, destination, payload_offset, payload_size)``.
    """
    cdef Py_ssize_t n = buf.shape[0]
    cdef Py_ssize_t end
    cdef unsigned long size
    cdef const unsigned char *p
    frames = []
    if offset < 0:
        raise ValueError("negative offset")
    while n - offset >= _BASP:
        p = &buf[offset]
        size = _r32(p + 16)
        end = offset + _BASP + <Py_ssize_t> size
        if end > n:
            break
        frames.append((_r64(p), _r64(p + 8), offset + _BASP, <Py_ssize_t> size))
        offset = end
    return frames, offset
