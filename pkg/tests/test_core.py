"""Header codecs, serial arithmetic, and the instrumented wire buffer."""

import random

import pytest

from oracles import serial_before_ref
from wirestack import core
from wirestack.core import (
    BaspHeader,
    Incomplete,
    Message,
    OrderingHeader,
    ReliabilityHeader,
    ReliabilityKind,
    SliceHeader,
    WireBuffer,
    decode_basp,
    decode_ordering,
    decode_reliability,
    decode_slice,
    encode_basp,
    encode_ordering,
    encode_reliability,
    encode_slice,
    seq_is_before,
)


def test_encode_basp_example_layout():
    out = WireBuffer()
    n = encode_basp(BaspHeader(1, 2, 0), out)
    assert n == 20
    assert bytes(out.data) == (
        b"\x00\x00\x00\x00\x00\x00\x00\x01"
        b"\x00\x00\x00\x00\x00\x00\x00\x02"
        b"\x00\x00\x00\x00"
    )
    assert out.copy_count == 0  # headers are not payload


def test_encode_basp_zero_case():
    out = WireBuffer()
    encode_basp(BaspHeader(0, 0, 0), out)
    assert bytes(out.data) == bytes(20)


def test_header_sizes_are_constant():
    rng = random.Random(1)
    for _ in range(50):
        out = WireBuffer()
        assert encode_basp(BaspHeader(rng.getrandbits(64), rng.getrandbits(64),
                                      rng.getrandbits(32)), out) == 20
        assert len(out) == 20
        out.clear()
        assert encode_ordering(OrderingHeader(rng.getrandbits(16)), out) == 2
        assert len(out) == 2
        out.clear()
        kind = ReliabilityKind(rng.getrandbits(1))
        assert encode_reliability(ReliabilityHeader(kind, rng.getrandbits(16)), out) == 3
        assert len(out) == 3
        out.clear()
        count = rng.randrange(1, 256)
        header = SliceHeader(rng.getrandbits(16), rng.randrange(count), count)
        assert encode_slice(header, out) == 4
        assert len(out) == 4


def test_decode_encode_roundtrip_random_fields():
    rng = random.Random(0xC0DE)
    for _ in range(200):
        h = BaspHeader(rng.getrandbits(64), rng.getrandbits(64), rng.getrandbits(32))
        out = WireBuffer()
        encode_basp(h, out)
        decoded, consumed = decode_basp(out.data)
        assert decoded == h and consumed == 20

        o = OrderingHeader(rng.getrandbits(16))
        out = WireBuffer()
        encode_ordering(o, out)
        assert decode_ordering(out.data) == (o, 2)

        r = ReliabilityHeader(ReliabilityKind(rng.getrandbits(1)), rng.getrandbits(16))
        out = WireBuffer()
        encode_reliability(r, out)
        assert decode_reliability(out.data) == (r, 3)

        count = rng.randrange(1, 256)
        s = SliceHeader(rng.getrandbits(16), rng.randrange(count), count)
        out = WireBuffer()
        encode_slice(s, out)
        assert decode_slice(out.data) == (s, 4)


def test_decode_basp_twenty_zero_bytes():
    header, consumed = decode_basp(bytes(20))
    assert header == BaspHeader(0, 0, 0) and consumed == 20


def test_decode_basp_incomplete():
    with pytest.raises(Incomplete):
        decode_basp(bytes(19))
    with pytest.raises(Incomplete):
        decode_basp(b"")


def test_decode_reliability_rejects_unknown_kind():
    with pytest.raises(core.MalformedHeader):
        decode_reliability(b"\x02\x00\x00")


def test_reliability_kind_bytes():
    out = WireBuffer()
    encode_reliability(ReliabilityHeader(ReliabilityKind.DATA, 0), out)
    assert out.data[0] == 0x00
    out.clear()
    encode_reliability(ReliabilityHeader(ReliabilityKind.ACK, 0), out)
    assert out.data[0] == 0x01


def test_seq_is_before_examples():
    assert seq_is_before(0, 1)
    assert seq_is_before(0xFFFF, 0x0000)  # wrap-around
    assert not seq_is_before(5, 5)


def test_seq_is_before_matches_reference_on_sample():
    rng = random.Random(99)
    pairs = [(rng.getrandbits(16), rng.getrandbits(16)) for _ in range(4000)]
    pairs += [(0, 0x8000), (0x8000, 0), (1, 0x8001), (0x8001, 1), (0xFFFF, 0x7FFF)]
    for a, b in pairs:
        assert seq_is_before(a, b) == serial_before_ref(a, b), (a, b)


def test_seq_is_before_tournament_on_windows():
    # within any window of < 2^15 consecutive serials, exactly one of
    # before(a,b) / before(b,a) holds for a != b
    rng = random.Random(7)
    for _ in range(30):
        base = rng.getrandbits(16)
        width = rng.randrange(2, 1 << 15)
        a = (base + rng.randrange(width)) & 0xFFFF
        b = (base + rng.randrange(width)) & 0xFFFF
        if a == b:
            assert not seq_is_before(a, b) and not seq_is_before(b, a)
        else:
            assert seq_is_before(a, b) != seq_is_before(b, a)


def test_seq_antipodal_tiebreak_is_deterministic_and_asymmetric():
    for a in (0, 1, 123, 0x7FFF):
        b = (a + 0x8000) & 0xFFFF
        assert seq_is_before(a, b) == (a < b)
        assert seq_is_before(b, a) == (b < a)


def test_wire_buffer_counts_only_payload():
    buf = WireBuffer()
    buf.append_header(b"\x00" * 20)
    assert buf.copy_count == 0
    buf.append_payload(b"abc")
    assert buf.copy_count == 3
    buf.count_copy(10)
    assert buf.copy_count == 13
    buf.clear()
    assert buf.copy_count == 13  # survives clear
    buf.reset_copy_count()
    assert buf.copy_count == 0


def test_message_compares_across_payload_kinds():
    m1 = Message(1, 2, b"xyz")
    m2 = Message(1, 2, memoryview(b"xyz"))
    assert m1 == m2
    assert m2.payload_bytes() == b"xyz"
