"""Stream framing: two-phase reads, chunking independence, read counting."""

import random

from oracles import random_partition
from wirestack.core import Message
from wirestack.layers import BaspStream, LayerStack, ReceiveContext, build_stack


def encode_messages(msgs):
    tx = build_stack("basp-stream")
    return b"".join(unit for m in msgs for unit in tx.send(m))


def feed_all(chunks):
    rx = build_stack("basp-stream")
    got = []
    for chunk in chunks:
        got.extend(rx.receive(chunk))
    return [(m.source, m.destination, m.payload_bytes()) for m in got]


def test_single_message_byte_by_byte_equals_whole_buffer():
    msg = Message(11, 22, b"0123456789abcdef")
    blob = encode_messages([msg])
    whole = feed_all([blob])
    assert whole == [(11, 22, msg.payload)]
    trickle = feed_all([blob[i:i + 1] for i in range(len(blob))])
    assert trickle == whole


def test_every_split_point_yields_identical_emissions():
    msg = Message(1, 2, b"split-me-anywhere")
    blob = encode_messages([msg])
    whole = feed_all([blob])
    for cut in range(len(blob) + 1):
        assert feed_all([blob[:cut], blob[cut:]]) == whole, cut


def test_empty_chunk_changes_nothing():
    rx = build_stack("basp-stream")
    assert rx.receive(b"") == []
    codec = rx.codec
    assert codec.buffered == 0 and codec.reads == 0


def test_two_concatenated_messages_in_one_chunk():
    msgs = [Message(1, 2, b"first"), Message(3, 4, b"second")]
    blob = encode_messages(msgs)
    got = feed_all([blob])
    assert got == [(1, 2, b"first"), (3, 4, b"second")]


def test_random_rechunking_is_invariant():
    rng = random.Random(0xF00D)
    for _ in range(60):
        msgs = [
            Message(rng.getrandbits(16), rng.getrandbits(16),
                    rng.randbytes(rng.randrange(0, 400)))
            for _ in range(rng.randrange(1, 5))
        ]
        blob = encode_messages(msgs)
        baseline = feed_all([blob])
        assert baseline == [(m.source, m.destination, bytes(m.payload)) for m in msgs]
        for _ in range(5):
            assert feed_all(random_partition(rng, blob)) == baseline


def test_stream_codec_counts_two_reads_per_message():
    msgs = [Message(1, 2, bytes(64)) for _ in range(10)]
    blob = encode_messages(msgs)
    rx = build_stack("basp-stream")
    rx.receive(blob)
    assert rx.codec.reads == 20
    # datagram framing does one read per unit
    tx = build_stack("basp")
    rxd = build_stack("basp")
    for _ in range(10):
        rxd.receive(tx.send(Message(1, 2, bytes(64)))[0])
    assert rxd.codec.reads == 10


def test_whole_frame_chunks_are_parsed_without_copies():
    tx = build_stack("basp-stream")
    rx = build_stack("basp-stream")
    ctx = ReceiveContext()
    for _ in range(5):
        unit = tx.send(Message(1, 2, bytes(2048)))[0]
        got = rx.receive(unit, ctx)
        assert len(got) == 1
    assert ctx.buffer.copy_count == 0


def test_cross_chunk_fragments_are_charged_to_the_copy_counter():
    blob = encode_messages([Message(1, 2, bytes(100))])
    rx = build_stack("basp-stream")
    ctx = ReceiveContext()
    rx.receive(blob[:50], ctx)
    assert ctx.buffer.copy_count == 50
    got = rx.receive(blob[50:], ctx)
    assert len(got) == 1
    assert ctx.buffer.copy_count == len(blob)


def test_incomplete_tail_is_held_until_completed():
    msgs = [Message(9, 9, b"A" * 33), Message(9, 9, b"B" * 7)]
    blob = encode_messages(msgs)
    rx = build_stack("basp-stream")
    head, tail = blob[:len(blob) - 3], blob[len(blob) - 3:]
    first = rx.receive(head)
    assert [m.payload_bytes() for m in first] == [b"A" * 33]
    assert rx.codec.buffered > 0
    second = rx.receive(tail)
    assert [m.payload_bytes() for m in second] == [b"B" * 7]
    assert rx.codec.buffered == 0


def test_raw_stream_passes_chunks_through():
    tx = build_stack("raw-stream")
    rx = build_stack("raw-stream")
    unit = tx.send(Message(0, 0, b"chunk"))[0]
    got = rx.receive(unit)
    assert len(got) == 1 and got[0].payload_bytes() == b"chunk"
    assert rx.receive(b"") == []
