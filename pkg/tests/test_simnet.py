"""Virtual clock semantics and impaired-link statistics."""

import math
import random

import pytest
import scipy.stats

from wirestack.layers import MS, SECOND
from wirestack.simnet import LinkModel, SimLink, SimStreamLink, VirtualClock


# -- clock -------------------------------------------------------------------


def test_clock_advance_zero_fires_only_due_events():
    clock = VirtualClock()
    fired = []
    clock.schedule(0, lambda: fired.append("now"))
    clock.schedule(1, lambda: fired.append("later"))
    clock.advance(0)
    assert fired == ["now"]


def test_event_at_40ms_fires_on_the_second_advance():
    clock = VirtualClock()
    fired = []
    clock.schedule_in(40 * MS, lambda: fired.append(clock.now()))
    clock.advance(39 * MS)
    assert fired == []
    clock.advance(1 * MS)
    assert fired == [40 * MS]
    clock.advance(100 * MS)
    assert fired == [40 * MS]  # once, not again


def test_clock_orders_ties_by_insertion():
    clock = VirtualClock()
    fired = []
    for tag in "abc":
        clock.schedule(10, lambda t=tag: fired.append(t))
    clock.advance(10)
    assert fired == ["a", "b", "c"]


def test_clock_never_goes_backwards():
    clock = VirtualClock(start=100)
    with pytest.raises(ValueError):
        clock.advance(-1)
    with pytest.raises(ValueError):
        clock.advance_to(50)


def test_callbacks_may_schedule_within_the_advance():
    clock = VirtualClock()
    fired = []

    def chain():
        fired.append(clock.now())
        if len(fired) < 4:
            clock.schedule_in(10, chain)

    clock.schedule(0, chain)
    clock.advance(100)
    assert fired == [0, 10, 20, 30]


def test_cancelled_timer_never_fires():
    clock = VirtualClock()
    fired = []
    timer = clock.schedule(5, lambda: fired.append(1))
    timer.cancel()
    clock.advance(10)
    assert fired == []
    assert clock.next_deadline() is None


def test_interleaved_sources_keep_global_timestamp_order():
    # events scheduled from two independent producers fire in merged
    # timestamp order, matching a sorted reference
    rng = random.Random(42)
    clock = VirtualClock()
    fired = []
    expected = []
    for producer in range(2):
        stamps = sorted(rng.randrange(0, 10_000) for _ in range(200))
        for i, at in enumerate(stamps):
            expected.append((at, producer, i))
            clock.schedule(at, lambda e=(at, producer, i): fired.append(e))
    clock.advance(10_000)
    # stable sort by timestamp == merged order with insertion-order ties
    assert fired == sorted(expected, key=lambda e: e[0])


# -- datagram link -------------------------------------------------------------


def relay(loss=0.0, delay=0, seed=0, jitter=0, duplicate=0.0):
    clock = VirtualClock()
    link = SimLink(LinkModel(loss=loss, delay=delay, seed=seed,
                             reorder_jitter=jitter, duplicate=duplicate), clock)
    got = []
    link.b.set_receiver(got.append)
    return clock, link, got


def test_lossless_zero_delay_relay():
    clock, link, got = relay()
    link.a.write(b"one")
    link.a.write(b"two")
    clock.advance(0)
    assert got == [b"one", b"two"]


def test_total_loss_delivers_nothing():
    clock, link, got = relay(loss=1.0)
    for i in range(100):
        link.a.write(bytes([i]))
    clock.advance(SECOND)
    assert got == []
    assert link.dropped[0] == 100


def test_delay_schedules_delivery_in_the_future():
    clock, link, got = relay(delay=10 * MS)
    link.a.write(b"x")
    clock.advance(10 * MS - 1)
    assert got == []
    clock.advance(1)
    assert got == [b"x"]


def test_loss_rate_within_three_sigma():
    clock, link, got = relay(loss=0.1, seed=1234)
    for i in range(10_000):
        link.a.write(i.to_bytes(2, "big"))
    clock.advance(SECOND)
    sigma = math.sqrt(10_000 * 0.1 * 0.9)  # ~30
    assert abs(len(got) - 9000) < 3 * sigma


def test_identical_seeds_produce_identical_traces():
    def trace(seed):
        clock, link, got = relay(loss=0.3, delay=1 * MS, seed=seed,
                                 jitter=4 * MS, duplicate=0.1)
        for i in range(500):
            link.a.write(i.to_bytes(2, "big"))
        clock.advance(SECOND)
        return got

    assert trace(77) == trace(77)
    assert trace(77) != trace(78)  # and the seed actually matters


def test_duplicate_delivers_twice():
    clock, link, got = relay(duplicate=1.0)
    link.a.write(b"x")
    clock.advance(0)
    assert got == [b"x", b"x"]
    assert link.duplicated[0] == 1


def test_drops_are_independent_bernoulli_run_lengths():
    # chi-square on gap lengths between drops against the geometric pmf
    p = 0.1
    clock = VirtualClock()
    link = SimLink(LinkModel(loss=p, seed=2024), clock)
    n = 200_000
    outcomes = []
    for i in range(n):
        before = link.dropped[0]
        link.a.write(b"u")
        outcomes.append(link.dropped[0] > before)
    clock.advance(SECOND)
    gaps = []
    run = 0
    for dropped in outcomes:
        if dropped:
            gaps.append(run)
            run = 0
        else:
            run += 1
    # bucket gap lengths 0..k-1 plus a tail bucket
    k = 12
    observed = [0] * (k + 1)
    for g in gaps:
        observed[min(g, k)] += 1
    total = len(gaps)
    expected = [total * (1 - p) ** i * p for i in range(k)]
    expected.append(total * (1 - p) ** k)
    chi2 = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    pvalue = scipy.stats.chi2.sf(chi2, df=k)  # k+1 buckets, probabilities known
    assert pvalue > 0.01, (chi2, pvalue)


def test_bidirectional_traffic():
    clock, link, got_b = relay()
    got_a = []
    link.a.set_receiver(got_a.append)
    link.a.write(b"to-b")
    link.b.write(b"to-a")
    clock.advance(0)
    assert got_b == [b"to-b"] and got_a == [b"to-a"]


# -- emulated stream over loss ---------------------------------------------------


def test_stream_link_is_reliable_and_ordered_despite_loss():
    clock = VirtualClock()
    link = SimStreamLink(LinkModel(loss=0.4, seed=5), clock, min_rto=40 * MS)
    got = []
    link.b.set_receiver(got.append)
    sent = [bytes([i]) * 3 for i in range(50)]
    for unit in sent:
        link.a.write(unit)
    while clock.advance_next():
        pass
    assert got == sent  # nothing lost, order preserved
    assert sum(link.retransmissions) > 0
    assert clock.now() > 0  # the loss penalty consumed virtual time


def test_stream_link_backoff_doubles():
    clock = VirtualClock()
    link = SimStreamLink(LinkModel(loss=0.0, seed=5), clock, min_rto=40 * MS)
    # force three consecutive losses by stubbing the RNG stream
    class Rig:
        def __init__(self):
            self.draws = iter([0.0, 0.0, 0.0, 1.0])
        def random(self):
            return next(self.draws)
    link.model = LinkModel(loss=0.5, seed=0)
    link.rng = Rig()
    got = []
    link.b.set_receiver(got.append)
    link.a.write(b"x")
    while clock.advance_next():
        pass
    # 40 + 80 + 160 ms of backoff before the successful attempt
    assert clock.now() == (40 + 80 + 160) * MS
    assert got == [b"x"]
