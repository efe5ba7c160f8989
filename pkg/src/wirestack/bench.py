"""Benchmark harness: layer-cost and lossy-link experiments, CSV out.

Four experiments:

* ``send``     measures the cost to prepare a message for sending.
* ``recv``     measures the cost to turn a prepared inbound unit into a message.
* ``sequence`` measures ordering-layer cost over a ten-message arrival pattern
                 (in order / one late by one / one dropped).
* ``pingpong`` has two brokers bounce a message until each side sent and
                 received ``count/2`` times, over an impaired link on the
                 virtual clock (or loss-free real sockets).

Timing metrics are wall-clock and therefore machine-specific; experiments
that run on the virtual clock report virtual durations, which are exact
and reproducible for a fixed seed. ``include_timing`` controls whether
wall-clock rows appear at all: it defaults to on for send/recv and off for
sequence/pingpong so that seeded runs of the latter emit byte-identical
CSV.

CSV schema (column order is the contract)::

    experiment,stack,payload_size,scenario,loss,delay,run_index,metric_name,value,unit

One row per (configuration, run, metric); summary rows use run_index -1.
``delay`` is in milliseconds. Values format as ``repr`` for floats and
``str`` for ints, so identical runs are byte-identical.
"""

from __future__ import annotations

import csv
import gc
import io
import math
import random
import socket
import threading
import time
from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

from wirestack.core import Message, Stalled
from wirestack.layers import (
    DEFAULT_MAX_PENDING,
    DEFAULT_RTO,
    OrderingLayer,
    ReceiveContext,
    ReliabilityLayer,
    SECOND,
    SendContext,
    build_stack,
)
from wirestack.simnet import LinkModel, SimLink, SimStreamLink, VirtualClock
from wirestack.transport import MockTransport, TcpTransport, UnitKind, tcp_listen, udp_pair
from wirestack.broker import EndpointBroker, Multiplexer

__all__ = [
    "BenchConfig",
    "BenchRecord",
    "CSV_FIELDS",
    "DEFAULT_PAYLOADS",
    "SEND_RECV_MATRIX",
    "bench_send",
    "bench_recv",
    "bench_sequence",
    "bench_pingpong",
    "run_experiment",
    "write_csv",
    "render_csv",
    "read_csv",
]

DEFAULT_PAYLOADS = (128, 256, 512, 1024, 2048, 4096, 8192)
SEND_RECV_MATRIX = ("raw", "basp", "ordering", "ordering_basp", "raw-stream", "basp-stream")
PINGPONG_STACKS = ("rudp", "roudp", "tcp")
SEQUENCE_SCENARIOS = ("ordered", "late", "dropped")
SEQUENCE_LENGTH = 10

STALL_WINDOW = 10 * SECOND
SUMMARY_RUN = -1


@dataclass
class BenchConfig:
    """Parameters for one experiment invocation."""

    experiment: str
    stack: Optional[str] = None          # None: per-experiment default
    payload_sizes: tuple[int, ...] = DEFAULT_PAYLOADS
    repetitions: int = 10
    scenario: str = "all"                # sequence scenarios, or one of them
    loss: float = 0.0
    delay: int = 0                       # one-way, nanoseconds
    count: int = 4000
    rto: int = DEFAULT_RTO
    seed: int = 0
    batch: int = 256                     # messages per timed batch (send/recv)
    include_timing: Optional[bool] = None
    real_sockets: bool = False
    max_pending: int = DEFAULT_MAX_PENDING

    def timing_enabled(self) -> bool:
        if self.include_timing is not None:
            return self.include_timing
        return self.experiment in ("send", "recv")


@dataclass
class BenchRecord:
    """One CSV row."""

    experiment: str
    stack: str
    payload_size: int
    scenario: str
    loss: float
    delay: float          # milliseconds
    run_index: int
    metric_name: str
    value: object
    unit: str


CSV_FIELDS = tuple(f.name for f in fields(BenchRecord))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(records, fp) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rec in records:
        writer.writerow(
            [
                rec.experiment,
                rec.stack,
                _fmt(rec.payload_size),
                rec.scenario,
                _fmt(rec.loss),
                _fmt(rec.delay),
                _fmt(rec.run_index),
                rec.metric_name,
                _fmt(rec.value),
                rec.unit,
            ]
        )


def render_csv(records) -> str:
    out = io.StringIO()
    write_csv(records, out)
    return out.getvalue()


def _parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            return text


def read_csv(fp) -> list[BenchRecord]:
    reader = csv.reader(fp)
    header = next(reader)
    if tuple(header) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {header}")
    out = []
    for row in reader:
        out.append(
            BenchRecord(
                experiment=row[0],
                stack=row[1],
                payload_size=int(row[2]),
                scenario=row[3],
                loss=float(row[4]),
                delay=float(row[5]),
                run_index=int(row[6]),
                metric_name=row[7],
                value=_parse_value(row[8]),
                unit=row[9],
            )
        )
    return out


# -- small statistics helpers (package side stays stdlib-only) --------------


def _mean(xs) -> float:
    return sum(xs) / len(xs)


def _stdev(xs) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def _percentile(xs, q: float) -> float:
    """Linear interpolation between closest ranks, q in [0, 100]."""
    s = sorted(xs)
    if len(s) == 1:
        return float(s[0])
    pos = (len(s) - 1) * q / 100.0
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] * (1 - frac) + s[hi] * frac


def _derive_seed(base: int, index: int) -> int:
    x = (base * 0x9E3779B97F4A7C15 + (index + 1) * 0xBF58476D1CE4E5B9) & (2**64 - 1)
    x ^= x >> 31
    return x & (2**64 - 1)


def _payload_warnings(cfg: BenchConfig, stack: str) -> list[BenchRecord]:
    rows = []
    for size in cfg.payload_sizes:
        conforming = size >= 128 and size <= 8192 and (size & (size - 1)) == 0
        if not conforming:
            rows.append(
                BenchRecord(cfg.experiment, stack, size, "", cfg.loss,
                            cfg.delay / 1e6, SUMMARY_RUN,
                            "warning_payload_outside_default_grid", size, "bytes")
            )
    return rows


def _timed(fn: Callable[[], None]) -> int:
    enabled = gc.isenabled()
    gc.disable()
    try:
        t0 = time.perf_counter_ns()
        fn()
        return time.perf_counter_ns() - t0
    finally:
        if enabled:
            gc.enable()


def _is_stream(token: str) -> bool:
    return token in ("tcp", "basp-stream", "raw-stream")


# -- send ---------------------------------------------------------------------


def _low(runs: list[float]) -> float:
    """Robust low estimate: mean of the smallest quarter (at least 3)."""
    k = max(3, len(runs) // 4)
    return _mean(sorted(runs)[:k])


def _emit_timing(records, base, runs) -> None:
    records.append(replace(base, metric_name="time_per_msg_mean", value=_mean(runs), unit="us"))
    records.append(replace(base, metric_name="time_per_msg_std", value=_stdev(runs), unit="us"))
    records.append(replace(base, metric_name="time_per_msg_min", value=min(runs), unit="us"))
    records.append(replace(base, metric_name="time_per_msg_low", value=_low(runs), unit="us"))


def bench_send(cfg: BenchConfig) -> list[BenchRecord]:
    """Time stack_send against a mock transport, per stack and payload size.

    Repetitions are interleaved across every (stack, payload) cell so slow
    machine drift lands on all of them equally instead of skewing the
    payload curves or the stack-versus-stack comparison.
    """
    stacks = (cfg.stack,) if cfg.stack else SEND_RECV_MATRIX
    rng = random.Random(cfg.seed)
    records: list[BenchRecord] = []
    timing = cfg.timing_enabled()
    batches = {}
    wire_bytes = {}
    copied_per_msg = {}
    for token in stacks:
        records.extend(_payload_warnings(cfg, token))
        for size in cfg.payload_sizes:
            # every message carries its own payload buffer: the copy reads a
            # cold source, as real senders do, not one L1-resident blob
            msgs = [Message(1, 2, rng.randbytes(size)) for _ in range(cfg.batch)]
            kind = UnitKind.STREAM if _is_stream(token) else UnitKind.DATAGRAM
            transport = MockTransport(kind, capture=False)
            stack = build_stack(token, rto=cfg.rto, max_pending=cfg.max_pending)
            ctx = SendContext(buffer=transport.send_buffer)
            send = stack.send
            write = transport.write

            def batch(send=send, write=write, msgs=msgs, ctx=ctx):
                for msg in msgs:
                    for unit in send(msg, ctx):
                        write(unit)

            wire_bytes[token, size] = sum(len(u) for u in send(msgs[0], ctx))
            transport.reset_copy_count()
            batch()  # warmup
            copied_per_msg[token, size] = transport.send_buffer.copy_count / cfg.batch
            batches[token, size] = batch
    times_us = {key: [] for key in batches}
    for run in range(cfg.repetitions):
        for (token, size), batch in batches.items():
            per_msg_us = _timed(batch) / 1000 / cfg.batch
            times_us[token, size].append(per_msg_us)
            if timing:
                records.append(BenchRecord("send", token, size, "", cfg.loss,
                                           cfg.delay / 1e6, run,
                                           "time_per_msg", per_msg_us, "us"))
    for token in stacks:
        for size in cfg.payload_sizes:
            base = BenchRecord("send", token, size, "", cfg.loss, cfg.delay / 1e6,
                               SUMMARY_RUN, "", 0, "")
            records.append(replace(base, metric_name="bytes_on_wire",
                                   value=wire_bytes[token, size], unit="bytes"))
            records.append(replace(base, metric_name="copied_per_msg",
                                   value=copied_per_msg[token, size], unit="bytes"))
            if timing:
                _emit_timing(records, base, times_us[token, size])
    return records


# -- recv ---------------------------------------------------------------------


def bench_recv(cfg: BenchConfig) -> list[BenchRecord]:
    """Time stack_receive on pre-encoded in-order units, per stack and payload.

    Inbound units are prepared up front (with the sequence numbers each
    receiving stack expects); repetitions are interleaved across every
    (stack, payload) cell like in :func:`bench_send`. Receive state resets
    per repetition, so each pass replays the same in-order unit sequence.
    """
    stacks = (cfg.stack,) if cfg.stack else SEND_RECV_MATRIX
    rng = random.Random(cfg.seed)
    records: list[BenchRecord] = []
    timing = cfg.timing_enabled()
    prepared = {}
    for token in stacks:
        records.extend(_payload_warnings(cfg, token))
        for size in cfg.payload_sizes:
            payload = rng.randbytes(size)
            sender = build_stack(token, rto=cfg.rto, max_pending=cfg.max_pending)
            units = []
            for _ in range(cfg.batch):
                units.extend(sender.send(Message(1, 2, payload)))
            prepared[token, size] = units
    times_us = {key: [] for key in prepared}
    stats = {}
    for run in range(-1, cfg.repetitions):  # run -1 is the warmup pass
        for (token, size), units in prepared.items():
            kind = UnitKind.STREAM if _is_stream(token) else UnitKind.DATAGRAM
            transport = MockTransport(kind)
            stack = build_stack(token, rto=cfg.rto, max_pending=cfg.max_pending)
            ctx = ReceiveContext(buffer=transport.recv_buffer)
            receive = stack.receive
            counter = [0]

            def batch(receive=receive, units=units, ctx=ctx, counter=counter):
                n = 0
                for unit in units:
                    n += len(receive(unit, ctx))
                counter[0] = n

            elapsed = _timed(batch)
            if run < 0:
                continue
            stats[token, size] = (counter[0], transport.recv_buffer.copy_count,
                                  stack.codec.reads)
            per_msg_us = elapsed / 1000 / cfg.batch
            times_us[token, size].append(per_msg_us)
            if timing:
                records.append(BenchRecord("recv", token, size, "", cfg.loss,
                                           cfg.delay / 1e6, run,
                                           "time_per_msg", per_msg_us, "us"))
    for token in stacks:
        for size in cfg.payload_sizes:
            delivered, copies, reads = stats[token, size]
            base = BenchRecord("recv", token, size, "", cfg.loss, cfg.delay / 1e6,
                               SUMMARY_RUN, "", 0, "")
            records.append(replace(base, metric_name="delivered", value=delivered, unit="count"))
            records.append(replace(base, metric_name="copy_count", value=copies, unit="bytes"))
            records.append(replace(base, metric_name="reads_per_msg", value=reads / cfg.batch, unit="count"))
            if timing:
                _emit_timing(records, base, times_us[token, size])
    return records


# -- sequence -------------------------------------------------------------------


def _sequence_arrivals(units: list[bytes], scenario: str) -> list[bytes]:
    if scenario == "ordered":
        return list(units)
    if scenario == "late":
        # one message late by one: 0, 2, 1, 3, ...
        order = [0, 2, 1] + list(range(3, len(units)))
        return [units[i] for i in order]
    if scenario == "dropped":
        return [units[0]] + units[2:]
    raise ValueError(f"unknown scenario {scenario!r}")


def bench_sequence(cfg: BenchConfig) -> list[BenchRecord]:
    """Ordering-layer cost over a ten-unit arrival pattern (pending cap five)."""
    token = cfg.stack or "ordering"
    scenarios = SEQUENCE_SCENARIOS if cfg.scenario == "all" else (cfg.scenario,)
    rng = random.Random(cfg.seed)
    records: list[BenchRecord] = []
    timing = cfg.timing_enabled()
    records.extend(_payload_warnings(cfg, token))
    for scenario in scenarios:
        for size in cfg.payload_sizes:
            payload = rng.randbytes(size)
            sender = build_stack(token, max_pending=cfg.max_pending)
            units = []
            for _ in range(SEQUENCE_LENGTH):
                units.extend(sender.send(Message(1, 2, payload)))
            arrivals = _sequence_arrivals(units, scenario)
            for run in range(cfg.repetitions):
                transport = MockTransport(UnitKind.DATAGRAM)
                stack = build_stack(token, max_pending=cfg.max_pending)
                ctx = ReceiveContext(buffer=transport.recv_buffer)
                receive = stack.receive
                counter = [0]

                def handle():
                    n = 0
                    for unit in arrivals:
                        n += len(receive(unit, ctx))
                    counter[0] = n

                elapsed = _timed(handle)
                ordering = next(l for l in stack.layers if isinstance(l, OrderingLayer))
                base = BenchRecord("sequence", token, size, scenario, cfg.loss,
                                   cfg.delay / 1e6, run, "", 0, "")
                records.append(replace(base, metric_name="delivered", value=counter[0], unit="count"))
                records.append(replace(base, metric_name="abandoned", value=ordering.rx.abandoned, unit="count"))
                records.append(replace(base, metric_name="copied_bytes", value=transport.recv_buffer.copy_count, unit="bytes"))
                if timing:
                    records.append(replace(base, metric_name="handling_time", value=elapsed / 1000, unit="us"))
    return records


# -- pingpong ---------------------------------------------------------------------


@dataclass
class PingPongResult:
    completion_ns: int
    retransmissions: int
    duplicates_suppressed: int
    delivered_a: int
    delivered_b: int
    wall_ns: int = 0


def run_pingpong_virtual(
    token: str,
    count: int,
    payload_size: int,
    loss: float,
    delay: int,
    rto: int,
    seed: int,
    max_pending: int = DEFAULT_MAX_PENDING,
    duplicate: float = 0.0,
    reorder_jitter: int = 0,
) -> PingPongResult:
    """One seeded ping-pong run on the virtual clock; exact and reproducible."""
    if count < 2 or count % 2:
        raise ValueError("count must be an even number of one-way messages")
    target = count // 2
    clock = VirtualClock()
    model = LinkModel(loss=loss, delay=delay, seed=seed,
                      reorder_jitter=reorder_jitter, duplicate=duplicate)
    if token == "tcp":
        link = SimStreamLink(model, clock, min_rto=rto)
    elif token in ("rudp", "roudp"):
        link = SimLink(model, clock)
    else:
        raise ValueError(f"stack {token!r} not supported for pingpong")
    stack_a = build_stack(token, rto=rto, max_pending=max_pending)
    stack_b = build_stack(token, rto=rto, max_pending=max_pending)
    payload = bytes(payload_size)
    state = {"a": 0, "b": 0, "done": None, "progress": 0}

    def behavior_a(broker, msg):
        state["a"] += 1
        state["progress"] = clock.now()
        if state["a"] >= target:
            state["done"] = clock.now()
        else:
            broker.send(Message(1, 2, payload))

    def behavior_b(broker, msg):
        state["b"] += 1
        state["progress"] = clock.now()
        broker.send(Message(2, 1, payload))

    broker_a = EndpointBroker(link.a, stack_a, behavior_a, clock=clock).start()
    broker_b = EndpointBroker(link.b, stack_b, behavior_b, clock=clock).start()
    broker_a.send(Message(1, 2, payload))
    while state["done"] is None:
        if not clock.advance_next():
            raise Stalled(
                f"event queue drained after {state['a']}+{state['b']} deliveries"
            )
        if clock.now() - state["progress"] > STALL_WINDOW:
            raise Stalled(f"no progress for {STALL_WINDOW // SECOND} virtual seconds")
    if isinstance(link, SimStreamLink):
        retransmissions = sum(link.retransmissions)
        duplicates = 0
    else:
        rel = [l for s in (stack_a, stack_b) for l in s.layers if isinstance(l, ReliabilityLayer)]
        retransmissions = sum(l.retransmissions for l in rel)
        duplicates = sum(l.duplicates_suppressed for l in rel)
    return PingPongResult(
        completion_ns=state["done"],
        retransmissions=retransmissions,
        duplicates_suppressed=duplicates,
        delivered_a=state["a"],
        delivered_b=state["b"],
    )


def run_pingpong_real(token: str, count: int, payload_size: int, rto: int,
                      max_pending: int = DEFAULT_MAX_PENDING,
                      timeout: float = 120.0) -> PingPongResult:
    """Loss-free ping-pong over loopback sockets, two loop threads."""
    if count < 2 or count % 2:
        raise ValueError("count must be an even number of one-way messages")
    target = count // 2
    payload = bytes(payload_size)
    if token == "tcp":
        listener = tcp_listen("127.0.0.1", 0)
        client = socket.create_connection(listener.address, timeout=5)
        listener.sock.settimeout(5)
        server, _ = listener.sock.accept()
        listener.close()
        ta, tb = TcpTransport(client), TcpTransport(server)
    elif token in ("rudp", "roudp"):
        ta, tb = udp_pair()
    else:
        raise ValueError(f"stack {token!r} not supported for pingpong")
    mux_a, mux_b = Multiplexer(), Multiplexer()
    done = threading.Event()
    state = {"a": 0, "b": 0}

    def behavior_a(broker, msg):
        state["a"] += 1
        if state["a"] >= target:
            done.set()
        else:
            broker.send(Message(1, 2, payload))

    def behavior_b(broker, msg):
        state["b"] += 1
        broker.send(Message(2, 1, payload))

    broker_a = EndpointBroker(ta, build_stack(token, rto=rto, max_pending=max_pending),
                              behavior_a, mux=mux_a).start()
    broker_b = EndpointBroker(tb, build_stack(token, rto=rto, max_pending=max_pending),
                              behavior_b, mux=mux_b).start()
    thread_a = threading.Thread(target=mux_a.run, daemon=True)
    thread_b = threading.Thread(target=mux_b.run, daemon=True)
    thread_a.start()
    thread_b.start()
    t0 = time.perf_counter_ns()
    broker_a.send(Message(1, 2, payload))
    completed = done.wait(timeout)
    wall = time.perf_counter_ns() - t0
    mux_a.stop()
    mux_b.stop()
    thread_a.join(5)
    thread_b.join(5)
    broker_a.close()
    broker_b.close()
    mux_a.close()
    mux_b.close()
    if not completed:
        raise Stalled(f"real-socket run incomplete after {timeout}s "
                      f"({state['a']}+{state['b']} deliveries)")
    rel = [l for s in (broker_a.stack, broker_b.stack) for l in s.layers
           if isinstance(l, ReliabilityLayer)]
    return PingPongResult(
        completion_ns=wall,
        retransmissions=sum(l.retransmissions for l in rel),
        duplicates_suppressed=sum(l.duplicates_suppressed for l in rel),
        delivered_a=state["a"],
        delivered_b=state["b"],
        wall_ns=wall,
    )


def bench_pingpong(cfg: BenchConfig) -> list[BenchRecord]:
    token = cfg.stack or "rudp"
    payload_size = cfg.payload_sizes[0] if cfg.payload_sizes else 128
    records: list[BenchRecord] = []
    completions: list[float] = []
    for run in range(cfg.repetitions):
        if cfg.real_sockets:
            if cfg.loss:
                raise ValueError("real-socket runs support loss=0 only; "
                                 "use the simulated link for loss sweeps")
            result = run_pingpong_real(token, cfg.count, payload_size, cfg.rto,
                                       cfg.max_pending)
        else:
            result = run_pingpong_virtual(
                token, cfg.count, payload_size, cfg.loss, cfg.delay, cfg.rto,
                _derive_seed(cfg.seed, run), cfg.max_pending,
            )
        completion_s = result.completion_ns / 1e9
        completions.append(completion_s)
        base = BenchRecord("pingpong", token, payload_size, "", cfg.loss,
                           cfg.delay / 1e6, run, "", 0, "")
        time_unit = "s_wall" if cfg.real_sockets else "s_virtual"
        records.append(replace(base, metric_name="completion_time", value=completion_s, unit=time_unit))
        records.append(replace(base, metric_name="retransmissions", value=result.retransmissions, unit="count"))
        records.append(replace(base, metric_name="duplicates_suppressed", value=result.duplicates_suppressed, unit="count"))
        records.append(replace(base, metric_name="delivered_a", value=result.delivered_a, unit="count"))
        records.append(replace(base, metric_name="delivered_b", value=result.delivered_b, unit="count"))
    base = BenchRecord("pingpong", token, payload_size, "", cfg.loss,
                       cfg.delay / 1e6, SUMMARY_RUN, "", 0, "")
    time_unit = "s_wall" if cfg.real_sockets else "s_virtual"
    records.append(replace(base, metric_name="completion_time_mean", value=_mean(completions), unit=time_unit))
    records.append(replace(base, metric_name="completion_time_p5", value=_percentile(completions, 5), unit=time_unit))
    records.append(replace(base, metric_name="completion_time_p95", value=_percentile(completions, 95), unit=time_unit))
    return records


EXPERIMENTS = {
    "send": bench_send,
    "recv": bench_recv,
    "sequence": bench_sequence,
    "pingpong": bench_pingpong,
}


def run_experiment(cfg: BenchConfig) -> list[BenchRecord]:
    try:
        runner = EXPERIMENTS[cfg.experiment]
    except KeyError:
        raise ValueError(f"unknown experiment {cfg.experiment!r}") from None
    return runner(cfg)
