"""Command-line front end for the benchmark harness.

Usage::

    wirestack bench send     [--stack S] [--payload N ...] [--reps R] [--seed X] [--out F]
    wirestack bench recv     ... same flags ...
    wirestack bench sequence [--scenario ordered|late|dropped|all] ...
    wirestack bench pingpong [--loss P] [--delay MS] [--count N] [--rto MS]
                             [--real-sockets] ...

CSV goes to ``--out`` (default stdout). ``BENCH_SEED`` in the environment
supplies the default seed. Exit codes: 0 success, 2 bad arguments,
1 experiment failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from wirestack.bench import (
    BenchConfig,
    DEFAULT_PAYLOADS,
    PINGPONG_STACKS,
    SEND_RECV_MATRIX,
    run_experiment,
    write_csv,
)
from wirestack.core import ProtocolError
from wirestack.layers import MS, DEFAULT_RTO

__all__ = ["main", "entrypoint", "build_parser"]


def _payload_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad payload list {text!r}") from None
    if any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("payload sizes cannot be negative")
    return values


def _ms(text: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("durations cannot be negative")
    return int(value * MS)


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad probability {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("probability must be within [0, 1]")
    return value


def _default_seed() -> int:
    env = os.environ.get("BENCH_SEED")
    if env is not None:
        try:
            return int(env, 0)
        except ValueError:
            print(f"warning: ignoring unparsable BENCH_SEED={env!r}", file=sys.stderr)
    return 0


_STACK_CHOICES = {
    "send": SEND_RECV_MATRIX,
    "recv": SEND_RECV_MATRIX,
    "sequence": ("ordering", "ordering_basp"),
    "pingpong": PINGPONG_STACKS,
}


def _add_experiment_flags(parser: argparse.ArgumentParser, experiment: str) -> None:
    parser.add_argument("--stack", choices=_STACK_CHOICES[experiment], default=None,
                        help="protocol stack (default: experiment-specific)")
    parser.add_argument("--payload", dest="payloads", type=_payload_list,
                        action="append", metavar="BYTES[,BYTES...]",
                        help="payload sizes; repeatable (default: 128..8192 powers of two)")
    parser.add_argument("--reps", type=int, default=10, help="runs per configuration")
    parser.add_argument("--scenario", choices=("ordered", "late", "dropped", "all"),
                        default="all", help="arrival pattern (sequence experiment)")
    parser.add_argument("--loss", type=_probability, default=0.0,
                        help="per-unit loss probability on the simulated link")
    parser.add_argument("--delay", type=_ms, default=0, metavar="MS",
                        help="one-way link delay in milliseconds")
    parser.add_argument("--count", type=int, default=4000,
                        help="total one-way messages for pingpong")
    parser.add_argument("--rto", type=_ms, default=DEFAULT_RTO, metavar="MS",
                        help="retransmit timeout in milliseconds (default 40)")
    parser.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help="RNG seed (default: $BENCH_SEED or 0)")
    parser.add_argument("--out", default="-", metavar="CSV",
                        help="output path, '-' for stdout")
    parser.add_argument("--batch", type=int, default=256,
                        help="messages per timed batch (send/recv)")
    parser.add_argument("--real-sockets", action="store_true",
                        help="pingpong over loopback sockets instead of the simulator")
    timing = parser.add_mutually_exclusive_group()
    timing.add_argument("--timing", dest="timing", action="store_true", default=None,
                        help="emit wall-clock rows (default for send/recv)")
    timing.add_argument("--no-timing", dest="timing", action="store_false",
                        help="suppress wall-clock rows for byte-stable CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wirestack",
        description="Composable message-passing network stack: benchmark harness",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    bench = commands.add_parser("bench", help="run a benchmark experiment")
    experiments = bench.add_subparsers(dest="experiment", required=True)
    for name, help_text in (
        ("send", "cost to prepare a message for sending"),
        ("recv", "cost to prepare a received unit for processing"),
        ("sequence", "ordering-layer cost over a ten-message arrival pattern"),
        ("pingpong", "bounce a message across an impaired link"),
    ):
        _add_experiment_flags(experiments.add_parser(name, help=help_text), name)
    return parser


def _config_from_args(args: argparse.Namespace) -> BenchConfig:
    payloads = DEFAULT_PAYLOADS
    if args.payloads:
        payloads = tuple(v for chunk in args.payloads for v in chunk)
    if args.count < 2 or args.count % 2:
        raise ValueError("--count must be an even number of one-way messages")
    if args.reps < 1:
        raise ValueError("--reps must be positive")
    if args.batch < 1:
        raise ValueError("--batch must be positive")
    return BenchConfig(
        experiment=args.experiment,
        stack=args.stack,
        payload_sizes=payloads,
        repetitions=args.reps,
        scenario=args.scenario,
        loss=args.loss,
        delay=args.delay,
        count=args.count,
        rto=args.rto,
        seed=args.seed if args.seed is not None else _default_seed(),
        batch=args.batch,
        include_timing=args.timing,
        real_sockets=args.real_sockets,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        records = run_experiment(cfg)
    except (ValueError, ProtocolError) as exc:
        print(f"wirestack: error: {exc}", file=sys.stderr)
        return 1
    if args.out == "-":
        write_csv(records, sys.stdout)
    else:
        with open(args.out, "w", newline="") as fp:
            write_csv(records, fp)
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
