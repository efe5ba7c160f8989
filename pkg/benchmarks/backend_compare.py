#!/usr/bin/env python3
"""Compare the compiled codec kernels against the pure-Python fallback.

Two views:

* kernel-level: times each hot operation against both backend modules
  imported side by side (pack/unpack, serial compare, stream scan);
* stack-level: runs ``wirestack bench send``/``recv`` in two subprocesses,
  one forced onto the pure backend via ``WIRESTACK_PURE=1``, and compares
  the per-message low estimates.

Usage::

    python benchmarks/backend_compare.py [--loops 200000] [--skip-stack]
"""

import argparse
import io
import os
import random
import subprocess
import sys
import time

from wirestack import _kernels_py

try:
    from wirestack import _speedups
except ImportError:
    _speedups = None


def best_of(fn, loops, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn(loops)
        best = min(best, (time.perf_counter_ns() - t0) / loops)
    return best


def kernel_benchmarks(mod, loops):
    rng = random.Random(7)
    header = mod.pack_basp(123456789, 987654321, 4096)
    frame_blob = b"".join(
        mod.pack_basp(i, i + 1, 256) + bytes(256) for i in range(64)
    )
    pairs = [(rng.getrandbits(16), rng.getrandbits(16)) for _ in range(256)]

    def bench_pack(n):
        pack = mod.pack_basp
        for i in range(n):
            pack(i, i, 4096)

    def bench_unpack(n):
        unpack = mod.unpack_basp
        for _ in range(n):
            unpack(header, 0)

    def bench_seq(n):
        cmp = mod.seq_is_before
        for i in range(n):
            a, b = pairs[i & 255]
            cmp(a, b)

    def bench_scan(n):
        scan = mod.scan_stream
        for _ in range(n // 64):
            scan(frame_blob, 0)

    return {
        "pack_basp": best_of(bench_pack, loops),
        "unpack_basp": best_of(bench_unpack, loops),
        "seq_is_before": best_of(bench_seq, loops),
        "scan_stream (per frame)": best_of(bench_scan, loops),
    }


def run_stack_bench(experiment, pure):
    env = dict(os.environ)
    if pure:
        env["WIRESTACK_PURE"] = "1"
    else:
        env.pop("WIRESTACK_PURE", None)
    proc = subprocess.run(
        [sys.executable, "-m", "wirestack.cli", "bench", experiment,
         "--reps", "12", "--batch", "256", "--seed", "0"],
        env=env, capture_output=True, text=True, timeout=600, check=True,
    )
    sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from wirestack.bench import read_csv
    rows = read_csv(io.StringIO(proc.stdout))
    return {
        (r.stack, r.payload_size): r.value
        for r in rows
        if r.metric_name == "time_per_msg_low"
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--loops", type=int, default=200_000)
    parser.add_argument("--skip-stack", action="store_true",
                        help="kernel-level comparison only")
    args = parser.parse_args()

    if _speedups is None:
        print("compiled backend not built; showing pure-Python numbers only")
        for name, ns in kernel_benchmarks(_kernels_py, args.loops).items():
            print(f"  {name:24s} {ns:8.1f} ns")
        return 0

    print(f"kernel ops, best of 5 x {args.loops} loops (ns/op):")
    pure = kernel_benchmarks(_kernels_py, args.loops)
    fast = kernel_benchmarks(_speedups, args.loops)
    print(f"  {'operation':24s} {'python':>10s} {'c':>10s} {'speedup':>9s}")
    for name in pure:
        ratio = pure[name] / fast[name]
        print(f"  {name:24s} {pure[name]:10.1f} {fast[name]:10.1f} {ratio:8.1f}x")

    if args.skip_stack:
        return 0

    print("\nfull send path, per-message low estimate (us):")
    print(f"  {'stack/payload':24s} {'python':>10s} {'c':>10s} {'speedup':>9s}")
    pure_rows = run_stack_bench("send", pure=True)
    fast_rows = run_stack_bench("send", pure=False)
    for key in sorted(fast_rows):
        stack, size = key
        if size not in (128, 1024, 8192):
            continue
        label = f"{stack}/{size}"
        ratio = pure_rows[key] / fast_rows[key]
        print(f"  {label:24s} {pure_rows[key]:10.3f} {fast_rows[key]:10.3f} {ratio:8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
