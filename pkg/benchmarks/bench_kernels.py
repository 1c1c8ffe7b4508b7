"""Compiled versus pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times the exact-cover oracle (branch and bound, enumeration) and the fused
protocol loop under every available backend, checks the backends return the
same answers, and then times a whole run in a child interpreter with
DISTVC_FORCE_PURE=1 (stdlib Fraction rationals, no compiled modules).
"""

from __future__ import annotations

import argparse
import os
import random
import subprocess
import sys
import time

import distvc._kernels as kernels
from distvc.engine import RunConfig, run
from distvc.exact import RATIONAL_BACKEND
from distvc.graph import generate


def best_of(repeat, fn):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def oracle_inputs(count, n, seed=7):
    rng = random.Random(seed)
    cases = []
    for _ in range(count):
        adj = [0] * n
        for u in range(n):
            for v in range(u + 1, n):
                if rng.random() < 0.4:
                    adj[u] |= 1 << v
                    adj[v] |= 1 << u
        cases.append((n, adj, [rng.randint(1, 50) for _ in range(n)]))
    return cases


def bench_oracle(repeat):
    print("exact oracle")
    for label, fn_name, count, n in (
        ("branch and bound, 200 graphs n=22", "mwvc_branch_and_bound", 200, 22),
        ("enumeration, 20 graphs n=16", "mwvc_enumerate", 20, 16),
    ):
        cases = oracle_inputs(count, n)
        results = {}
        for name, mod in sorted(kernels.available_backends("oracle").items()):
            fn = getattr(mod, fn_name)
            secs, out = best_of(repeat, lambda: [fn(*c)[0] for c in cases])
            results[name] = (secs, out)
            print(f"  {label:36s} {name:7s} {secs * 1e3:9.2f} ms")
        answers = {tuple(out) for _, out in results.values()}
        assert len(answers) == 1, "backends disagree"
        if {"python", "cython"} <= results.keys():
            print(f"  {'':36s} speedup {results['python'][0] / results['cython'][0]:.1f}x")


LOOP_CASES = [
    ("star delta=4096, eps=1/65536, bcs", "star", {"delta": 4096}, "unit", "1/65536", "bcs"),
    ("bounded degree n=5000 d=8, eps=1/64, auto", "bounded_degree_random", {"n": 5000, "d": 8}, "uniform:100", "1/64", "auto"),
    ("clique n=200, eps=1/64, bcs", "clique", {"n": 200}, "unit", "1/64", "bcs"),
]


def bench_loop(repeat):
    print(f"protocol loop (rationals: {RATIONAL_BACKEND})")
    saved = kernels.run_protocol
    try:
        for label, family, params, weights, eps, mode in LOOP_CASES:
            g = generate(family, params, 1, weights)
            reports = {}
            times = {}
            for name, mod in sorted(kernels.available_backends("loop").items()):
                kernels.run_protocol = mod.run_protocol
                secs, (report, _) = best_of(repeat, lambda: run(RunConfig(g, eps, mode, record_trace=False)))
                times[name] = secs
                reports[name] = report.to_json()
                per = secs / max(1, sum(report.iterations)) * 1e6
                print(f"  {label:44s} {name:7s} {secs:8.3f} s  {per:6.2f} us/vertex-iteration")
            assert len(set(reports.values())) == 1, "backends disagree"
            if {"python", "cython"} <= times.keys():
                print(f"  {'':44s} speedup {times['python'] / times['cython']:.2f}x")
            secs, _ = best_of(1, lambda: run(RunConfig(g, eps, mode, record_trace=False, engine="reference")))
            print(f"  {label:44s} {'ref':7s} {secs:8.3f} s  (per-vertex reference engine)")
    finally:
        kernels.run_protocol = saved


CHILD = """
import time
from distvc.engine import RunConfig, run
from distvc.exact import RATIONAL_BACKEND
from distvc.graph import generate
g = generate("bounded_degree_random", {"n": 5000, "d": 8}, 1, "uniform:100")
t = time.perf_counter()
r, _ = run(RunConfig(g, "1/64", "auto", record_trace=False))
print(RATIONAL_BACKEND, time.perf_counter() - t, r.cover_weight, r.dual_sum)
"""


def bench_rationals():
    print("whole run in a fresh interpreter")
    outs = {}
    for label, env in (("default", {}), ("DISTVC_FORCE_PURE=1", {"DISTVC_FORCE_PURE": "1"})):
        proc = subprocess.run(
            [sys.executable, "-c", CHILD], env={**os.environ, **env}, capture_output=True, text=True, check=True
        )
        backend, secs, weight, dual = proc.stdout.split()
        outs[label] = (float(secs), weight, dual)
        print(f"  {label:22s} rationals={backend:9s} {float(secs):8.3f} s  cover={weight} dual={dual}")
    assert len({o[1:] for o in outs.values()}) == 1, "results differ between backends"
    print(f"  speedup {outs['DISTVC_FORCE_PURE=1'][0] / outs['default'][0]:.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"backends in use: {kernels.BACKEND}")
    bench_oracle(args.repeat)
    bench_loop(args.repeat)
    bench_rationals()


if __name__ == "__main__":
    main()
