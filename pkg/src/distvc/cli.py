"""Command-line entry point: ``distvc run | sweep | verify | gen``.

Exit codes: 0 success, 1 a verification check failed, 2 bad arguments or
configuration, 3 an input file is missing, 4 an input file is unreadable
or malformed.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .engine import RunConfig, RunReport, Trace, TraceFormatError, run
from .exact import Rat, ceil_iteration_bound, parse_rat, rat_str
from .graph import FAMILIES, GraphError, WeightedGraph, generate, parse, serialize
from .verify import DEFAULT_ORACLE_CAP, exact_mwvc, verify_run

log = logging.getLogger("distvc")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_FILE = 4

CSV_COLUMNS = [
    "family",
    "n",
    "delta",
    "epsilon",
    "gamma_mode",
    "gamma",
    "z",
    "K",
    "max_iterations",
    "bound",
    "rounds",
    "cover_weight",
    "dual_sum",
    "ratio_vs_dual",
    "opt_if_available",
    "messages",
    "max_payload_bits",
]

_GEN_PARAMS = ("delta", "n", "p", "d", "attempts")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{path}: no such file", EXIT_MISSING_FILE)
    try:
        return p.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_BAD_FILE) from None


def _write(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _gen_params(args) -> dict:
    return {k: getattr(args, k) for k in _GEN_PARAMS if getattr(args, k) is not None}


def _load_graph(args) -> WeightedGraph:
    if args.graph is not None:
        try:
            return parse(_read(args.graph))
        except GraphError as exc:
            raise CliError(f"{args.graph}: {exc}", EXIT_BAD_FILE) from None
    try:
        return generate(args.gen, _gen_params(args), args.seed, args.weights)
    except (GraphError, ValueError) as exc:
        raise CliError(f"cannot generate {args.gen}: {exc}") from None


def _rational(text: str, what: str):
    try:
        return parse_rat(text)
    except ValueError as exc:
        raise CliError(f"{what}: {exc}") from None


# -- run ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    g = _load_graph(args)
    if args.two_approx:
        eps = Rat(1, g.n * g.max_weight + 1)
    else:
        eps = _rational(args.epsilon, "--epsilon")
    if not eps > 0:
        raise CliError(f"epsilon must be > 0, got {args.epsilon}")
    K = _rational(args.K, "--K") if args.K is not None else None
    try:
        config = RunConfig(
            g,
            eps,
            args.gamma,
            analysis_K=K,
            workers=args.workers,
            record_trace=args.trace is not None,
            engine=args.engine,
        )
        config.params  # resolve gamma and z now so config errors surface here
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report, trace = run(config)
    verdicts = verify_run(report, g, oracle=args.oracle, oracle_cap=args.oracle_cap)
    _write(args.report, report.to_json())
    if args.trace is not None:
        _write(args.trace, trace.to_jsonl())
    ok = all(verdicts)
    print(
        f"cover_weight={report.cover_weight} dual_sum={rat_str(report.dual_sum)} "
        f"ratio_bound={rat_str(report.ratio_bound)} iterations={report.max_iterations} "
        f"rounds={report.rounds} max_bits={report.max_payload_bits} "
        f"checks={'pass' if ok else 'FAIL'}",
        file=sys.stderr if args.report == "-" else sys.stdout,
    )
    for v in verdicts:
        if not v:
            print(v, file=sys.stderr)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- sweep -------------------------------------------------------------------------


def _expand(exp: dict) -> list[tuple]:
    family = exp["family"]
    if family not in FAMILIES:
        raise CliError(f"sweep: unknown family {family!r}")
    params = exp.get("params", {})
    keys = list(params)
    values = [v if isinstance(v, list) else [v] for v in params.values()]
    seeds = exp.get("seeds", [0])
    epsilons = exp.get("epsilons", [])
    modes = exp.get("gamma_modes", ["auto"])
    weights = exp.get("weights", "unit")
    K = exp.get("K")
    jobs = []
    for combo in itertools.product(*values):
        for seed in seeds:
            for eps in epsilons:
                for mode in modes:
                    jobs.append((family, dict(zip(keys, combo)), int(seed), weights, str(eps), str(mode), K))
    return jobs


def sweep_row(job, verify: bool = True, oracle: bool = False, oracle_cap: int = DEFAULT_ORACLE_CAP) -> dict:
    family, params, seed, weights, eps, mode, K = job
    g = generate(family, params, seed, weights)
    config = RunConfig(
        g, parse_rat(eps), mode, analysis_K=parse_rat(str(K)) if K is not None else None, record_trace=False
    )
    report, _ = run(config)
    if verify:
        verdicts = verify_run(report, g)
        failed = [str(v) for v in verdicts if not v]
        if failed:
            raise RuntimeError(f"{family} {params} seed={seed} eps={eps} gamma={mode}: " + "; ".join(failed))
    opt = ""
    if oracle and g.n <= oracle_cap:
        opt = exact_mwvc(g, oracle_cap)[0]
    bound = ceil_iteration_bound(report.z, report.gamma, report.analysis_K, max(g.max_degree, 1))
    return {
        "family": family,
        "n": g.n,
        "delta": g.max_degree,
        "epsilon": rat_str(report.epsilon),
        "gamma_mode": report.gamma_mode,
        "gamma": rat_str(report.gamma),
        "z": report.z,
        "K": rat_str(report.analysis_K),
        "max_iterations": report.max_iterations,
        "bound": bound,
        "rounds": report.rounds,
        "cover_weight": report.cover_weight,
        "dual_sum": rat_str(report.dual_sum),
        "ratio_vs_dual": rat_str(report.cover_weight / report.dual_sum) if report.dual_sum else "",
        "opt_if_available": opt,
        "messages": report.messages,
        "max_payload_bits": report.max_payload_bits,
    }


def _sweep_worker(payload):
    job, verify, oracle, cap = payload
    return sweep_row(job, verify, oracle, cap)


def run_sweep(spec: dict, workers: int = 1) -> str:
    """Run every configuration of a sweep spec and return the CSV text."""
    if not isinstance(spec, dict):
        raise CliError("sweep spec must be a JSON object", EXIT_BAD_FILE)
    verify = bool(spec.get("verify", True))
    oracle = bool(spec.get("oracle", False))
    cap = int(spec.get("oracle_cap", DEFAULT_ORACLE_CAP))
    jobs = [j for exp in spec.get("experiments", []) for j in _expand(exp)]
    payloads = [(j, verify, oracle, cap) for j in jobs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_worker, payloads))  # map keeps the sweep file's order
    else:
        rows = [_sweep_worker(p) for p in payloads]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    try:
        spec = json.loads(_read(args.spec))
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.spec}: {exc}", EXIT_BAD_FILE) from None
    out = args.out or (spec.get("output") if isinstance(spec, dict) else None) or "-"
    workers = args.workers if args.workers is not None else int(spec.get("workers", 1))
    try:
        text = run_sweep(spec, workers)
    except (KeyError, TypeError, ValueError, GraphError) as exc:
        raise CliError(f"sweep: {exc}") from None
    except RuntimeError as exc:
        print(f"error: sweep: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    _write(out, text)
    return EXIT_OK


# -- verify ------------------------------------------------------------------------


def cmd_verify(args) -> int:
    report_text = _read(args.report)
    trace_text = _read(args.trace)
    try:
        report = RunReport.from_json(report_text)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"{args.report}: not a valid run report ({exc})", EXIT_BAD_FILE) from None
    try:
        trace = Trace.from_jsonl(trace_text)
        g = WeightedGraph(tuple(trace.weights), tuple(trace.edges), weight_exponent=None)
    except (TraceFormatError, GraphError) as exc:
        raise CliError(f"{args.trace}: {exc}", EXIT_BAD_FILE) from None
    mismatch = []
    for name, a, b in (
        ("n", report.n, g.n),
        ("m", report.m, g.m),
        ("epsilon", report.epsilon, trace.epsilon),
        ("gamma", report.gamma, trace.gamma),
        ("z", report.z, trace.z),
    ):
        if a != b:
            mismatch.append(f"{name}: report {a} trace {b}")
    if mismatch:
        print("FAIL report_matches_trace: " + "; ".join(mismatch))
        return EXIT_CHECK_FAILED
    K = _rational(args.K, "--K") if args.K is not None else None
    verdicts = verify_run(report, g, trace, oracle=args.oracle, oracle_cap=args.oracle_cap, K=K)
    for v in verdicts:
        print(v)
    return EXIT_OK if all(verdicts) else EXIT_CHECK_FAILED


# -- gen ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    args.graph = None
    g = _load_graph(args)
    _write(args.out, serialize(g))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=int, help="star: number of leaves")
    p.add_argument("--n", type=int, help="clique, path, gnp, bounded_degree_random: vertex count")
    p.add_argument("--p", help="gnp: edge probability as a rational, e.g. 1/2")
    p.add_argument("--d", type=int, help="bounded_degree_random: degree cap")
    p.add_argument("--attempts", type=int, help="bounded_degree_random: edge draws (default n*d)")
    p.add_argument("--weights", default="unit", help="unit or uniform:<W_max> (default unit)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distvc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one run and write its report")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--graph", help="input graph in p wvc format")
    src.add_argument("--gen", choices=sorted(FAMILIES), help="generate the input graph")
    _add_gen_flags(p)
    eps = p.add_mutually_exclusive_group(required=True)
    eps.add_argument("--epsilon", help="approximation slack as an exact rational, e.g. 1/3")
    eps.add_argument("--two-approx", action="store_true", help="use epsilon = 1/(n*W_max + 1)")
    p.add_argument("--gamma", default="auto", help="auto, half, bcs, eps-power:<q> or a rational (default auto)")
    p.add_argument("--K", help="analysis constant for the iteration bound (rational > 1)")
    p.add_argument("--report", default="report.json", help="report path, '-' for stdout (default report.json)")
    p.add_argument("--trace", help="also write the JSONL trace here")
    p.add_argument("--oracle", action="store_true", help="compare against the exact optimum")
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP, help="largest n for the exact oracle")
    p.add_argument("--workers", type=int, default=1, help="threads per phase (default 1)")
    p.add_argument("--engine", choices=("kernel", "reference"), default="kernel", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of configurations and write CSV")
    p.add_argument("spec", help="sweep spec (JSON)")
    p.add_argument("--out", help="CSV path, '-' for stdout (default: the sweep file's 'output' or stdout)")
    p.add_argument("--workers", type=int, help="worker processes (default: the sweep file's 'workers' or 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="replay a trace and check a report")
    p.add_argument("--report", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--K", help="override the analysis constant")
    p.add_argument("--oracle", action="store_true", help="compare against the exact optimum")
    p.add_argument("--oracle-cap", type=int, default=DEFAULT_ORACLE_CAP)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a generated graph in p wvc format")
    p.add_argument("gen", choices=sorted(FAMILIES), metavar="family", help=", ".join(sorted(FAMILIES)))
    _add_gen_flags(p)
    p.add_argument("-o", "--out", default="-", help="output path (default stdout)")
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
