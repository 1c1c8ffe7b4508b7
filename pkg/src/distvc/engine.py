"""Synchronous scheduler for the protocol, with trace recording and replay.

One iteration of the protocol is four communication rounds:

    A  read Cover messages, drop covered neighbours, announce level
    B  read levels, send Requests to lowest-level neighbours
    C  read Requests, reply with Budgets from the bank
    D  read Budgets, update weight and level, maybe emit Cover

Messages sent in one phase are delivered at the start of the next; Cover
messages from phase D arrive in phase A of the following iteration.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator

from .exact import (
    GRID_BITS,
    Rat,
    ceil_iteration_bound,
    default_analysis_K,
    grid_root,
    parse_rat,
    payload_bits,
    rat,
    rat_str,
    rational_approx_inv_sqrt_log,
)
from .graph import EdgeId, WeightedGraph
from . import _kernels
from .protocol import (
    Decision,
    IterationCapExceeded,
    Kind,
    Msg,
    PHASE_OF_KIND,
    ProtocolError,
    ProtocolParams,
    Status,
    VertexState,
    apply_iteration_outcome,
    claim1_holds,
    compute_vault_bank,
    grant_budgets,
    handle_cover_and_isolation,
    initial_state,
    select_offer_targets,
)

log = logging.getLogger(__name__)

__all__ = [
    "PHASES_PER_ITERATION",
    "Divergence",
    "GammaMode",
    "IterationCapExceeded",
    "IterationRecord",
    "ENGINES",
    "ReplayStep",
    "RunConfig",
    "RunReport",
    "Trace",
    "TraceFormatError",
    "VertexLedger",
    "replay",
    "run",
]

PHASES_PER_ITERATION = 4
REPORT_SCHEMA = "distvc.run_report/1"
TRACE_SCHEMA = "distvc.trace/1"

ENGINES = ("kernel", "reference")


class TraceFormatError(ValueError):
    pass


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class GammaMode:
    """How gamma is chosen: ``auto``, ``half``, ``eps-power:q``, ``bcs`` or a fixed rational."""

    kind: str = "auto"
    value: object = None
    q: int | None = None

    @classmethod
    def parse(cls, text: str) -> "GammaMode":
        text = text.strip()
        if text in ("auto", "half", "bcs"):
            return cls(text)
        if text.startswith("eps-power:"):
            q = text.split(":", 1)[1]
            if not q.isdigit() or int(q) < 1:
                raise ValueError(f"eps-power needs a positive integer q, got {q!r}")
            return cls("eps-power", q=int(q))
        try:
            g = parse_rat(text)
        except ValueError:
            raise ValueError(
                f"gamma must be auto, half, bcs, eps-power:<q> or a rational in (0,1); got {text!r}"
            ) from None
        if not 0 < g < 1:
            raise ValueError(f"fixed gamma must lie in (0, 1), got {text}")
        return cls("fixed", value=g)

    def __str__(self) -> str:
        if self.kind == "eps-power":
            return f"eps-power:{self.q}"
        if self.kind == "fixed":
            return rat_str(self.value)
        return self.kind

    def resolve(self, epsilon, delta: int):
        epsilon = rat(epsilon)
        if self.kind == "auto":
            return rational_approx_inv_sqrt_log(delta) if delta > 16 else Rat(1, 2)
        if self.kind == "half":
            return Rat(1, 2)
        if self.kind == "bcs":
            return epsilon / (2 + epsilon)
        if self.kind == "fixed":
            return rat(self.value)
        if self.kind == "eps-power":
            if epsilon >= 1:
                return Rat(1, 2)  # the root would be >= 1; fall back to the half preset
            g = grid_root(epsilon, 2 * self.q)
            lo, hi = Rat(1, 1 << GRID_BITS), 1 - Rat(1, 1 << GRID_BITS)
            return min(max(g, lo), hi)
        raise ValueError(f"unknown gamma mode {self.kind!r}")


@dataclass(frozen=True)
class RunConfig:
    graph: WeightedGraph
    epsilon: object
    gamma_mode: GammaMode = GammaMode()
    analysis_K: object = None
    iteration_cap: int | None = None
    workers: int = 1
    check_invariants: bool = True
    record_trace: bool = True
    engine: str = "kernel"

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        eps = parse_rat(self.epsilon) if isinstance(self.epsilon, str) else rat(self.epsilon)
        if not eps > 0:
            raise ValueError(f"epsilon must be > 0, got {rat_str(eps)}")
        object.__setattr__(self, "epsilon", eps)
        if isinstance(self.gamma_mode, str):
            object.__setattr__(self, "gamma_mode", GammaMode.parse(self.gamma_mode))
        elif not isinstance(self.gamma_mode, GammaMode):
            object.__setattr__(self, "gamma_mode", GammaMode.parse(rat_str(rat(self.gamma_mode))))
        if self.analysis_K is not None:
            k = parse_rat(self.analysis_K) if isinstance(self.analysis_K, str) else rat(self.analysis_K)
            if not k > 1:
                raise ValueError("analysis_K must exceed 1")
            object.__setattr__(self, "analysis_K", k)

    @cached_property
    def gamma(self):
        return self.gamma_mode.resolve(self.epsilon, self.graph.max_degree)

    @cached_property
    def params(self) -> ProtocolParams:
        return ProtocolParams(self.epsilon, self.gamma)

    @cached_property
    def K(self):
        if self.analysis_K is not None:
            return self.analysis_K
        return default_analysis_K(self.graph.max_degree)

    @cached_property
    def cap(self) -> int:
        if self.iteration_cap is not None:
            return self.iteration_cap
        p = self.params
        return 10 * ceil_iteration_bound(p.z, p.gamma, self.K, max(self.graph.max_degree, 1))


# -- per-phase vertex steps (shared by run and replay) ----------------------------


def step_announce(s: VertexState, cover_senders) -> tuple[VertexState, list[Msg]]:
    decision, s = handle_cover_and_isolation(s, cover_senders)
    if decision is Decision.NOT_IN_COVER:
        return s, []
    return s, [Msg(s.id, u, Kind.LEVEL, s.level) for u in sorted(s.neighbors)]


def step_offer(s: VertexState, level_msgs, p: ProtocolParams) -> tuple[VertexState, list[Msg]]:
    levels = {m.sender: m.value for m in level_msgs}
    if levels.keys() != s.neighbors:
        missing = sorted(s.neighbors - levels.keys())
        extra = sorted(levels.keys() - s.neighbors)
        raise ProtocolError(f"vertex {s.id}: level announcements missing {missing} extra {extra}")
    s = VertexState(
        s.id, s.w0, s.w, s.level, s.neighbors, levels, s.status, s.iteration
    )
    vault, _ = compute_vault_bank(s, p)
    targets, amount = select_offer_targets(s, vault)
    return s, [Msg(s.id, u, Kind.REQUEST, amount) for u in targets]


def step_grant(s: VertexState, request_msgs, p: ProtocolParams) -> list[Msg]:
    _, bank = compute_vault_bank(s, p)
    grants = grant_budgets(s, [(m.sender, m.value) for m in request_msgs], bank)
    return [Msg(s.id, u, Kind.BUDGET, g) for u, g in grants]


def step_settle(s: VertexState, budget_in, budget_out, p: ProtocolParams):
    received = sum((m.value for m in budget_in), Rat(0))
    granted = sum((m.value for m in budget_out), Rat(0))
    decision, s = apply_iteration_outcome(s, received, granted, p)
    out = []
    if decision is Decision.JOIN_COVER:
        out = [Msg(s.id, u, Kind.COVER) for u in sorted(s.neighbors)]
    return s, out


def _chunked_map(pool: ThreadPoolExecutor | None, workers: int, fn: Callable, items: list) -> list:
    if pool is None or len(items) < 2 * workers:
        return [fn(x) for x in items]
    size = -(-len(items) // workers)
    chunks = [items[i : i + size] for i in range(0, len(items), size)]
    out: list = []
    for part in pool.map(lambda c: [fn(x) for x in c], chunks):
        out.extend(part)
    return out


# -- trace ------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    messages: list[Msg] = field(default_factory=list)
    # (vertex, w, level, status) after the iteration, for vertices active at its start
    states: list[tuple] = field(default_factory=list)
    # (u, v, running delta) for edges whose packing value changed
    delta: list[tuple] = field(default_factory=list)


@dataclass
class Trace:
    weights: tuple[int, ...]
    edges: tuple[EdgeId, ...]
    epsilon: object
    gamma: object
    z: int
    iterations: list[IterationRecord] = field(default_factory=list)

    def lines(self) -> Iterator[str]:
        dump = lambda d: json.dumps(d, separators=(",", ":"))  # noqa: E731
        yield dump(
            {
                "record": "header",
                "schema": TRACE_SCHEMA,
                "weights": list(self.weights),
                "edges": [list(e) for e in self.edges],
                "epsilon": rat_str(self.epsilon),
                "gamma": rat_str(self.gamma),
                "z": self.z,
            }
        )
        for rec in self.iterations:
            i = rec.iteration
            for m in rec.messages:
                if m.kind is Kind.LEVEL:
                    amount = f"{m.value}/1"
                elif m.kind is Kind.COVER:
                    amount = None
                else:
                    amount = rat_str(m.value)
                yield dump(
                    {
                        "record": "msg",
                        "iteration": i,
                        "phase": PHASE_OF_KIND[m.kind],
                        "sender": m.sender,
                        "receiver": m.receiver,
                        "variant": m.kind.value,
                        "amount": amount,
                    }
                )
            for v, w, level, status in rec.states:
                yield dump(
                    {
                        "record": "state",
                        "iteration": i,
                        "vertex": v,
                        "w": rat_str(w),
                        "level": level,
                        "status": status.value,
                    }
                )
            for u, v, value in rec.delta:
                yield dump({"record": "delta", "iteration": i, "u": u, "v": v, "value": rat_str(value)})

    def to_jsonl(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        trace = None
        by_iter: dict[int, IterationRecord] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                kind = d["record"]
                if kind == "header":
                    trace = cls(
                        tuple(d["weights"]),
                        tuple(EdgeId.of(u, v) for u, v in d["edges"]),
                        parse_rat(d["epsilon"]),
                        parse_rat(d["gamma"]),
                        int(d["z"]),
                    )
                    continue
                if trace is None:
                    raise TraceFormatError(f"line {lineno}: record before header")
                i = int(d["iteration"])
                rec = by_iter.get(i)
                if rec is None:
                    rec = by_iter[i] = IterationRecord(i)
                    trace.iterations.append(rec)
                if kind == "msg":
                    k = Kind(d["variant"])
                    if k is Kind.COVER:
                        value = None
                    elif k is Kind.LEVEL:
                        value = int(parse_rat(d["amount"]))
                    else:
                        value = parse_rat(d["amount"])
                    rec.messages.append(Msg(int(d["sender"]), int(d["receiver"]), k, value))
                elif kind == "state":
                    rec.states.append(
                        (int(d["vertex"]), parse_rat(d["w"]), int(d["level"]), Status(d["status"]))
                    )
                elif kind == "delta":
                    rec.delta.append((int(d["u"]), int(d["v"]), parse_rat(d["value"])))
                else:
                    raise TraceFormatError(f"line {lineno}: unknown record {kind!r}")
            except TraceFormatError:
                raise
            except (KeyError, ValueError, TypeError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
        if trace is None:
            raise TraceFormatError("trace has no header")
        return trace


# -- report -----------------------------------------------------------------------


@dataclass
class RunReport:
    n: int
    m: int
    max_degree: int
    max_weight: int
    epsilon: object
    epsilon_prime: object
    gamma_mode: str
    gamma: object
    z: int
    analysis_K: object
    iteration_cap: int
    cover: list[int]
    cover_weight: int
    dual_sum: object
    iterations: list[int]
    rounds: int
    messages: int
    messages_by_kind: dict[str, int]
    max_payload_bits: int
    final_weights: list
    status: list[str]
    dual: dict = field(default_factory=dict)  # (u, v) -> accumulated packing value, u < v
    verdicts: list[dict] = field(default_factory=list)
    oracle: dict | None = None

    @property
    def max_iterations(self) -> int:
        return max(self.iterations, default=0)

    @property
    def ratio_bound(self):
        """``(2 + eps) * sum(delta)``, an upper bound on (2+eps) * OPT's lower bound."""
        return (2 + self.epsilon) * self.dual_sum

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "graph": {"n": self.n, "m": self.m, "max_degree": self.max_degree, "max_weight": self.max_weight},
            "config": {
                "epsilon": rat_str(self.epsilon),
                "epsilon_prime": rat_str(self.epsilon_prime),
                "gamma_mode": self.gamma_mode,
                "gamma": rat_str(self.gamma),
                "z": self.z,
                "analysis_K": rat_str(self.analysis_K),
                "iteration_cap": self.iteration_cap,
            },
            "result": {
                "cover": self.cover,
                "cover_weight": self.cover_weight,
                "dual_sum": rat_str(self.dual_sum),
                "ratio_bound": rat_str(self.ratio_bound),
                "status": self.status,
                "final_weights": [rat_str(w) for w in self.final_weights],
                "dual": [[u, v, rat_str(x)] for (u, v), x in sorted(self.dual.items())],
            },
            "metrics": {
                "iterations": self.iterations,
                "max_iterations": self.max_iterations,
                "rounds": self.rounds,
                "messages": self.messages,
                "messages_by_kind": self.messages_by_kind,
                "max_payload_bits": self.max_payload_bits,
            },
            "verdicts": self.verdicts,
            "oracle": self.oracle,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"not a run report (schema {d.get('schema')!r})")
        g, c, r, mt = d["graph"], d["config"], d["result"], d["metrics"]
        return cls(
            n=g["n"],
            m=g["m"],
            max_degree=g["max_degree"],
            max_weight=g["max_weight"],
            epsilon=parse_rat(c["epsilon"]),
            epsilon_prime=parse_rat(c["epsilon_prime"]),
            gamma_mode=c["gamma_mode"],
            gamma=parse_rat(c["gamma"]),
            z=c["z"],
            analysis_K=parse_rat(c["analysis_K"]),
            iteration_cap=c["iteration_cap"],
            cover=list(r["cover"]),
            cover_weight=r["cover_weight"],
            dual_sum=parse_rat(r["dual_sum"]),
            iterations=list(mt["iterations"]),
            rounds=mt["rounds"],
            messages=mt["messages"],
            messages_by_kind=dict(mt["messages_by_kind"]),
            max_payload_bits=mt["max_payload_bits"],
            final_weights=[parse_rat(w) for w in r["final_weights"]],
            status=list(r["status"]),
            dual={(int(u), int(v)): parse_rat(x) for u, v, x in r.get("dual", [])},
            verdicts=list(d.get("verdicts", [])),
            oracle=d.get("oracle"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


# -- the scheduler ----------------------------------------------------------------


def run(config: RunConfig) -> tuple[RunReport, Trace]:
    """Run the protocol on ``config.graph`` until every vertex has decided.

    The default ``kernel`` engine runs the fused loop from
    :mod:`distvc._kernels`; ``reference`` (also used whenever
    ``workers > 1``) drives the per-vertex functions of
    :mod:`distvc.protocol` phase by phase.  Both produce identical reports
    and traces.  With ``config.record_trace`` false the returned trace
    carries only its header.
    """
    g = config.graph
    p = config.params
    if config.engine == "reference" or config.workers > 1:
        raw = _run_reference(config)
    else:
        raw = _kernels.run_protocol(
            [Rat(x) for x in g.weights],
            g.adjacency,
            p.gamma,
            p.z,
            config.cap,
            config.check_invariants,
            config.record_trace,
        )
    w, level, status, iters, delta, counts, max_bits, records = raw

    trace = Trace(g.weights, g.edges, p.epsilon, p.gamma, p.z)
    if records is not None:
        trace.iterations = [IterationRecord(i, sent, st, dl) for i, sent, st, dl in records]
    cover = [v for v in range(g.n) if status[v] is Status.IN_COVER]
    report = RunReport(
        n=g.n,
        m=g.m,
        max_degree=g.max_degree,
        max_weight=g.max_weight,
        epsilon=p.epsilon,
        epsilon_prime=p.epsilon_prime,
        gamma_mode=str(config.gamma_mode),
        gamma=p.gamma,
        z=p.z,
        analysis_K=config.K,
        iteration_cap=config.cap,
        cover=cover,
        cover_weight=g.total_weight(cover),
        dual_sum=sum(delta.values(), Rat(0)),
        iterations=list(iters),
        rounds=PHASES_PER_ITERATION * max(iters, default=0),
        messages=sum(counts),
        messages_by_kind={k.value: c for k, c in zip(Kind, counts)},
        max_payload_bits=max_bits,
        final_weights=list(w),
        status=[st.value for st in status],
        dual=dict(sorted(delta.items())),
    )
    log.debug("run finished: %d iterations, cover weight %d", report.max_iterations, report.cover_weight)
    return report, trace


def _run_reference(config: RunConfig):
    g = config.graph
    p = config.params
    gamma = p.gamma
    check = config.check_invariants
    record = config.record_trace
    cap = config.cap
    workers = max(1, config.workers)

    states: list[VertexState] = [initial_state(v, g.weights[v], g.adjacency[v]) for v in range(g.n)]
    iters = [0] * g.n
    delta: dict[tuple[int, int], object] = {}
    records = [] if record else None
    counts = dict.fromkeys(Kind, 0)
    max_bits = 0
    cover_in: dict[int, list[int]] = {}
    active = list(range(g.n))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    i = 0
    try:
        while active:
            if i >= cap:
                raise IterationCapExceeded(f"{len(active)} vertices still active after {cap} iterations")
            for v in active:
                iters[v] += 1
            sent: list[Msg] = []

            # phase A
            res = _chunked_map(pool, workers, lambda v: step_announce(states[v], cover_in.get(v, ())), active)
            live = []
            levels_in: dict[int, list[Msg]] = defaultdict(list)
            for v, (s, out) in zip(active, res):
                states[v] = s
                if s.status is Status.ACTIVE:
                    live.append(v)
                    counts[Kind.LEVEL] += len(out)
                    max_bits = max(max_bits, s.level.bit_length() + 1)
                    for m in out:
                        levels_in[m.receiver].append(m)
                    if record:
                        sent.extend(out)

            # phase B
            res = _chunked_map(pool, workers, lambda v: step_offer(states[v], levels_in[v], p), live)
            requests_in: dict[int, list[Msg]] = defaultdict(list)
            requests_out: dict[int, list[Msg]] = {}
            for v, (s, out) in zip(live, res):
                states[v] = s
                requests_out[v] = out
                counts[Kind.REQUEST] += len(out)
                max_bits = max(max_bits, payload_bits(out[0].value))
                for m in out:
                    requests_in[m.receiver].append(m)
                if record:
                    sent.extend(out)

            # phase C
            res = _chunked_map(pool, workers, lambda v: step_grant(states[v], requests_in[v], p), live)
            budgets_in: dict[int, list[Msg]] = defaultdict(list)
            budgets_out: dict[int, list[Msg]] = {}
            touched = set()
            for v, out in zip(live, res):
                budgets_out[v] = out
                counts[Kind.BUDGET] += len(out)
                for m in out:
                    budgets_in[m.receiver].append(m)
                    x = m.value
                    if x:
                        e = (v, m.receiver) if v < m.receiver else (m.receiver, v)
                        delta[e] = delta.get(e, 0) + x
                        touched.add(e)
                        max_bits = max(max_bits, payload_bits(x))
                    else:
                        max_bits = max(max_bits, 1)
                if record:
                    sent.extend(out)

            # phase D
            if check:
                _check_budgets(i, live, requests_out, budgets_in)
            res = _chunked_map(
                pool, workers, lambda v: step_settle(states[v], budgets_in[v], budgets_out[v], p), live
            )
            cover_in = defaultdict(list)
            for v, (s, out) in zip(live, res):
                states[v] = s
                if check and s.status is Status.ACTIVE and not claim1_holds(s, gamma):
                    raise ProtocolError(
                        f"level invariant broken at vertex {v} iteration {i}: "
                        f"w/w0={rat_str(s.w / s.w0)} level={s.level}"
                    )
                counts[Kind.COVER] += len(out)
                for m in out:
                    cover_in[m.receiver].append(v)
                if record:
                    sent.extend(out)

            if record:
                records.append(
                    (
                        i,
                        sent,
                        [(v, states[v].w, states[v].level, states[v].status) for v in active],
                        [(u, v, delta[(u, v)]) for u, v in sorted(touched)],
                    )
                )
            active = [v for v in active if states[v].status is Status.ACTIVE]
            i += 1
    finally:
        if pool is not None:
            pool.shutdown()

    return (
        [s.w for s in states],
        [s.level for s in states],
        [s.status for s in states],
        iters,
        delta,
        tuple(counts[k] for k in Kind),
        max_bits,
        records,
    )


def _check_budgets(i, live, requests_out, budgets_in) -> None:
    for v in live:
        asked = {m.receiver: m.value for m in requests_out[v]}
        got = budgets_in.get(v, ())
        if len(got) != len(asked):
            raise ProtocolError(f"vertex {v} iteration {i}: {len(asked)} requests, {len(got)} budgets")
        for m in got:
            if m.sender not in asked or not 0 <= m.value <= asked[m.sender]:
                raise ProtocolError(f"vertex {v} iteration {i}: budget {m.value} from {m.sender} exceeds request")


# -- replay ---------------------------------------------------------------------


@dataclass
class Divergence:
    iteration: int
    phase: str
    vertex: int | None
    what: str

    def __str__(self) -> str:
        where = f"vertex {self.vertex}" if self.vertex is not None else "run"
        return f"iteration {self.iteration} phase {self.phase} {where}: {self.what}"


@dataclass
class VertexLedger:
    """What one vertex offered and granted in one iteration, from the recorded messages."""

    vault: object
    bank: object
    lowest_level: int
    lowest_count: int
    requested: list  # (receiver, amount)
    granted: list  # (requester, grant, request)


@dataclass
class ReplayStep:
    iteration: int
    divergences: list[Divergence]
    before: dict[int, VertexState]
    after: dict[int, VertexState]
    ledgers: dict[int, VertexLedger]
    delta: dict  # live view of the running packing; copy if you keep it


def _fmt_msgs(msgs) -> str:
    parts = []
    for m in msgs:
        val = "" if m.value is None else f"={m.value if m.kind is Kind.LEVEL else rat_str(m.value)}"
        parts.append(f"{m.kind.value}->{m.receiver}{val}")
    return "[" + ", ".join(parts) + "]"


def replay(trace: Trace) -> Iterator[ReplayStep]:
    """Re-derive every transition from the recorded messages and compare.

    Each vertex is re-executed on the messages the trace says it received;
    its outgoing messages and resulting state must match what was recorded.
    """
    n = len(trace.weights)
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in trace.edges:
        adj[u].append(v)
        adj[v].append(u)
    p = ProtocolParams(trace.epsilon, trace.gamma)
    states = {v: initial_state(v, trace.weights[v], adj[v]) for v in range(n)}
    delta: dict[EdgeId, object] = {}
    cover_in: dict[int, list[int]] = {}

    for expect_i, rec in enumerate(trace.iterations):
        divs: list[Divergence] = []
        i = rec.iteration
        if i != expect_i:
            divs.append(Divergence(i, "-", None, f"iteration index {i}, expected {expect_i}"))
        active = [v for v in range(n) if states[v].status is Status.ACTIVE]
        before = {v: states[v] for v in active}
        by_kind_sender: dict[Kind, dict[int, list[Msg]]] = {k: defaultdict(list) for k in Kind}
        by_kind_receiver: dict[Kind, dict[int, list[Msg]]] = {k: defaultdict(list) for k in Kind}
        for m in rec.messages:
            by_kind_sender[m.kind][m.sender].append(m)
            by_kind_receiver[m.kind][m.receiver].append(m)
        for k in Kind:
            for lst in by_kind_sender[k].values():
                lst.sort(key=lambda m: m.receiver)
            for lst in by_kind_receiver[k].values():
                lst.sort(key=lambda m: m.sender)

        def compare(phase, v, kind, expected):
            recorded = by_kind_sender[kind].get(v, [])
            if expected != recorded:
                divs.append(
                    Divergence(i, phase, v, f"{kind.value} expected {_fmt_msgs(expected)} recorded {_fmt_msgs(recorded)}")
                )

        work = dict(before)
        ledgers: dict[int, VertexLedger] = {}
        live = []
        for v in active:
            try:
                s, out = step_announce(work[v], cover_in.get(v, ()))
            except ProtocolError as exc:
                divs.append(Divergence(i, "A", v, str(exc)))
                continue
            work[v] = s
            compare("A", v, Kind.LEVEL, out)
            if s.status is Status.ACTIVE:
                live.append(v)
        offered = []
        for v in live:
            try:
                s, out = step_offer(work[v], by_kind_receiver[Kind.LEVEL].get(v, []), p)
                vault, bank = compute_vault_bank(s, p)
            except ProtocolError as exc:
                divs.append(Divergence(i, "B", v, str(exc)))
                continue
            work[v] = s
            compare("B", v, Kind.REQUEST, out)
            low = min(s.neighbor_levels.values())
            ledgers[v] = VertexLedger(
                vault,
                bank,
                low,
                sum(1 for x in s.neighbor_levels.values() if x == low),
                [(m.receiver, m.value) for m in by_kind_sender[Kind.REQUEST].get(v, [])],
                [],
            )
            offered.append(v)
        for v in offered:
            reqs = by_kind_receiver[Kind.REQUEST].get(v, [])
            try:
                out = step_grant(work[v], reqs, p)
            except ProtocolError as exc:
                divs.append(Divergence(i, "C", v, str(exc)))
                continue
            compare("C", v, Kind.BUDGET, out)
            asked = {m.sender: m.value for m in reqs}
            ledgers[v].granted = [
                (m.receiver, m.value, asked.get(m.receiver)) for m in by_kind_sender[Kind.BUDGET].get(v, [])
            ]
        touched = set()
        for m in rec.messages:
            if m.kind is Kind.BUDGET and m.value:
                e = EdgeId.of(m.sender, m.receiver)
                delta[e] = delta.get(e, 0) + m.value
                touched.add(e)
        new_cover_in: dict[int, list[int]] = defaultdict(list)
        for v in offered:
            try:
                s, out = step_settle(
                    work[v],
                    by_kind_receiver[Kind.BUDGET].get(v, []),
                    by_kind_sender[Kind.BUDGET].get(v, []),
                    p,
                )
            except ProtocolError as exc:
                divs.append(Divergence(i, "D", v, str(exc)))
                continue
            work[v] = s
            compare("D", v, Kind.COVER, out)
        for m in by_kind_sender[Kind.COVER].values():
            for c in m:
                new_cover_in[c.receiver].append(c.sender)

        processed = {Kind.LEVEL: set(active), Kind.REQUEST: set(live), Kind.BUDGET: set(offered), Kind.COVER: set(offered)}
        for k in Kind:
            for sender in by_kind_sender[k]:
                if sender not in processed[k]:
                    divs.append(Divergence(i, PHASE_OF_KIND[k], sender, f"unexpected {k.value} from inactive vertex"))

        rec_states = {v: (w, level, status) for v, w, level, status in rec.states}
        if set(rec_states) != set(active):
            divs.append(Divergence(i, "D", None, "recorded state set differs from the active vertices"))
        for v in active:
            s = work[v]
            got = rec_states.get(v)
            if got is not None and got != (s.w, s.level, s.status):
                divs.append(
                    Divergence(
                        i,
                        "D",
                        v,
                        f"state expected (w={rat_str(s.w)}, level={s.level}, {s.status.value}) "
                        f"recorded (w={rat_str(got[0])}, level={got[1]}, {got[2].value})",
                    )
                )
        rec_delta = {EdgeId.of(u, v): val for u, v, val in rec.delta}
        want_delta = {e: delta[e] for e in touched}
        if rec_delta != want_delta:
            bad = sorted(set(rec_delta.items()) ^ set(want_delta.items()))
            e = bad[0][0]
            divs.append(Divergence(i, "C", None, f"packing value mismatch on edge {tuple(e)}"))

        states.update(work)
        cover_in = new_cover_in
        yield ReplayStep(i, divs, before, {v: states[v] for v in active}, ledgers, delta)

    left = [v for v in range(n) if states[v].status is Status.ACTIVE]
    if left:
        i = len(trace.iterations)
        yield ReplayStep(
            i,
            [Divergence(i, "-", v, "trace ends while vertex still active") for v in left],
            {},
            {},
            {},
            delta,
        )
