"""Certificates for a finished run.

Every check is a pure function returning a :class:`Verdict`.  A failed
verdict always names concrete witnesses (a vertex, an edge, an iteration).
Quantities are compared as exact rationals; nothing here uses floats.

Two routes to the approximation guarantee are provided and kept separate:
the dual certificate ``cover weight <= (2+eps) * sum(delta)``, valid at any
size, and a direct comparison against an exact optimum from
:func:`exact_mwvc` for small graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import _kernels
from .engine import RunReport, Trace, replay
from .exact import Rat, ceil_iteration_bound, default_analysis_K, rat, rat_str
from .graph import EdgeId, WeightedGraph
from .protocol import Status, gamma_power

__all__ = [
    "DEFAULT_ORACLE_CAP",
    "OracleCapExceeded",
    "Verdict",
    "brute_force_mwvc",
    "check_cover",
    "check_dual",
    "check_iteration_bound",
    "check_oracle_ratio",
    "check_ratio_certificate",
    "check_tightness",
    "check_trace",
    "exact_mwvc",
    "verify_run",
]

DEFAULT_ORACLE_CAP = 24
MAX_WITNESSES = 20


class OracleCapExceeded(ValueError):
    pass


@dataclass
class Verdict:
    name: str
    passed: bool
    witnesses: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "witnesses": self.witnesses, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(d["name"], bool(d["passed"]), list(d.get("witnesses", [])), dict(d.get("detail", {})))

    def __str__(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'} {self.name}"
        if self.passed or not self.witnesses:
            return head
        more = self.detail.get("violations", len(self.witnesses))
        return f"{head}: {self.witnesses[0]}" + (f" (+{more - 1} more)" if more > 1 else "")


def _verdict(name: str, bad: list, **detail) -> Verdict:
    if bad:
        detail["violations"] = len(bad)
    return Verdict(name, not bad, bad[:MAX_WITNESSES], detail)


# -- static certificates ------------------------------------------------------------


def check_dual(g: WeightedGraph, dual: Mapping, final_weights=None) -> Verdict:
    """G-validity of the edge packing, and ``w_final = w0 - load`` when weights are given."""
    bad = []
    edges = set(g.edges)
    load = [Rat(0)] * g.n
    for e, x in sorted(dual.items()):
        u, v = e
        if EdgeId.of(u, v) not in edges:
            bad.append({"edge": [u, v], "reason": "not an edge of the graph"})
            continue
        if x < 0:
            bad.append({"edge": [u, v], "reason": f"negative packing value {rat_str(x)}"})
        load[u] += x
        load[v] += x
    tight = []
    for v in range(g.n):
        if load[v] > g.weights[v]:
            bad.append({"vertex": v, "reason": f"load {rat_str(load[v])} exceeds weight {g.weights[v]}"})
        elif load[v] == g.weights[v]:
            tight.append(v)
    if final_weights is not None:
        if len(final_weights) != g.n:
            bad.append({"reason": f"{len(final_weights)} final weights for {g.n} vertices"})
        else:
            for v, wf in enumerate(final_weights):
                if wf != g.weights[v] - load[v]:
                    bad.append(
                        {
                            "vertex": v,
                            "reason": f"final weight {rat_str(wf)} != {g.weights[v]} - {rat_str(load[v])}",
                        }
                    )
    return _verdict("dual_valid", bad, tight_vertices=tight[:MAX_WITNESSES], tight_count=len(tight))


def check_cover(g: WeightedGraph, cover: Iterable[int]) -> Verdict:
    cover = set(cover)
    bad: list = [{"vertex": v, "reason": "not a vertex"} for v in sorted(cover) if not 0 <= v < g.n]
    bad += [{"edge": [u, v], "reason": "uncovered"} for u, v in g.edges if u not in cover and v not in cover]
    return _verdict("cover_valid", bad, size=len(cover))


def check_tightness(g: WeightedGraph, cover: Iterable[int], final_weights, epsilon_prime) -> Verdict:
    """Each cover vertex kept at most ``eps' * w0`` of its weight."""
    eps_p = rat(epsilon_prime)
    bad = []
    for v in sorted(cover):
        if not final_weights[v] <= eps_p * g.weights[v]:
            bad.append(
                {
                    "vertex": v,
                    "reason": f"residual {rat_str(final_weights[v])} > {rat_str(eps_p)} * {g.weights[v]}",
                }
            )
    return _verdict("tightness", bad, epsilon_prime=rat_str(eps_p))


def check_ratio_certificate(g: WeightedGraph, cover: Iterable[int], dual: Mapping, epsilon) -> Verdict:
    """``sum of cover weights <= (2+eps) * sum(delta)``; the sum lower-bounds OPT for a valid packing."""
    eps = rat(epsilon)
    weight = g.total_weight(set(cover))
    total = sum(dual.values(), Rat(0))
    bound = (2 + eps) * total
    detail = {"cover_weight": weight, "dual_sum": rat_str(total), "bound": rat_str(bound)}
    if total:
        detail["ratio_vs_dual"] = rat_str(weight / total)
    bad = [] if weight <= bound else [{"reason": f"cover weight {weight} > {rat_str(bound)}"}]
    return _verdict("ratio_certificate", bad, **detail)


# -- exact optimum ---------------------------------------------------------------


def _masks(g: WeightedGraph) -> list[int]:
    return [sum(1 << u for u in a) for a in g.adjacency]


def _mask_to_set(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def exact_mwvc(g: WeightedGraph, cap: int = DEFAULT_ORACLE_CAP) -> tuple[int, list[int]]:
    """Minimum-weight vertex cover by branch and bound.  Returns ``(weight, cover)``."""
    if g.n > cap:
        raise OracleCapExceeded(f"exact oracle limited to n <= {cap}, got n = {g.n}")
    opt, mask = _kernels.mwvc_branch_and_bound(g.n, _masks(g), list(g.weights))
    return int(opt), _mask_to_set(int(mask))


def brute_force_mwvc(g: WeightedGraph, cap: int = 20) -> tuple[int, list[int]]:
    """Minimum-weight vertex cover by scanning all ``2**n`` subsets."""
    if g.n > cap:
        raise OracleCapExceeded(f"enumeration limited to n <= {cap}, got n = {g.n}")
    opt, mask = _kernels.mwvc_enumerate(g.n, _masks(g), list(g.weights))
    return int(opt), _mask_to_set(int(mask))


def check_oracle_ratio(
    g: WeightedGraph, cover: Iterable[int], factor, opt: tuple[int, list[int]] | None = None
) -> Verdict:
    """``sum of cover weights <= factor * OPT``, plus a sanity check of the oracle's witness."""
    factor = rat(factor)
    if opt is None:
        opt = exact_mwvc(g)
    opt_w, witness = opt
    bad = []
    wv = check_cover(g, witness)
    if not wv or g.total_weight(witness) != opt_w:
        bad.append({"reason": f"oracle witness {witness} is not a cover of weight {opt_w}"})
    weight = g.total_weight(set(cover))
    if not weight <= factor * opt_w:
        bad.append({"reason": f"cover weight {weight} > {rat_str(factor)} * OPT {opt_w}"})
    detail = {"cover_weight": weight, "opt": opt_w, "factor": rat_str(factor)}
    if opt_w:
        detail["ratio"] = rat_str(Rat(weight, opt_w))
    return _verdict("oracle_ratio", bad, **detail)


# -- iteration bound --------------------------------------------------------------


def check_iteration_bound(
    report: RunReport, g: WeightedGraph, K=None, per_vertex_K: bool = False
) -> Verdict:
    """Each vertex's iteration count against ``ceil(z * (K/gamma + log2 d / log2 K))``.

    ``K`` defaults to the run's analysis constant.  With ``per_vertex_K`` each
    vertex uses the default constant evaluated at its own degree instead.
    """
    K = rat(K) if K is not None else report.analysis_K
    cache: dict[tuple[int, object], int] = {}
    bad = []
    worst = 0
    for v, it in enumerate(report.iterations):
        d = g.degree(v)
        kv = default_analysis_K(d) if per_vertex_K else K
        key = (d, kv)
        b = cache.get(key)
        if b is None:
            b = cache[key] = ceil_iteration_bound(report.z, report.gamma, kv, d)
        worst = max(worst, b)
        if it > b:
            bad.append({"vertex": v, "reason": f"{it} iterations > bound {b} (degree {d}, K {rat_str(kv)})"})
    name = "iteration_bound_per_vertex_K" if per_vertex_K else "iteration_bound"
    return _verdict(name, bad, max_bound=worst, max_iterations=report.max_iterations, K=rat_str(K))


# -- trace certificates -------------------------------------------------------------


def check_trace(trace: Trace, K=None) -> list[Verdict]:
    """Replay a trace and check the per-iteration invariants along the way.

    Returns verdicts ``replay``, ``level_invariant``, ``budget_conservation``
    and ``win_win`` (when ``K`` is given), plus ``single_level`` when
    ``gamma`` equals ``eps'``.
    """
    gamma = trace.gamma
    eps_p = trace.epsilon / (2 + trace.epsilon)
    bcs = gamma == eps_p
    K = rat(K) if K is not None else None

    divs, claim, budget, winwin, single = [], [], [], [], []
    prev = None
    steps = 0
    applicable = 0
    for step in replay(trace):
        steps += 1
        i = step.iteration
        divs += [{"iteration": d.iteration, "phase": d.phase, "vertex": d.vertex, "reason": d.what} for d in step.divergences]
        # invariants are checked on the states as recorded, not as recomputed
        recorded = trace.iterations[steps - 1].states if steps <= len(trace.iterations) else []
        for v, w, level, status in recorded:
            if status is not Status.ACTIVE or not 0 <= v < len(trace.weights) or level < 1:
                continue  # malformed entries are reported by the replay
            lo, hi = gamma_power(gamma, level), gamma_power(gamma, level - 1)
            ratio = w / trace.weights[v]
            if not lo < ratio <= hi:
                claim.append({"iteration": i, "vertex": v, "reason": f"w/w0={rat_str(ratio)} level={level}"})
            if bcs and level >= 2:
                single.append({"iteration": i, "vertex": v, "reason": f"active at level {level}"})
        for v, led in step.ledgers.items():
            asked = sum((a for _, a in led.requested), Rat(0))
            if asked != led.vault:
                budget.append({"iteration": i, "vertex": v, "reason": f"requests {rat_str(asked)} != vault {rat_str(led.vault)}"})
            granted = Rat(0)
            for u, gv, req in led.granted:
                granted += gv
                if req is None or not 0 <= gv <= req:
                    budget.append({"iteration": i, "vertex": v, "reason": f"grant {rat_str(gv)} to {u} exceeds request"})
            if granted > led.bank:
                budget.append({"iteration": i, "vertex": v, "reason": f"grants {rat_str(granted)} exceed bank {rat_str(led.bank)}"})
        if K is not None and prev is not None:
            for v, led in step.ledgers.items():
                old = prev.ledgers.get(v)
                if old is None:
                    continue
                if led.lowest_level != old.lowest_level or led.lowest_count * K < old.lowest_count:
                    continue
                applicable += 1
                s0, s1 = prev.before[v], prev.after[v]
                need = s0.w - s0.w0 * gamma_power(gamma, s0.level) / K
                if not s1.w <= need:
                    winwin.append(
                        {
                            "iteration": prev.iteration,
                            "vertex": v,
                            "reason": f"weight {rat_str(s1.w)} > {rat_str(need)} with lowest level and count kept",
                        }
                    )
        prev = step

    out = [
        _verdict("replay", divs, iterations=steps),
        _verdict("level_invariant", claim),
        _verdict("budget_conservation", budget),
    ]
    if K is not None:
        out.append(_verdict("win_win", winwin, K=rat_str(K), applicable=applicable))
    if bcs:
        bad = list(single)
        z = trace.z
        if z != 1:
            bad.insert(0, {"reason": f"z = {z}, expected 1"})
        out.append(_verdict("single_level", bad))
    return out


def _check_trace_vs_report(trace: Trace, report: RunReport) -> Verdict:
    """The report's packing, final weights, statuses and iteration counts as recorded in the trace."""
    n = len(trace.weights)
    packing: dict[tuple[int, int], object] = {}
    final_w = [Rat(w) for w in trace.weights]
    status = [Status.ACTIVE.value] * n
    iters = [0] * n
    for rec in trace.iterations:
        for u, v, x in rec.delta:
            packing[(u, v) if u < v else (v, u)] = x
        for v, w, _level, st in rec.states:
            final_w[v] = w
            status[v] = st.value
            iters[v] += 1
    bad = []
    if packing != {tuple(e): x for e, x in report.dual.items()}:
        bad.append({"reason": "packing values differ"})
    for name, got, want in (
        ("final weight", final_w, report.final_weights),
        ("status", status, report.status),
        ("iterations", iters, report.iterations),
    ):
        if len(got) != len(want):
            bad.append({"reason": f"{name}: {len(want)} entries in report, {len(got)} in trace"})
            continue
        for v, (a, b) in enumerate(zip(got, want)):
            if a != b:
                bad.append({"vertex": v, "reason": f"{name}: trace {a} report {b}"})
                break
    return _verdict("trace_matches_report", bad)


# -- everything ----------------------------------------------------------------------


def verify_run(
    report: RunReport,
    g: WeightedGraph,
    trace: Trace | None = None,
    oracle: bool = False,
    oracle_cap: int = DEFAULT_ORACLE_CAP,
    K=None,
) -> list[Verdict]:
    """All applicable checks for one run.  With ``oracle`` set, also fills ``report.oracle``."""
    K = rat(K) if K is not None else report.analysis_K
    dual = report.dual
    verdicts = [
        check_cover(g, report.cover),
        check_dual(g, dual, report.final_weights),
        check_tightness(g, report.cover, report.final_weights, report.epsilon_prime),
        check_ratio_certificate(g, report.cover, dual, report.epsilon),
        check_iteration_bound(report, g, K),
    ]
    if trace is not None:
        verdicts += check_trace(trace, K)
        verdicts.append(_check_trace_vs_report(trace, report))
    if oracle and g.n <= oracle_cap:
        opt = exact_mwvc(g, oracle_cap)
        verdicts.append(check_oracle_ratio(g, report.cover, 2 + report.epsilon, opt))
        report.oracle = {"opt": opt[0], "witness": opt[1], "backend": _kernels.BACKEND["oracle"]}
    report.verdicts = [v.to_dict() for v in verdicts]
    return verdicts
