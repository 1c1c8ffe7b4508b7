"""Weighted graphs: the ``p wvc`` text format and seeded generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .exact import parse_rat, rat

__all__ = [
    "DEFAULT_WEIGHT_EXPONENT",
    "EdgeId",
    "GraphError",
    "GraphFormatError",
    "SplitMix64",
    "WeightRule",
    "WeightedGraph",
    "FAMILIES",
    "generate",
    "parse",
    "serialize",
]

#: Weights must satisfy ``w <= max(n, 2) ** c`` for this c unless overridden.
DEFAULT_WEIGHT_EXPONENT = 4

_MASK64 = (1 << 64) - 1


class GraphError(ValueError):
    pass


class GraphFormatError(GraphError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EdgeId(NamedTuple):
    """Undirected edge with endpoints in ascending order."""

    u: int
    v: int

    @classmethod
    def of(cls, a: int, b: int) -> "EdgeId":
        return cls(a, b) if a < b else cls(b, a)


@dataclass(frozen=True)
class WeightedGraph:
    """Immutable simple undirected graph on vertices ``0..n-1``."""

    weights: tuple[int, ...]
    edges: tuple[EdgeId, ...]
    weight_exponent: int | None = DEFAULT_WEIGHT_EXPONENT
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.weights)
        for v, w in enumerate(self.weights):
            if not isinstance(w, int) or isinstance(w, bool) or w < 1:
                raise GraphError(f"vertex {v}: weight must be an integer >= 1, got {w!r}")
        if self.weight_exponent is not None and n:
            cap = max(n, 2) ** self.weight_exponent
            if max(self.weights) > cap:
                raise GraphError(
                    f"max weight {max(self.weights)} exceeds n^{self.weight_exponent} = {cap}"
                )
        canon = sorted({EdgeId.of(u, v) for u, v in self.edges})
        if len(canon) != len(self.edges):
            raise GraphError("duplicate edge")
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in canon:
            if u == v:
                raise GraphError(f"self-loop at vertex {u}")
            if u < 0 or v >= n:
                raise GraphError(f"edge ({u}, {v}) references a vertex outside 0..{n - 1}")
            adj[u].append(v)
            adj[v].append(u)
        object.__setattr__(self, "edges", tuple(canon))
        object.__setattr__(self, "adjacency", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(cls, weights: Iterable[int], edges: Iterable[tuple[int, int]], **kw):
        return cls(tuple(weights), tuple(EdgeId.of(u, v) for u, v in edges), **kw)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def m(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    @property
    def max_degree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @property
    def max_weight(self) -> int:
        return max(self.weights, default=0)

    def total_weight(self, vertices: Iterable[int]) -> int:
        return sum(self.weights[v] for v in vertices)


# -- text format ---------------------------------------------------------------


def _int_token(tok: str, lineno: int, what: str) -> int:
    if not tok.lstrip("-").isdigit():
        raise GraphFormatError(lineno, f"{what} must be an integer, got {tok!r}")
    return int(tok)


def parse(text: str, weight_exponent: int | None = DEFAULT_WEIGHT_EXPONENT) -> WeightedGraph:
    """Parse a ``p wvc`` document.  Blank lines and ``#`` comments are skipped."""
    n = m = None
    weights: list[int | None] = []
    edges: list[EdgeId] = []
    seen_edges: set[EdgeId] = set()
    n_vertex_lines = 0
    last = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        last = lineno
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        tag = toks[0]
        if n is None:
            if tag != "p" or len(toks) != 4 or toks[1] != "wvc":
                raise GraphFormatError(lineno, "expected header 'p wvc <n> <m>'")
            n = _int_token(toks[2], lineno, "n")
            m = _int_token(toks[3], lineno, "m")
            if n < 0 or m < 0:
                raise GraphFormatError(lineno, "n and m must be non-negative")
            weights = [None] * n
            continue
        if tag == "v":
            if len(toks) != 3:
                raise GraphFormatError(lineno, "expected 'v <id> <weight>'")
            if edges:
                raise GraphFormatError(lineno, "vertex line after edge lines")
            vid = _int_token(toks[1], lineno, "vertex id")
            w = _int_token(toks[2], lineno, "weight")
            if not 0 <= vid < n:
                raise GraphFormatError(lineno, f"vertex id {vid} outside 0..{n - 1}")
            if weights[vid] is not None:
                raise GraphFormatError(lineno, f"vertex {vid} declared twice")
            if w < 1:
                raise GraphFormatError(lineno, f"weight {w} < 1")
            weights[vid] = w
            n_vertex_lines += 1
        elif tag == "e":
            if len(toks) != 3:
                raise GraphFormatError(lineno, "expected 'e <u> <v>'")
            if n_vertex_lines != n:
                raise GraphFormatError(lineno, f"edge line before all {n} vertex lines")
            u = _int_token(toks[1], lineno, "endpoint")
            v = _int_token(toks[2], lineno, "endpoint")
            if u == v:
                raise GraphFormatError(lineno, f"self-loop at vertex {u}")
            for x in (u, v):
                if not 0 <= x < n:
                    raise GraphFormatError(lineno, f"dangling vertex reference {x}")
            e = EdgeId.of(u, v)
            if e in seen_edges:
                raise GraphFormatError(lineno, f"duplicate edge {u} {v}")
            seen_edges.add(e)
            edges.append(e)
            if len(edges) > m:
                raise GraphFormatError(lineno, f"more than {m} edge lines")
        else:
            raise GraphFormatError(lineno, f"unrecognised line {line!r}")
    if n is None:
        raise GraphFormatError(last, "missing header 'p wvc <n> <m>'")
    if n_vertex_lines != n:
        raise GraphFormatError(last, f"expected {n} vertex lines, found {n_vertex_lines}")
    if len(edges) != m:
        raise GraphFormatError(last, f"expected {m} edge lines, found {len(edges)}")
    try:
        return WeightedGraph(tuple(weights), tuple(edges), weight_exponent=weight_exponent)
    except GraphError as exc:
        raise GraphFormatError(last, str(exc)) from exc


def serialize(g: WeightedGraph) -> str:
    lines = [f"p wvc {g.n} {g.m}"]
    lines += [f"v {v} {w}" for v, w in enumerate(g.weights)]
    lines += [f"e {u} {v}" for u, v in g.edges]
    return "\n".join(lines) + "\n"


# -- generators ----------------------------------------------------------------


class SplitMix64:
    """The splitmix64 generator (Steele, Lea and Flood), 64-bit outputs."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection (no modulo bias)."""
        if bound < 1:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def bernoulli(self, p) -> bool:
        """True with probability exactly ``p`` (a rational) over 2**64 outcomes."""
        return self.next_u64() * p.denominator < p.numerator << 64


@dataclass(frozen=True)
class WeightRule:
    """``unit`` or ``uniform`` integers in ``[1, w_max]``."""

    kind: str = "unit"
    w_max: int = 1

    @classmethod
    def parse(cls, text: str) -> "WeightRule":
        if text == "unit":
            return cls("unit", 1)
        kind, _, arg = text.partition(":")
        if kind == "uniform" and arg.isdigit() and int(arg) >= 1:
            return cls("uniform", int(arg))
        raise ValueError(f"weight rule must be 'unit' or 'uniform:<W_max>', got {text!r}")

    def __str__(self) -> str:
        return "unit" if self.kind == "unit" else f"uniform:{self.w_max}"

    def draw(self, n: int, rng: SplitMix64) -> tuple[int, ...]:
        if self.kind == "unit":
            return (1,) * n
        return tuple(1 + rng.below(self.w_max) for _ in range(n))


def _star(p: dict, rng: SplitMix64) -> tuple[int, list[tuple[int, int]]]:
    delta = int(p["delta"])
    if delta < 0:
        raise GraphError("star needs delta >= 0")
    return delta + 1, [(0, i) for i in range(1, delta + 1)]


def _clique(p: dict, rng: SplitMix64):
    n = int(p["n"])
    if n < 1:
        raise GraphError("clique needs n >= 1")
    return n, [(u, v) for u in range(n) for v in range(u + 1, n)]


def _path(p: dict, rng: SplitMix64):
    n = int(p["n"])
    if n < 1:
        raise GraphError("path needs n >= 1")
    return n, [(i, i + 1) for i in range(n - 1)]


def _gnp(p: dict, rng: SplitMix64):
    n = int(p["n"])
    prob = p["p"]
    prob = parse_rat(prob) if isinstance(prob, str) else rat(prob)
    if n < 1 or not 0 <= prob <= 1:
        raise GraphError("gnp needs n >= 1 and p in [0, 1]")
    # one draw per unordered pair, lexicographic order
    return n, [(u, v) for u in range(n) for v in range(u + 1, n) if rng.bernoulli(prob)]


def _bounded_degree_random(p: dict, rng: SplitMix64):
    n = int(p["n"])
    d = int(p["d"])
    attempts = int(p.get("attempts", n * d))
    if n < 1 or d < 0 or attempts < 0:
        raise GraphError("bounded_degree_random needs n >= 1, d >= 0, attempts >= 0")
    deg = [0] * n
    seen: set[tuple[int, int]] = set()
    edges = []
    for _ in range(attempts):
        u, v = rng.below(n), rng.below(n)
        if u == v or deg[u] >= d or deg[v] >= d:
            continue
        e = (u, v) if u < v else (v, u)
        if e in seen:
            continue
        seen.add(e)
        edges.append(e)
        deg[u] += 1
        deg[v] += 1
    return n, edges


FAMILIES = {
    "star": _star,
    "clique": _clique,
    "path": _path,
    "gnp": _gnp,
    "bounded_degree_random": _bounded_degree_random,
}


def generate(
    family: str,
    params: dict,
    seed: int = 0,
    weight_rule: WeightRule | str = "unit",
    weight_exponent: int | None = DEFAULT_WEIGHT_EXPONENT,
) -> WeightedGraph:
    """Build a graph of the named family.

    Weights are drawn first from a splitmix64 stream seeded with ``seed``,
    then the family consumes the same stream for its edges.

    Parameters: ``star`` takes ``delta``; ``clique`` and ``path`` take ``n``;
    ``gnp`` takes ``n`` and ``p`` (rational or ``"a/b"``);
    ``bounded_degree_random`` takes ``n``, ``d`` and optionally ``attempts``.
    """
    if family not in FAMILIES:
        raise GraphError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    if isinstance(weight_rule, str):
        weight_rule = WeightRule.parse(weight_rule)
    try:
        n_hint = int(params["delta"]) + 1 if family == "star" else int(params["n"])
    except KeyError as exc:
        raise GraphError(f"{family} is missing parameter {exc.args[0]!r}") from None
    if weight_exponent is not None and weight_rule.w_max > max(n_hint, 2) ** weight_exponent:
        raise GraphError(f"W_max {weight_rule.w_max} exceeds n^{weight_exponent}")
    rng = SplitMix64(seed)
    weights = weight_rule.draw(max(n_hint, 0), rng)
    n, edges = FAMILIES[family](params, rng)
    return WeightedGraph.from_edges(weights[:n], edges, weight_exponent=weight_exponent)
