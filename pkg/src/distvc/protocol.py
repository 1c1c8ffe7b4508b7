"""Per-vertex state machine for the leveled vault/bank edge-packing protocol.

A vertex keeps its original weight ``w0``, its residual weight ``w`` and a
level.  Each iteration its weight is split into a *vault* ``w0 * gamma**level``
that funds offers (requests) to the lowest-level remaining neighbours, and a
*bank* ``w - vault`` that funds replies (budgets) to requests it receives.
Every accepted amount is charged to both endpoints of the edge, so the
accumulated per-edge totals form a feasible edge packing.

All functions here are pure: they take a :class:`VertexState` plus frozen
inputs and return new values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple

from .exact import Rat, ceil_log, floor_log, rat

__all__ = [
    "Decision",
    "IterationCapExceeded",
    "Kind",
    "Msg",
    "PHASE_OF_KIND",
    "ProtocolError",
    "ProtocolParams",
    "Status",
    "VertexState",
    "apply_iteration_outcome",
    "claim1_holds",
    "compute_vault_bank",
    "gamma_power",
    "grant_budgets",
    "handle_cover_and_isolation",
    "initial_state",
    "select_offer_targets",
]


class ProtocolError(RuntimeError):
    """An invariant that the algorithm guarantees was observed to fail."""


class IterationCapExceeded(RuntimeError):
    """The safety cap on iterations was hit; termination is guaranteed, so this is a bug."""


class Status(str, enum.Enum):
    ACTIVE = "Active"
    IN_COVER = "InCover"
    NOT_IN_COVER = "NotInCover"


class Decision(str, enum.Enum):
    CONTINUE = "ContinueActive"
    JOIN_COVER = "JoinCover"
    NOT_IN_COVER = "NotInCover"


class Kind(str, enum.Enum):
    LEVEL = "LevelAnnounce"
    REQUEST = "Request"
    BUDGET = "Budget"
    COVER = "Cover"


#: Phase in which each message kind is sent; it is read in the following phase.
PHASE_OF_KIND = {Kind.LEVEL: "A", Kind.REQUEST: "B", Kind.BUDGET: "C", Kind.COVER: "D"}


class Msg(NamedTuple):
    sender: int
    receiver: int
    kind: Kind
    value: object = None  # level (int) for LEVEL, rational for REQUEST/BUDGET


@lru_cache(maxsize=8192)
def gamma_power(gamma, k: int):
    return gamma**k


@dataclass(frozen=True)
class ProtocolParams:
    epsilon: object
    gamma: object
    epsilon_prime: object = field(init=False)
    z: int = field(init=False)

    def __post_init__(self):
        eps, gamma = rat(self.epsilon), rat(self.gamma)
        if not eps > 0:
            raise ValueError(f"epsilon must be > 0, got {eps}")
        if not 0 < gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
        eps_p = eps / (2 + eps)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "epsilon_prime", eps_p)
        object.__setattr__(self, "z", ceil_log(gamma, eps_p))


@dataclass(frozen=True, slots=True)
class VertexState:
    id: int
    w0: object
    w: object
    level: int
    neighbors: frozenset
    neighbor_levels: dict = field(default_factory=dict, compare=False)
    status: Status = Status.ACTIVE
    iteration: int = 0


def initial_state(vid: int, weight: int, neighbors: Iterable[int]) -> VertexState:
    w0 = Rat(weight)
    return VertexState(vid, w0, w0, 1, frozenset(neighbors))


def _require_active(s: VertexState) -> None:
    if s.status is not Status.ACTIVE:
        raise ProtocolError(f"vertex {s.id}: transition on terminal state {s.status.value}")


def compute_vault_bank(s: VertexState, p: ProtocolParams):
    _require_active(s)
    vault = s.w0 * gamma_power(p.gamma, s.level)
    bank = s.w - vault
    if not bank > 0:
        raise ProtocolError(
            f"vertex {s.id} iteration {s.iteration}: bank {bank} <= 0 "
            f"(w={s.w}, vault={vault}, level={s.level})"
        )
    return vault, bank


def select_offer_targets(s: VertexState, vault):
    """Neighbours at the minimum announced level, and the equal share of the vault."""
    levels = s.neighbor_levels
    low = min(levels[u] for u in s.neighbors)
    targets = sorted(u for u in s.neighbors if levels[u] == low)
    return targets, vault / len(targets)


def grant_budgets(s: VertexState, requests, bank) -> list[tuple[int, object]]:
    """Greedy replies from the bank, serving requesters in ascending ID order."""
    out = []
    remaining = rat(bank)
    zero = Rat(0)
    for sender, amount in sorted(requests, key=lambda r: r[0]):
        if sender not in s.neighbors:
            raise ProtocolError(f"vertex {s.id}: request from non-neighbour {sender}")
        if not amount > 0:
            raise ProtocolError(f"vertex {s.id}: non-positive request {amount} from {sender}")
        if remaining <= 0:
            out.append((sender, zero))
            continue
        g = amount if amount <= remaining else remaining
        remaining -= g
        out.append((sender, g))
    return out


def apply_iteration_outcome(s: VertexState, received, granted, p: ProtocolParams):
    """Charge this iteration's deals and decide.  Returns ``(Decision, new_state)``.

    A vertex whose residual weight falls to or below its vault moves up to
    ``1 + floor(log_gamma(w / w0))``; it joins the cover once its weight is
    zero or its level exceeds ``z``.
    """
    vault, _ = compute_vault_bank(s, p)
    w = s.w - received - granted
    if w < 0:
        raise ProtocolError(f"vertex {s.id} iteration {s.iteration}: weight went negative ({w})")
    level = s.level
    if w != 0 and w <= vault:
        level = 1 + floor_log(p.gamma, w / s.w0)
    if w == 0 or level >= p.z + 1:
        decision, status = Decision.JOIN_COVER, Status.IN_COVER
    else:
        decision, status = Decision.CONTINUE, Status.ACTIVE
    return decision, VertexState(
        s.id, s.w0, w, level, s.neighbors, s.neighbor_levels, status, s.iteration + 1
    )


def handle_cover_and_isolation(s: VertexState, cover_senders) -> tuple[Decision, VertexState]:
    """Drop neighbours that joined the cover; an isolated vertex leaves as NotInCover."""
    _require_active(s)
    neighbors = s.neighbors
    if cover_senders:
        stray = set(cover_senders) - neighbors
        if stray:
            raise ProtocolError(f"vertex {s.id}: cover message from non-neighbour(s) {sorted(stray)}")
        neighbors = neighbors - set(cover_senders)
    if not neighbors:
        return Decision.NOT_IN_COVER, VertexState(
            s.id, s.w0, s.w, s.level, neighbors, s.neighbor_levels, Status.NOT_IN_COVER, s.iteration
        )
    if neighbors is not s.neighbors:
        s = VertexState(s.id, s.w0, s.w, s.level, neighbors, s.neighbor_levels, s.status, s.iteration)
    return Decision.CONTINUE, s


def claim1_holds(s: VertexState, gamma) -> bool:
    """``gamma**level < w/w0 <= gamma**(level-1)``, compared exactly."""
    ratio = s.w / s.w0
    return gamma_power(gamma, s.level) < ratio <= gamma_power(gamma, s.level - 1)
