from fractions import Fraction

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from distvc.exact import Rat
from distvc.protocol import (
    Decision,
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

HALF = Rat(1, 2)


def state(w0, w, level, neighbors=(1,), levels=None, vid=0):
    return VertexState(vid, Rat(w0), Rat(w), level, frozenset(neighbors), levels or {})


def test_params():
    p = ProtocolParams(Rat(1), HALF)
    assert p.epsilon_prime == Rat(1, 3)
    assert p.z == 2
    assert p.gamma**p.z <= p.epsilon_prime


@pytest.mark.parametrize("eps,gamma", [(Rat(0), HALF), (Rat(-1), HALF), (Rat(1), Rat(1)), (Rat(1), Rat(0))])
def test_params_reject(eps, gamma):
    with pytest.raises(ValueError):
        ProtocolParams(eps, gamma)


@pytest.mark.parametrize(
    "w0,gamma,level,w,vault,bank",
    [
        (16, HALF, 1, 16, Rat(8), Rat(8)),
        (16, HALF, 2, 7, Rat(4), Rat(3)),
        (1, Rat(1, 3), 1, 1, Rat(1, 3), Rat(2, 3)),
    ],
)
def test_vault_bank(w0, gamma, level, w, vault, bank):
    p = ProtocolParams(Rat(1, 2), gamma)
    assert compute_vault_bank(state(w0, w, level), p) == (vault, bank)


def test_vault_bank_nonpositive_bank_is_error():
    p = ProtocolParams(Rat(1, 2), HALF)
    with pytest.raises(ProtocolError):
        compute_vault_bank(state(16, 8, 1), p)


@pytest.mark.parametrize(
    "levels,vault,targets,amount",
    [
        ({1: 1, 2: 1, 3: 2}, Rat(6), [1, 2], Rat(3)),
        ({1: 2}, HALF, [1], HALF),
        ({1: 3, 2: 3, 3: 3}, Rat(1), [1, 2, 3], Rat(1, 3)),
    ],
)
def test_offer_targets(levels, vault, targets, amount):
    s = state(8, 8, 1, levels.keys(), levels)
    assert select_offer_targets(s, vault) == (targets, amount)


@pytest.mark.parametrize(
    "bank,requests,grants",
    [
        (Rat(5), [(2, Rat(3)), (7, Rat(3))], [(2, Rat(3)), (7, Rat(2))]),
        (Rat(0), [(2, Rat(3)), (7, Rat(3))], [(2, Rat(0)), (7, Rat(0))]),
        (Rat(1), [(9, HALF), (4, HALF), (5, HALF)], [(4, HALF), (5, HALF), (9, Rat(0))]),
    ],
)
def test_grant_budgets(bank, requests, grants):
    s = state(8, 8, 1, [r[0] for r in requests])
    assert grant_budgets(s, requests, bank) == grants


def test_grant_budgets_rejects_strangers_and_nonpositive():
    s = state(8, 8, 1, [1])
    with pytest.raises(ProtocolError):
        grant_budgets(s, [(2, Rat(1))], Rat(3))
    with pytest.raises(ProtocolError):
        grant_budgets(s, [(1, Rat(0))], Rat(3))


amounts = st.fractions(min_value=Fraction(1, 1000), max_value=10).map(lambda f: Rat(f.numerator, f.denominator))


@given(st.dictionaries(st.integers(1, 50), amounts, min_size=1, max_size=12), st.fractions(min_value=0, max_value=30))
def test_grant_budgets_greedy(reqs, bank):
    bank = Rat(bank.numerator, bank.denominator)
    s = state(100, 100, 1, reqs.keys())
    grants = grant_budgets(s, list(reqs.items()), bank)
    assert [u for u, _ in grants] == sorted(reqs)
    assert sum(g for _, g in grants) <= bank
    left = bank
    for u, g in grants:
        assert 0 <= g <= reqs[u]
        assert g == min(reqs[u], max(left, 0))
        left -= g


def test_outcome_k2_hand_simulation():
    # single edge, unit weights, eps=1, gamma=1/2: vault=bank=1/2, both requests fully granted
    p = ProtocolParams(Rat(1), HALF)
    s = initial_state(0, 1, [1])
    assert compute_vault_bank(s, p) == (HALF, HALF)
    d, s2 = apply_iteration_outcome(s, HALF, HALF, p)
    assert d is Decision.JOIN_COVER and s2.w == 0 and s2.status is Status.IN_COVER


def test_outcome_guard_not_triggered():
    p = ProtocolParams(Rat(1), HALF)
    d, s2 = apply_iteration_outcome(state(8, 8, 1), Rat(0), Rat(3), p)
    assert d is Decision.CONTINUE and s2.w == 5 and s2.level == 1


def test_outcome_jump_levels():
    # new w = 1, w/w0 = 1/8 -> level 1 + 3 = 4 >= z + 1 = 3
    p = ProtocolParams(Rat(1), HALF)
    d, s2 = apply_iteration_outcome(state(8, 8, 1), Rat(4), Rat(3), p)
    assert s2.level == 4 and d is Decision.JOIN_COVER


def test_outcome_negative_is_error():
    p = ProtocolParams(Rat(1), HALF)
    with pytest.raises(ProtocolError):
        apply_iteration_outcome(state(8, 8, 1), Rat(5), Rat(4), p)


def test_cover_and_isolation():
    s = state(1, 1, 1, [1])
    d, s2 = handle_cover_and_isolation(s, {1})
    assert d is Decision.NOT_IN_COVER and s2.status is Status.NOT_IN_COVER
    d, s2 = handle_cover_and_isolation(state(1, 1, 1, [1, 2]), {1})
    assert d is Decision.CONTINUE and s2.neighbors == {2}
    d, _ = handle_cover_and_isolation(state(1, 1, 1, []), set())
    assert d is Decision.NOT_IN_COVER
    with pytest.raises(ProtocolError):
        handle_cover_and_isolation(state(1, 1, 1, [1]), {3})


def test_terminal_state_is_final():
    s = VertexState(0, Rat(1), Rat(0), 1, frozenset([1]), {}, Status.IN_COVER)
    with pytest.raises(ProtocolError):
        handle_cover_and_isolation(s, set())
    with pytest.raises(ProtocolError):
        compute_vault_bank(s, ProtocolParams(Rat(1), HALF))


gamma_st = st.fractions(min_value=Fraction(1, 20), max_value=Fraction(19, 20)).map(lambda f: Rat(f.numerator, f.denominator))
eps_st = st.fractions(min_value=Fraction(1, 1000), max_value=4).map(lambda f: Rat(f.numerator, f.denominator))


@given(gamma_st, eps_st, st.integers(1, 100), st.integers(1, 6), st.fractions(0, 1), st.fractions(0, 1), st.fractions(0, 1))
def test_outcome_preserves_level_invariant(gamma, eps, w0, level, pos, r_frac, g_frac):
    """From any state satisfying the invariant, legal deals keep it (or end the vertex)."""
    p = ProtocolParams(eps, gamma)
    assume(level <= p.z)
    lo, hi = gamma**level, gamma ** (level - 1)
    ratio = lo + (hi - lo) * Rat(pos.numerator, pos.denominator)
    assume(ratio > lo)
    s = state(w0, w0 * ratio, level)
    assert claim1_holds(s, gamma)
    vault, bank = compute_vault_bank(s, p)
    received = vault * Rat(r_frac.numerator, r_frac.denominator)
    granted = bank * Rat(g_frac.numerator, g_frac.denominator)
    d, s2 = apply_iteration_outcome(s, received, granted, p)
    assert 0 <= s2.w <= s.w and s2.level >= s.level
    if d is Decision.CONTINUE:
        assert claim1_holds(s2, gamma)
    else:
        assert s2.w <= p.epsilon_prime * s2.w0
