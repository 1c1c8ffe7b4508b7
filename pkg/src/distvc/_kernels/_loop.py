# Fused iteration loop for the protocol.  This file is the pure-Python kernel
# and is also textually included by _cloop.pyx, so both backends run the very
# same code.  Keep it free of __future__ imports for that reason.
"""All four phases for all vertices in one tight loop.

Behaviour is identical to driving :mod:`distvc.protocol` vertex by vertex
(the reference engine); the tests compare the two byte for byte.
"""

from distvc.protocol import (
    IterationCapExceeded,
    Kind,
    Msg,
    ProtocolError,
    Status,
)

_ACTIVE = Status.ACTIVE
_IN = Status.IN_COVER
_OUT = Status.NOT_IN_COVER
_LEVEL = Kind.LEVEL
_REQUEST = Kind.REQUEST
_BUDGET = Kind.BUDGET
_COVER = Kind.COVER


def _bits(x):
    return int(abs(x.numerator)).bit_length() + int(x.denominator).bit_length()


def run_protocol(w0, adjacency, gamma, z, cap, check, record):
    """Run to completion.

    ``w0`` holds rational start weights, ``adjacency`` sorted neighbour
    tuples.  Returns ``(w, level, status, iters, delta, counts, max_bits,
    records)`` where ``counts`` is ordered LEVEL, REQUEST, BUDGET, COVER
    and ``records`` is a list of ``(iteration, messages, states, delta
    updates)`` when ``record`` is true, else None.
    """
    n = len(w0)
    zero = gamma - gamma
    w = list(w0)
    level = [1] * n
    status = [_ACTIVE] * n
    iters = [0] * n
    nbrs = [set(a) for a in adjacency]
    gp = [gamma ** 0, gamma]  # gp[k] == gamma**k
    delta = {}
    n_level = n_request = n_budget = n_cover = 0
    max_bits = 0
    records = [] if record else None
    cover_in = {}
    active = list(range(n))
    top = z + 1
    it = 0
    while active:
        if it >= cap:
            raise IterationCapExceeded(f"{len(active)} vertices still active after {cap} iterations")
        sent = [] if record else None

        # phase A: covers from the previous iteration, isolation, level announcements
        live = []
        for v in active:
            iters[v] += 1
            cs = cover_in.get(v)
            nb = nbrs[v]
            if cs:
                for u in cs:
                    if u not in nb:
                        raise ProtocolError(f"vertex {v}: cover message from non-neighbour {u}")
                nb.difference_update(cs)
            if not nb:
                status[v] = _OUT
                continue
            live.append(v)
            lv = level[v]
            n_level += len(nb)
            b = lv.bit_length() + 1
            if b > max_bits:
                max_bits = b
            if record:
                for u in sorted(nb):
                    sent.append(Msg(v, u, _LEVEL, lv))

        # phase B: requests to the lowest-level remaining neighbours
        vaults = {}
        banks = {}
        req_in = {}
        for v in live:
            lv = level[v]
            while len(gp) <= lv + 1:
                gp.append(gp[-1] * gamma)
            vault = w0[v] * gp[lv]
            bank = w[v] - vault
            if not bank > 0:
                raise ProtocolError(f"vertex {v} iteration {it}: bank {bank} <= 0")
            vaults[v] = vault
            banks[v] = bank
            nb = nbrs[v]
            low = min([level[u] for u in nb])
            targets = sorted([u for u in nb if level[u] == low]) if record else [u for u in nb if level[u] == low]
            amount = vault / len(targets)
            n_request += len(targets)
            b = _bits(amount)
            if b > max_bits:
                max_bits = b
            for u in targets:
                r = req_in.get(u)
                if r is None:
                    req_in[u] = [(v, amount)]
                else:
                    r.append((v, amount))
                if record:
                    sent.append(Msg(v, u, _REQUEST, amount))

        # phase C: greedy budgets from the bank, requesters in ascending ID order
        received = {}
        granted = {}
        touched = [] if record else None
        for v in live:
            reqs = req_in.get(v)
            if not reqs:
                granted[v] = zero
                continue
            remaining = banks[v]
            total = zero
            for u, a in reqs:
                if remaining <= 0:
                    g = zero
                else:
                    g = a if a <= remaining else remaining
                    remaining -= g
                n_budget += 1
                if g:
                    total += g
                    received[u] = received.get(u, zero) + g
                    e = (v, u) if v < u else (u, v)
                    delta[e] = delta.get(e, zero) + g
                    if record:
                        touched.append(e)
                    b = _bits(g)
                else:
                    b = 1
                if b > max_bits:
                    max_bits = b
                if record:
                    sent.append(Msg(v, u, _BUDGET, g))
            granted[v] = total

        # phase D: settle weights, levels and cover decisions
        cover_in = {}
        for v in live:
            lv = level[v]
            nw = w[v] - received.get(v, zero) - granted[v]
            if nw < 0:
                raise ProtocolError(f"vertex {v} iteration {it}: weight went negative ({nw})")
            wz = w0[v]
            if nw != 0 and nw <= vaults[v]:
                # 1 + floor(log_gamma(nw / w0)) by walking exact powers
                ratio = nw / wz
                k = lv
                while True:
                    while len(gp) <= k + 1:
                        gp.append(gp[-1] * gamma)
                    if gp[k + 1] >= ratio:
                        k += 1
                    else:
                        break
                lv = k + 1
                level[v] = lv
            w[v] = nw
            if nw == 0 or lv >= top:
                status[v] = _IN
                nb = nbrs[v]
                n_cover += len(nb)
                for u in sorted(nb) if record else nb:
                    c = cover_in.get(u)
                    if c is None:
                        cover_in[u] = [v]
                    else:
                        c.append(v)
                    if record:
                        sent.append(Msg(v, u, _COVER, None))
            elif check:
                while len(gp) <= lv:
                    gp.append(gp[-1] * gamma)
                ratio = nw / wz
                if not (gp[lv] < ratio <= gp[lv - 1]):
                    raise ProtocolError(
                        f"level invariant broken at vertex {v} iteration {it}: w/w0={ratio} level={lv}"
                    )

        if record:
            upd = sorted(set(touched))
            records.append(
                (
                    it,
                    sent,
                    [(v, w[v], level[v], status[v]) for v in active],
                    [(a, b, delta[(a, b)]) for a, b in upd],
                )
            )
        active = [v for v in active if status[v] is _ACTIVE]
        it += 1

    return w, level, status, iters, delta, (n_level, n_request, n_budget, n_cover), max_bits, records
