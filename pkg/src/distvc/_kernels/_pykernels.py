"""Pure-Python reference kernels; the compiled module mirrors these exactly.

A graph is given as ``adj[v]`` = bitmask of v's neighbours plus integer
weights.  Both functions return ``(optimum, cover_mask)``; among optimal
covers the enumeration returns the numerically smallest mask.
"""


def _popcount(x):
    return bin(x).count("1")


def _matching_bound(alive, adj, w):
    # weight of a greedy matching (min endpoint weight per matched edge)
    lb = 0
    free = alive
    while free:
        low = free & -free
        u = low.bit_length() - 1
        free ^= low
        cand = adj[u] & free
        if cand:
            vb = cand & -cand
            v = vb.bit_length() - 1
            free ^= vb
            lb += w[u] if w[u] < w[v] else w[v]
    return lb


def mwvc_branch_and_bound(n, adj, w):
    """Branch on a max-degree vertex (take it, or take all its neighbours)."""
    full = (1 << n) - 1
    # start from the cover made of every non-isolated vertex
    best_mask = 0
    for v in range(n):
        if adj[v]:
            best_mask |= 1 << v
    best = [sum(w[v] for v in range(n) if best_mask >> v & 1), best_mask]

    def go(alive, cost, chosen):
        pick = -1
        pick_deg = 0
        rest = alive
        while rest:
            low = rest & -rest
            u = low.bit_length() - 1
            rest ^= low
            d = _popcount(adj[u] & alive)
            if d == 0:
                alive ^= low
            elif d > pick_deg:
                pick, pick_deg = u, d
        if pick < 0:
            if cost < best[0]:
                best[0], best[1] = cost, chosen
            return
        if cost + _matching_bound(alive, adj, w) >= best[0]:
            return
        bit = 1 << pick
        go(alive & ~bit, cost + w[pick], chosen | bit)
        nb = adj[pick] & alive
        add = 0
        rest = nb
        while rest:
            low = rest & -rest
            add += w[low.bit_length() - 1]
            rest ^= low
        go(alive & ~bit & ~nb, cost + add, chosen | nb)

    go(full, 0, 0)
    return best[0], best[1]


def mwvc_enumerate(n, adj, w):
    """Scan all 2**n subsets."""
    best = None
    best_mask = 0
    for mask in range(1 << n):
        ok = True
        for u in range(n):
            if not mask >> u & 1 and adj[u] & ~mask:
                ok = False
                break
        if not ok:
            continue
        total = 0
        for u in range(n):
            if mask >> u & 1:
                total += w[u]
        if best is None or total < best:
            best, best_mask = total, mask
    return best, best_mask
