# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of ``_pykernels`` for graphs with n <= 64 and int64 weight sums."""

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil
    int __builtin_ctzll(unsigned long long) nogil


cdef struct Ctx:
    int n
    uint64_t *adj
    int64_t *w
    int64_t best
    uint64_t best_mask


cdef inline int _low_index(uint64_t x) nogil:
    return __builtin_ctzll(x)


cdef int64_t _matching_bound(uint64_t alive, Ctx *c) nogil:
    cdef int64_t lb = 0
    cdef uint64_t free_ = alive, cand
    cdef int u, v
    while free_:
        u = _low_index(free_)
        free_ &= free_ - 1
        cand = c.adj[u] & free_
        if cand:
            v = _low_index(cand)
            free_ &= ~((<uint64_t>1) << v)
            lb += c.w[u] if c.w[u] < c.w[v] else c.w[v]
    return lb


cdef void _go(uint64_t alive, int64_t cost, uint64_t chosen, Ctx *c) nogil:
    cdef int pick = -1, pick_deg = 0, d, u
    cdef uint64_t rest = alive, bit, nb
    cdef int64_t add = 0
    while rest:
        u = _low_index(rest)
        rest &= rest - 1
        d = __builtin_popcountll(c.adj[u] & alive)
        if d == 0:
            alive &= ~((<uint64_t>1) << u)
        elif d > pick_deg:
            pick = u
            pick_deg = d
    if pick < 0:
        if cost < c.best:
            c.best = cost
            c.best_mask = chosen
        return
    if cost + _matching_bound(alive, c) >= c.best:
        return
    bit = (<uint64_t>1) << pick
    _go(alive & ~bit, cost + c.w[pick], chosen | bit, c)
    nb = c.adj[pick] & alive
    rest = nb
    while rest:
        u = _low_index(rest)
        rest &= rest - 1
        add += c.w[u]
    _go(alive & ~bit & ~nb, cost + add, chosen | nb, c)


cdef Ctx _load(int n, adj, w) except *:
    cdef Ctx c
    if n > 64:
        raise ValueError("compiled kernels support n <= 64")
    c.n = n
    c.adj = <uint64_t *> malloc(max(n, 1) * sizeof(uint64_t))
    c.w = <int64_t *> malloc(max(n, 1) * sizeof(int64_t))
    if c.adj == NULL or c.w == NULL:
        free(c.adj)
        free(c.w)
        raise MemoryError()
    for i in range(n):
        c.adj[i] = adj[i]
        c.w[i] = w[i]
    return c


def mwvc_branch_and_bound(int n, adj, w):
    if sum(w) >= (1 << 62):
        raise OverflowError("weight sum too large for compiled kernel")
    cdef Ctx c = _load(n, adj, w)
    cdef uint64_t full = ((<uint64_t>1) << n) - 1 if n < 64 else <uint64_t>0xFFFFFFFFFFFFFFFF
    cdef int v
    try:
        c.best_mask = 0
        c.best = 0
        for v in range(n):
            if c.adj[v]:
                c.best_mask |= (<uint64_t>1) << v
                c.best += c.w[v]
        with nogil:
            _go(full, 0, 0, &c)
        return int(c.best), int(c.best_mask)
    finally:
        free(c.adj)
        free(c.w)


def mwvc_enumerate(int n, adj, w):
    if n > 40:
        raise ValueError("enumeration is limited to n <= 40")
    if sum(w) >= (1 << 62):
        raise OverflowError("weight sum too large for compiled kernel")
    cdef Ctx c = _load(n, adj, w)
    cdef uint64_t mask, top = (<uint64_t>1) << n
    cdef int u
    cdef bint ok
    cdef int64_t total, best = -1
    cdef uint64_t best_mask = 0
    try:
        with nogil:
            mask = 0
            while mask < top:
                ok = True
                for u in range(n):
                    if not (mask >> u) & 1 and c.adj[u] & ~mask:
                        ok = False
                        break
                if ok:
                    total = 0
                    for u in range(n):
                        if (mask >> u) & 1:
                            total += c.w[u]
                    if best < 0 or total < best:
                        best = total
                        best_mask = mask
                mask += 1
        return int(best), int(best_mask)
    finally:
        free(c.adj)
        free(c.w)
