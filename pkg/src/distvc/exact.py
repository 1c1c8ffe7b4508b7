"""Exact rational arithmetic and integer-only logarithm helpers.

``Rat`` is ``gmpy2.mpq`` when gmpy2 is importable and ``fractions.Fraction``
otherwise.  Both keep values in lowest terms with a positive denominator, and
every routine here only uses exact operations on them, so results are
identical under either backend.  Set ``DISTVC_FORCE_PURE=1`` before import to
pin the stdlib backend.
"""

from __future__ import annotations

import math
import os
import re
from fractions import Fraction

__all__ = [
    "Rat",
    "RATIONAL_BACKEND",
    "GRID_BITS",
    "rat",
    "parse_rat",
    "rat_str",
    "payload_bits",
    "pow_rat",
    "floor_log",
    "ceil_log",
    "log2_fixed",
    "iroot",
    "grid_root",
    "rational_approx_inv_sqrt_log",
    "default_analysis_K",
    "ceil_iteration_bound",
]

_FORCE_PURE = os.environ.get("DISTVC_FORCE_PURE", "") not in ("", "0")

if _FORCE_PURE:
    Rat = Fraction
    RATIONAL_BACKEND = "fractions"
else:
    try:
        from gmpy2 import mpq as Rat

        RATIONAL_BACKEND = "gmpy2"
    except ImportError:  # pragma: no cover - depends on environment
        Rat = Fraction
        RATIONAL_BACKEND = "fractions"

#: Denominator exponent of the grid used for irrational parameter choices.
GRID_BITS = 30
_GRID = 1 << GRID_BITS

_RAT_RE = re.compile(r"^\s*([+-]?\d+)\s*(?:/\s*(\d+))?\s*$")


def rat(num, den=1):
    """Build a backend rational from integers (or an existing rational)."""
    if den == 1 and not isinstance(num, int):
        return Rat(num.numerator, num.denominator)
    return Rat(num, den)


def parse_rat(text: str):
    """Parse ``"p"`` or ``"p/q"``; floats and decimals are rejected."""
    m = _RAT_RE.match(text)
    if m is None:
        raise ValueError(f"not an exact rational: {text!r}")
    num = int(m.group(1))
    den = int(m.group(2)) if m.group(2) is not None else 1
    if den == 0:
        raise ValueError(f"zero denominator: {text!r}")
    return Rat(num, den)


def rat_str(x) -> str:
    """Canonical ``"num/den"`` text form (denominator always present)."""
    return f"{int(x.numerator)}/{int(x.denominator)}"


def payload_bits(x) -> int:
    """Bit-length of a rational payload: bits(num) + bits(den)."""
    return int(abs(x.numerator)).bit_length() + int(x.denominator).bit_length()


def pow_rat(base, exp: int):
    if exp < 0:
        raise ValueError("exponent must be non-negative")
    return rat(base) ** exp if exp else Rat(1)


def _check_gamma(gamma) -> None:
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def floor_log(gamma, x) -> int:
    """Return the k >= 0 with ``gamma**(k+1) < x <= gamma**k``.

    Found by walking exact powers of ``gamma``; no floating point.
    """
    _check_gamma(gamma)
    if not 0 < x <= 1:
        raise ValueError(f"x must lie in (0, 1], got {x}")
    k = 0
    nxt = gamma
    while nxt >= x:
        k += 1
        nxt *= gamma
    return k


def ceil_log(gamma, x) -> int:
    """Return ``min{k >= 1 : gamma**k <= x}``."""
    _check_gamma(gamma)
    if not 0 < x < 1:
        raise ValueError(f"x must lie in (0, 1), got {x}")
    k = 1
    p = gamma
    while p > x:
        k += 1
        p *= gamma
    return k


def log2_fixed(n: int, frac_bits: int = 64) -> int:
    """Lower approximation of ``2**frac_bits * log2(n)`` for an integer n >= 1.

    Classic digit-by-digit binary logarithm on a truncated fixed-point
    mantissa.  Integer-only, deterministic, exact when n is a power of two,
    and monotone non-decreasing in n.
    """
    if n < 1:
        raise ValueError("log2_fixed needs n >= 1")
    e = n.bit_length() - 1
    work = frac_bits + 32
    one = 1 << work
    two = one << 1
    # mantissa in [1, 2) scaled by 2**work, truncated
    y = (n << work) >> e
    frac = 0
    for _ in range(frac_bits):
        y = (y * y) >> work
        frac <<= 1
        if y >= two:
            y >>= 1
            frac |= 1
    return (e << frac_bits) | frac


def iroot(n: int, k: int) -> int:
    """Floor of the k-th root of a non-negative integer."""
    if n < 0 or k < 1:
        raise ValueError("iroot needs n >= 0 and k >= 1")
    if n < 2 or k == 1:
        return n
    if k == 2:
        return math.isqrt(n)
    lo, hi = 0, 1 << (n.bit_length() // k + 1)
    while lo < hi:
        mid = (lo + hi + 1) >> 1
        if mid**k <= n:
            lo = mid
        else:
            hi = mid - 1
    return lo


def grid_root(x, k: int):
    """``floor(2**30 * x**(1/k)) / 2**30`` for a non-negative rational x."""
    x = rat(x)
    if x < 0:
        raise ValueError("grid_root needs x >= 0")
    # largest m with (m / 2**30)**k <= num/den  <=>  m**k * den <= num * 2**(30k)
    num, den = int(x.numerator), int(x.denominator)
    m = iroot((num << (GRID_BITS * k)) // den, k)
    return Rat(m, _GRID)


def rational_approx_inv_sqrt_log(delta: int):
    """Grid approximation of ``1/sqrt(log2 delta)``, rounded down, for delta > 16.

    The log is taken with :func:`log2_fixed` (64 fractional bits) and the
    root with an integer square root, so the result is exact whenever
    ``log2 delta`` is a perfect square integer.
    """
    if delta <= 16:
        raise ValueError(f"delta must exceed 16, got {delta}")
    lf = log2_fixed(delta, 64)
    m = math.isqrt(((1 << (2 * GRID_BITS)) << 64) // lf)
    m = max(1, min(m, _GRID // 2))
    return Rat(m, _GRID)


def default_analysis_K(delta: int):
    """``max(2, sqrt(log2 d)/log2 log2 d)`` on the 2**-30 grid; 2 for d <= 16."""
    if delta <= 16:
        return Rat(2)
    lf = log2_fixed(delta, 64)  # log2(d) * 2**64
    sqrt_l = math.isqrt(lf << 64)  # sqrt(log2 d) * 2**64
    loglog = log2_fixed(lf, 64) - (64 << 64)  # log2(log2 d) * 2**64
    k = Rat((sqrt_l << GRID_BITS) // loglog, _GRID)
    return max(Rat(2), k)


def _perfect_power_base(k: int) -> tuple[int, int]:
    """Write k = c**e with e maximal; returns (c, e)."""
    for e in range(k.bit_length(), 1, -1):
        c = iroot(k, e)
        if c > 1 and c**e == k:
            return c, e
    return k, 1


def _exact_log_ratio(d: int, K):
    """``log_K d`` as a rational when it is one, else None."""
    if K.denominator != 1:
        return None  # (a/b)**r is never an integer >= 2 when b > 1
    c, e = _perfect_power_base(int(K.numerator))
    m = 0
    while d > 1 and d % c == 0:
        d //= c
        m += 1
    if d != 1:
        return None
    return Rat(m, e)


def ceil_iteration_bound(z: int, gamma, K, d: int, max_prec: int = 1 << 16) -> int:
    """Exact ``ceil(z * (K/gamma + log2 d / log2 K))``; the log term is 0 for d <= 1.

    When the log ratio is irrational it is enclosed with interval arithmetic
    at growing precision until the ceiling is determined.
    """
    gamma, K = rat(gamma), rat(K)
    _check_gamma(gamma)
    if not K > 1:
        raise ValueError("analysis constant K must exceed 1")
    base = z * K / gamma
    if d <= 1:
        return math.ceil(Fraction(int(base.numerator), int(base.denominator)))
    exact = _exact_log_ratio(d, K)
    if exact is not None:
        total = base + z * exact
        return math.ceil(Fraction(int(total.numerator), int(total.denominator)))

    from mpmath.ctx_iv import MPIntervalContext
    from mpmath.libmp import to_man_exp

    def _ceil_endpoint(raw) -> int:
        man, exp = to_man_exp(raw)
        return math.ceil(Fraction(int(man)) * Fraction(2) ** int(exp))

    ctx = MPIntervalContext()  # private context: no shared precision state
    prec = 128
    while prec <= max_prec:
        ctx.prec = prec
        b = ctx.mpf(int(base.numerator)) / int(base.denominator)
        kk = ctx.mpf(int(K.numerator)) / int(K.denominator)
        total = b + z * ctx.log(ctx.mpf(d)) / ctx.log(kk)
        lo_raw, hi_raw = total._mpi_
        lo, hi = _ceil_endpoint(lo_raw), _ceil_endpoint(hi_raw)
        if lo == hi:
            return lo
        prec *= 2
    raise ArithmeticError("could not separate iteration bound from an integer")
