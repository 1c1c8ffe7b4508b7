"""Simulator and verifier for a deterministic distributed (2+eps)-approximation
of minimum-weight vertex cover, in exact rational arithmetic."""

from .engine import GammaMode, RunConfig, RunReport, Trace, replay, run
from .exact import RATIONAL_BACKEND, Rat, parse_rat
from .graph import WeightedGraph, generate, parse, serialize
from .verify import Verdict, exact_mwvc, verify_run

__version__ = "0.1.0"

__all__ = [
    "GammaMode",
    "RATIONAL_BACKEND",
    "Rat",
    "RunConfig",
    "RunReport",
    "Trace",
    "Verdict",
    "WeightedGraph",
    "exact_mwvc",
    "generate",
    "parse",
    "parse_rat",
    "replay",
    "run",
    "serialize",
    "verify_run",
]
