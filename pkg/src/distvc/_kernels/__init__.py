"""Hot kernels, compiled when possible.

Two kernel families, each with a compiled module and a pure-Python twin:

* exact minimum-weight vertex cover on bitmask adjacency
  (``mwvc_branch_and_bound``, ``mwvc_enumerate``): ``_ckernels`` / ``_pykernels``
* the fused protocol iteration loop (``run_protocol``): ``_cloop`` / ``_loop``

The compiled modules are used when the extension was built; ``BACKEND``
says which family members are live.  ``DISTVC_FORCE_PURE=1`` forces the
fallback.  Every implementation stays importable for cross-checks and
benchmarks via :func:`available_backends`.
"""

import os

from . import _loop, _pykernels

_FORCE_PURE = os.environ.get("DISTVC_FORCE_PURE", "") not in ("", "0")


def _compiled(name):
    if _FORCE_PURE:
        return None
    try:
        return __import__(f"{__name__}.{name}", fromlist=[name])
    except ImportError:  # extension not built
        return None


_oracle = _compiled("_ckernels") or _pykernels
_iterate = _compiled("_cloop") or _loop

BACKEND = {
    "oracle": "cython" if _oracle is not _pykernels else "python",
    "loop": "cython" if _iterate is not _loop else "python",
}
mwvc_branch_and_bound = _oracle.mwvc_branch_and_bound
mwvc_enumerate = _oracle.mwvc_enumerate
run_protocol = _iterate.run_protocol


def available_backends(family="oracle"):
    """Map backend name to module for every implementation of a kernel family."""
    pure, cname = {"oracle": (_pykernels, "_ckernels"), "loop": (_loop, "_cloop")}[family]
    out = {"python": pure}
    try:
        out["cython"] = __import__(f"{__name__}.{cname}", fromlist=[cname])
    except ImportError:
        pass
    return out
