"""Hot kernels with a compiled backend and a pure-Python fallback.

The compiled extension is preferred. Set ``EDGESIM_PURE_PYTHON=1`` before
import to force the fallback. Both backends are importable directly as
``edgesim.kernels._pykernels`` and ``edgesim.kernels._ckernels``.
"""
from __future__ import annotations

import os

from . import _pykernels

_backend = _pykernels
BACKEND = "python"

if not os.environ.get("EDGESIM_PURE_PYTHON"):
    try:
        from . import _ckernels as _backend  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        pass

match_topic = _backend.match_topic
close_pairs = _backend.close_pairs
logistic_grad = _backend.logistic_grad
cross_entropy = _backend.cross_entropy
sgd_epoch = _backend.sgd_epoch


def available_backends() -> dict[str, object]:
    """Map backend name to module for every importable backend."""
    out: dict[str, object] = {"python": _pykernels}
    try:
        from . import _ckernels

        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out


__all__ = [
    "BACKEND",
    "available_backends",
    "close_pairs",
    "cross_entropy",
    "logistic_grad",
    "match_topic",
    "sgd_epoch",
]
