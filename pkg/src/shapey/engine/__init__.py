"""Similarity engine: backend selection plus the blocked masked-search ops.

The hot kernel exists twice: a compiled extension (``_kernels``, Cython) and
a pure-numpy fallback (``pykernels``). Both accumulate in float64 with an
order that depends only on the row dimension, so each backend is
bit-deterministic across tile shapes and worker counts. The two backends
may differ from each other in the last couple of ulps; ``shapey bench``
compares their throughput and agreement.

Set SHAPEY_BACKEND=python or =native to override auto-selection.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import pykernels

try:
    from . import _kernels  # compiled; absent until built
except ImportError:  # pragma: no cover - depends on build environment
    _kernels = None


class BackendError(RuntimeError):
    pass


def available_backends() -> tuple[str, ...]:
    return ("python",) if _kernels is None else ("native", "python")


def get_backend(name: str | None = None) -> ModuleType:
    """Resolve a kernel backend by name ("auto", "native", "python")."""
    if name in (None, "auto"):
        name = os.environ.get("SHAPEY_BACKEND", "auto")
    if name in (None, "auto"):
        return _kernels if _kernels is not None else pykernels
    if name == "python":
        return pykernels
    if name == "native":
        if _kernels is None:
            raise BackendError(
                "native backend not built; run `python setup.py build_ext --inplace`"
            )
        return _kernels
    raise BackendError(f"unknown backend {name!r}")


from .core import (  # noqa: E402  (re-exported API)
    TileConfig,
    TopKResult,
    masked_topk,
    pairwise_scores,
    tuning_curve,
    group_best,
)

__all__ = [
    "available_backends",
    "get_backend",
    "BackendError",
    "TileConfig",
    "TopKResult",
    "masked_topk",
    "pairwise_scores",
    "tuning_curve",
    "group_best",
]
