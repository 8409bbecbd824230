"""Kernel dispatch: the compiled extension when built, numpy otherwise.

Set ``RECONNN_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("RECONNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def heat_advance(T, nbr, G, b, adiag, coef, n_steps, trace=None, impl=None):
    """Advance the compact solid-voxel temperature vector ``T`` in place.

    ``nbr`` is a (6, N) int64 neighbour table where a missing neighbour
    points at the voxel itself. When ``trace`` is given, the maximum
    temperature after each step is written into it.
    """
    impl = impl or _impl
    impl.heat_advance(T, nbr, np.ascontiguousarray(G, dtype=np.float64), b, adiag,
                      float(coef), int(n_steps), trace)


def col2im(cols, hp, wp, stride, impl=None):
    """Scatter-add (B, C, k, k, Ho, Wo) columns into a (B, C, hp, wp) image."""
    impl = impl or _impl
    return impl.col2im(np.ascontiguousarray(cols, dtype=np.float64), int(hp), int(wp), int(stride))


def implementations():
    """Mapping of available backend name -> module, for benchmarks and tests."""
    out = {"python": _fallback}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
