"""Hot per-triangle kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set ``NSL_PURE_PY=1``
to force the numpy backend (used by the benchmark and the backend tests).
"""

import os

from . import _core_py

if os.environ.get("NSL_PURE_PY"):
    _impl = _core_py
else:
    try:
        from . import _core_c as _impl
    except ImportError:
        _impl = _core_py

BACKEND = _impl.NAME


def _as_c(a, dtype):
    import numpy as np

    return np.ascontiguousarray(a, dtype=dtype)


def tri_gradients(xy, tris, values):
    return _impl.tri_gradients(_as_c(xy, "f8"), _as_c(tris, "i4"), _as_c(values, "f8"))


def tri_means(tris, values):
    return _impl.tri_means(_as_c(tris, "i4"), _as_c(values, "f8"))


def p_terms(s2, p, eps):
    return _impl.p_terms(_as_c(s2, "f8"), float(p), float(eps))


def p_energy_sum(area, coef, s2, p, eps):
    return _impl.p_energy_sum(
        _as_c(area, "f8"), _as_c(coef, "f8"), _as_c(s2, "f8"), float(p), float(eps)
    )


def backends():
    """All importable backends, name -> module. For benchmarks and tests."""
    out = {"numpy": _core_py}
    try:
        from . import _core_c

        out["cython"] = _core_c
    except ImportError:
        pass
    return out
