"""Backend selection for the hot kernels.

The compiled extension ``pqlab._ckernels`` is used when importable.  Set
``PQLAB_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("PQLAB_BACKEND", "").lower() == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

pq_eval = _impl.pq_eval
pq_mollified = _impl.pq_mollified
sample_p1 = _impl.sample_p1
sample_q2 = _impl.sample_q2


def available_backends():
    """Map of backend name to kernel module, for benchmarks and tests."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
