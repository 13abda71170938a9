"""Fixed-step RK4 stepper for the lab-frame Bloch equations.

Two interchangeable implementations of the same algorithm live here: a
compiled Cython kernel (``rk4_cython``) and a pure-Python twin
(``rk4_python``).  The compiled kernel is preferred when it imported
successfully; set ``NVQPT_FORCE_PYTHON_KERNEL=1`` to force the fallback.

Both kernels integrate the coherence vector (x, y, z) of the density
matrix; the identity component is conserved exactly by the trace-preserving
generator and is therefore not carried.
"""

import os

if os.environ.get("NVQPT_FORCE_PYTHON_KERNEL"):
    from . import rk4_python as _impl

    BACKEND = "python"
else:
    try:
        from . import rk4_cython as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import rk4_python as _impl

        BACKEND = "python"

integrate_segment = _impl.integrate_segment


def backend_name() -> str:
    """Name of the kernel implementation selected at import time."""
    return BACKEND
