"""Numeric backend selection for the hot kernels.

Every hot kernel in :mod:`thzdt.kernels` ships twice: an explicit-loop
variant compiled with numba's ``@njit`` and a vectorized pure-numpy
fallback. Which one the package dispatches to is decided once at import
time from the ``THZDT_BACKEND`` environment variable:

    THZDT_BACKEND=numba   use the compiled lane (default when numba imports)
    THZDT_BACKEND=numpy   force the pure-numpy lane

Both lanes stay importable whenever numba is present so the test suite
and ``benchmarks/bench_kernels.py`` can compare them directly.

``fastmath`` and ``parallel`` are deliberately left off: reductions must
keep a fixed association order so repeated runs are bit-reproducible.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("THZDT_BACKEND", "numba").strip().lower()
if _FLAG not in ("numba", "numpy"):
    raise RuntimeError(
        "THZDT_BACKEND must be 'numba' or 'numpy', got %r" % _FLAG
    )

NUMBA_AVAILABLE = False
if _FLAG != "numpy":
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_AVAILABLE = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover
        NUMBA_AVAILABLE = False

# The lane actually dispatched to by thzdt.kernels.
BACKEND = "numba" if (_FLAG == "numba" and NUMBA_AVAILABLE) else "numpy"

JIT_OPTIONS = {"cache": True, "nogil": True}
