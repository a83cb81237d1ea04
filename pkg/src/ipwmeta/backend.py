"""Numeric backend selection.

The solvers that dominate runtime (batched one-parameter root finding for the
bootstrap, and the two-parameter simplex search) exist in two interchangeable
implementations: numba @njit kernels and pure-numpy vectorized code.  The
environment variable ``IPWMETA_BACKEND`` picks one:

    auto   (default) numba if importable, else numpy
    numba  require numba; falls back to numpy with a warning if missing
    numpy  force the pure-numpy path

Both paths implement the same algorithms with the same tolerances; results
agree to floating-point roundoff.  ``benchmarks/bench_backends.py`` compares
their speed.
"""

from __future__ import annotations

import os
import warnings

_ENV_VAR = "IPWMETA_BACKEND"


def _resolve() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        warnings.warn(f"{_ENV_VAR}={choice!r} not recognized; using 'auto'")
        choice = "auto"
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if choice == "numba":
            warnings.warn("numba requested via IPWMETA_BACKEND but not importable; "
                          "falling back to the numpy backend")
        return "numpy"


BACKEND = _resolve()

if BACKEND == "numba":
    from ipwmeta import _kernels_numba as kernels
else:
    from ipwmeta import _kernels_numpy as kernels

solve_one_param_batch = kernels.solve_one_param_batch
solve_two_param_multistart = kernels.solve_two_param_multistart
