"""Kernel backend selection.

The rasterizer's per-pixel compositing loops are the hot path of training.
They exist twice with identical semantics: a numba @njit version and a pure
numpy/python fallback. The fallback is selected by setting the environment
variable SLICESPLAT_NO_NUMBA=1 (or when numba is not importable); it is the
reference for cross-checking and the escape hatch on platforms without a
working JIT. `benchmarks/bench_rasterizer.py` compares the two.
"""

import os

_FORCED_OFF = os.environ.get("SLICESPLAT_NO_NUMBA", "0") not in ("", "0")

if not _FORCED_OFF:
    try:
        import numba  # noqa: F401

        _HAVE_NUMBA = True
    except ImportError:
        _HAVE_NUMBA = False
else:
    _HAVE_NUMBA = False


def use_numba() -> bool:
    """True when the numba kernels are active for this process."""
    return _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if _HAVE_NUMBA else "numpy"


def get_kernels():
    """Return the active kernel module (numba-jitted or numpy fallback)."""
    if _HAVE_NUMBA:
        from slicesplat import _kernels_numba

        return _kernels_numba
    from slicesplat import _kernels_numpy

    return _kernels_numpy
