"""Kernel dispatch between numba and pure numpy.

Hot per-pixel kernels ship in two builds: a numba ``@njit`` variant and a
vectorized numpy fallback. The numpy path is used automatically when numba
is not importable, and can be forced with ``RAINSTACK_NO_NUMBA=1`` (useful
for debugging and for the benchmark in ``benchmarks/bench_kernels.py``).
"""

import os

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - CI image always ships numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        # transparent pass-through so jitted modules still import
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


_OFF_VALUES = ("1", "true", "yes", "on")


def numba_enabled() -> bool:
    """True when the jitted kernel variants should be dispatched."""
    if not NUMBA_AVAILABLE:
        return False
    return os.environ.get("RAINSTACK_NO_NUMBA", "").lower() not in _OFF_VALUES


def set_num_threads(n: int) -> None:
    """Limit numba's thread pool; silently a no-op on the numpy path."""
    if NUMBA_AVAILABLE and n >= 1:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
