"""Backend switch for the compiled kernels.

Numba is used when importable unless ``GSCL_DISABLE_NUMBA`` is set to a truthy
value, in which case every kernel in :mod:`gscl.kernels` falls back to its
vectorised numpy twin.
"""
import os

_FALSEY = {"", "0", "false", "no", "off"}


def _flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSEY


try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _flag("GSCL_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
