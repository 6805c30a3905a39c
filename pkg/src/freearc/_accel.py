"""Backend selection for the hot kernels.

Numba is used when importable unless ``FREEARC_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel falls back to its vectorised numpy
twin. Individual calls can also force a backend with ``backend="numpy"`` or
``backend="numba"``.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_FALSY = ("", "0", "false", "no", "off")


def numba_disabled():
    return os.environ.get("FREEARC_DISABLE_NUMBA", "0").strip().lower() not in _FALSY


def resolve_backend(backend=None):
    if backend is None:
        backend = "numpy" if (numba_disabled() or not HAS_NUMBA) else "numba"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
