"""Counter-based normal variates.

Every draw is a pure function of ``(seed, step)`` where ``seed`` is the
trajectory seed (``seed_base + index``). No stream state is shared between
trajectories, so any subset of an ensemble can be re-run bit-for-bit and
parallel chunks merge without coordination.
"""
import numpy as np

from ._accel import njit

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always")
def normal_nb(seed, step):
    h1 = _mix(np.uint64(seed) * _GOLDEN + _mix(np.uint64(step) + _GOLDEN))
    h2 = _mix(h1 + _GOLDEN)
    u1 = (np.float64(h1 >> _S11) + 1.0) * _INV53
    u2 = np.float64(h2 >> _S11) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def normal_np(seed, step):
    """Vectorised twin of :func:`normal_nb` (broadcasts ``seed`` and ``step``)."""
    seed = np.asarray(seed).astype(np.uint64)
    step = np.asarray(step).astype(np.uint64)
    with np.errstate(over="ignore"):
        h1 = _mix_np(seed * _GOLDEN + _mix_np(step + _GOLDEN))
        h2 = _mix_np(h1 + _GOLDEN)
    u1 = ((h1 >> _S11).astype(np.float64) + 1.0) * _INV53
    u2 = (h2 >> _S11).astype(np.float64) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def standard_normal(seed, step, backend=None):
    from ._accel import resolve_backend

    if resolve_backend(backend) == "numba":
        seed_a, step_a = np.broadcast_arrays(np.asarray(seed, dtype=np.int64),
                                             np.asarray(step, dtype=np.int64))
        out = np.empty(seed_a.shape)
        _fill_normal(seed_a.ravel(), step_a.ravel(), out.reshape(-1))
        return out if out.ndim else float(out)
    out = normal_np(seed, step)
    return out if np.ndim(out) else float(out)


@njit
def _fill_normal(seeds, steps, out):
    for i in range(out.size):
        out[i] = normal_nb(seeds[i], steps[i])
