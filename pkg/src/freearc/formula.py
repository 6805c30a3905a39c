"""Closed-form quantities for the level line with one free boundary arc.

Everything here is a pure function of a :class:`BoundaryConfig`: the force
term of the driving SDE, the probability that the level line started at
``b_k`` ends on the free arc ``(-inf, a)``, its limit as the free arc is
pushed to ``-inf``, the mixed Dirichlet/Neumann Green function and the
bounded harmonic function carrying the boundary data.
"""
from dataclasses import dataclass, field
import math

import numpy as np

LAMBDA = math.sqrt(math.pi / 8.0)


class DomainError(ValueError):
    """An argument lies outside the domain where a formula is defined."""


@dataclass(frozen=True)
class ParitySplit:
    same: tuple
    other: tuple


@dataclass(frozen=True)
class BoundaryConfig:
    """Marked points ``a < b_1 < ... < b_n`` and the start index ``k`` (1-based).

    ``first_sign`` is the sign of the boundary value on ``(a, b_1)``; the
    value alternates on the following arcs.
    """
    a: float
    b: tuple
    k: int = 1
    lam: float = LAMBDA
    first_sign: int = 1
    _split: ParitySplit = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = tuple(float(x) for x in np.atleast_1d(self.b))
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", float(self.a))
        n = len(b)
        if n == 0:
            raise ValueError("need at least one Dirichlet point b_1")
        if not all(math.isfinite(x) for x in (self.a,) + b):
            raise ValueError("marked points must be finite")
        pts = (self.a,) + b
        if any(pts[i] >= pts[i + 1] for i in range(n)):
            raise ValueError(f"marked points must satisfy a < b_1 < ... < b_n, got a={self.a}, b={b}")
        if not (1 <= int(self.k) <= n):
            raise ValueError(f"start index k={self.k} out of range 1..{n}")
        object.__setattr__(self, "k", int(self.k))
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.first_sign not in (1, -1):
            raise ValueError("first_sign must be +1 or -1")
        object.__setattr__(self, "_split", parity_split(n, self.k))

    @property
    def n(self):
        return len(self.b)

    @property
    def split(self):
        return self._split

    @property
    def start(self):
        return self.b[self.k - 1]

    @property
    def points(self):
        """``[a, b_1, ..., b_n]`` as a float array (index 0 is ``a``)."""
        return np.array((self.a,) + self.b)

    @property
    def signs(self):
        """+1 for indices in I_k, -1 for J_k, 0 for ``a`` and ``k`` itself."""
        s = np.zeros(self.n + 1)
        for i in self._split.same:
            s[i] = 1.0
        for i in self._split.other:
            s[i] = -1.0
        s[self.k] = 0.0
        return s

    @property
    def min_gap(self):
        w = self.start
        return min(abs(w - p) for i, p in enumerate(self.points) if i != self.k)

    def arc_value(self, i):
        """Boundary value on ``(b_i, b_{i+1})`` with ``b_0 = a``, ``b_{n+1} = inf``."""
        return self.first_sign * self.lam * (-1) ** i

    def to_dict(self):
        return {"a": self.a, "b": list(self.b), "k": self.k, "lambda": self.lam,
                "first_sign": self.first_sign}

    @classmethod
    def from_dict(cls, d):
        return cls(a=d["a"], b=tuple(d["b"]), k=d.get("k", 1),
                   lam=d.get("lambda", LAMBDA), first_sign=d.get("first_sign", 1))


def parity_split(n, k):
    """Indices in ``1..n`` with the parity of ``k`` (I_k) and the rest (J_k)."""
    if not (1 <= k <= n):
        raise ValueError(f"index k={k} out of range 1..{n}")
    same = tuple(i for i in range(1, n + 1) if (i - k) % 2 == 0)
    other = tuple(i for i in range(1, n + 1) if (i - k) % 2)
    return ParitySplit(same, other)


def force_term(x, y, z):
    """F(x, y, z) = 2/(x - y) * sqrt((y - z)/(x - z)) for z < x, z < y, x != y."""
    if not (z < x and z < y) or x == y:
        raise DomainError(f"force_term needs z < x, z < y and x != y (got x={x}, y={y}, z={z})")
    return 2.0 / (x - y) * math.sqrt((y - z) / (x - z))


def _contracting_factor(bi, bk, a):
    """(1 - sqrt(r))/(1 + sqrt(r)) with r the ratio of the two distances to ``a``
    taken below one.

    Evaluated as ``|b_k - b_i| / (sqrt(b_i - a) + sqrt(b_k - a))**2`` which is
    algebraically identical and free of cancellation when ``r`` is close to 1.
    """
    si = math.sqrt(bi - a)
    sk = math.sqrt(bk - a)
    return abs(bk - bi) / (si + sk) ** 2


def probability_factors(config):
    """Per-index factors of the free-arc probability.

    Returns a list of ``(i, group, factor)`` with ``group`` either ``"same"``
    (I_k, factor > 1) or ``"other"`` (J_k, factor < 1).
    """
    a, b, k = config.a, config.b, config.k
    bk = b[k - 1]
    out = []
    for i in range(1, config.n + 1):
        if i == k:
            continue
        c = _contracting_factor(b[i - 1], bk, a)
        if i in config.split.same:
            out.append((i, "same", 1.0 / c))
        else:
            out.append((i, "other", c))
    return out


def hit_free_arc_probability(config):
    """Probability that the level line from ``b_k`` terminates on ``(-inf, a)``."""
    log_g = sum(math.log(f) for _, _, f in probability_factors(config))
    return math.exp(log_g)


def g_from_gaps(d, signs):
    """Free-arc probability from gaps ``d[j] = w - p_j`` (index 0 is ``a``).

    Used for running values along a trajectory; ``signs`` as in
    :attr:`BoundaryConfig.signs`.
    """
    d = np.asarray(d, dtype=float)
    d0 = d[..., 0]
    sk = np.sqrt(d0)
    log_g = np.zeros(np.shape(d0))
    for j in range(1, d.shape[-1]):
        if signs[j] == 0:
            continue
        sj = np.sqrt(d0 - d[..., j])
        log_g = log_g - signs[j] * (np.log(np.abs(d[..., j])) - 2.0 * np.log(sj + sk))
    return np.exp(log_g)


def _parity_balanced(n, k):
    return n % 2 == 1 and k % 2 == 1


def dirichlet_limit_probability(b, k, method="auto", A=1e8):
    """Limit of the free-arc probability as ``a -> -inf`` (all-Dirichlet boundary).

    ``method="closed"`` uses the product ``prod_J |b_j - b_k| / prod_{I \\ k} |b_i - b_k|``
    which is the limit whenever the two groups are balanced (``n`` and ``k`` odd);
    for ``k = 1`` it is ``(b_2-b_1)/(b_3-b_1) * ... * (b_{n-1}-b_1)/(b_n-b_1)``.
    Unbalanced configurations have limit 0. ``method="numeric"`` evaluates the
    finite-``a`` probability at ``a = b_1 - A``.
    """
    b = tuple(float(x) for x in b)
    if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
        raise ValueError(f"b must be strictly increasing, got {b}")
    n = len(b)
    if not (1 <= k <= n):
        raise ValueError(f"start index k={k} out of range 1..{n}")
    if method == "numeric":
        return hit_free_arc_probability(BoundaryConfig(a=b[0] - A, b=b, k=k))
    if method not in ("auto", "closed"):
        raise ValueError(f"unknown method {method!r}")
    if not _parity_balanced(n, k):
        if method == "closed":
            raise ValueError("closed form needs n and k odd; the limit is 0 otherwise")
        return 0.0
    split = parity_split(n, k)
    bk = b[k - 1]
    num = math.prod(abs(b[j - 1] - bk) for j in split.other)
    den = math.prod(abs(b[i - 1] - bk) for i in split.same if i != k)
    return num / den


# --------------------------------------------------------------------- Green

def sqrt_upper(zeta):
    """Square root taking values in the closed upper half plane."""
    r = np.sqrt(np.asarray(zeta, dtype=complex))
    return np.where(r.imag < 0, -r, r)


def _check_interior(z, name):
    if np.any(np.asarray(z).imag <= 0):
        raise DomainError(f"{name} must lie in the open upper half plane")


def greens_dirichlet(z, w):
    """Dirichlet Green function of the half plane, (1/2pi) log|z - conj w|/|z - w|."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    return np.log(np.abs(z - np.conj(w)) / np.abs(z - w)) / (2 * np.pi)


def greens_mix(z, w, a):
    """Green function of the half plane, Dirichlet on ``(a, inf)`` and free on ``(-inf, a)``.

    Vectorised over ``z`` and ``w``. The ratio is rewritten with
    ``u - v = (z - w)/(u + v)`` and ``u - conj v = (z - conj w)/(u + conj v)``
    so it stays accurate when ``a`` is far away.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    _check_interior(z, "z")
    _check_interior(w, "w")
    if np.any(z == w):
        raise DomainError("greens_mix is singular at z = w")
    u = sqrt_upper(z - a)
    v = sqrt_upper(w - a)
    vb = np.conj(v)
    ratio = (u + v) ** 2 * (z - np.conj(w)) / ((z - w) * (u + vb) ** 2)
    return np.log(np.abs(ratio)) / (2 * np.pi)


def greens_mix_images(z, w, a):
    """Same Green function as an image sum in the unfolded coordinate ``sqrt(. - a)``."""
    u = sqrt_upper(np.asarray(z, dtype=complex) - a)
    v = sqrt_upper(np.asarray(w, dtype=complex) - a)
    return greens_dirichlet(u, v) + greens_dirichlet(u, -np.conj(v))


# ----------------------------------------------------------------- harmonic

def _unfolded_breaks(config):
    """Finite intervals of the real ``u``-axis and their values, plus the tail value.

    In ``u = sqrt(z - a)`` the Dirichlet axis becomes ``u > 0`` and the data is
    reflected evenly to ``u < 0``.
    """
    r = [math.sqrt(bi - config.a) for bi in config.b]
    tail = config.arc_value(config.n)
    intervals = [(-r[0], r[0], config.arc_value(0))]
    for i in range(1, config.n):
        v = config.arc_value(i)
        intervals.append((r[i - 1], r[i], v))
        intervals.append((-r[i], -r[i - 1], v))
    return intervals, tail


def harmonic_phi_unfolded(u, config):
    """Boundary-value harmonic function in the unfolded upper half plane."""
    u = np.asarray(u, dtype=complex)
    if np.any(u.imag <= 0):
        raise DomainError("unfolded point must lie in the open upper half plane")
    intervals, tail = _unfolded_breaks(config)
    out = np.full(u.shape, tail, dtype=float)
    for lo, hi, v in intervals:
        omega = (np.angle(u - hi) - np.angle(u - lo)) / np.pi
        out = out + (v - tail) * omega
    return out


def harmonic_phi(z, config):
    """Bounded harmonic function with value ``arc_value(i)`` on ``(b_i, b_{i+1})``
    and zero normal derivative on ``(-inf, a)``."""
    z = np.asarray(z, dtype=complex)
    _check_interior(z, "z")
    return harmonic_phi_unfolded(sqrt_upper(z - config.a), config)
