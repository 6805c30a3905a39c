"""Chordal Loewner flow and curve tracing for sampled driving functions.

The forward flow holds the driving at its left endpoint on each grid
interval, where ``dg/dt = 2/(g - W)`` has the exact solution
``g -> W + sqrt((g - W)**2 + 4 dt)``. Tracing composes inverse single-slit
maps ("zipper"); by default each interval uses ``W_{i-1} + c sqrt(t - t_{i-1})``,
which grows one straight slit from the previous tip, so the traced hull is a
genuine curve.
"""
from dataclasses import dataclass
import csv
import math

import numpy as np

from ._accel import njit, resolve_backend


@dataclass(frozen=True)
class DrivingPath:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t[0] != 0.0:
            raise ValueError("times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("driving values must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_samples(cls, times, values):
        """Path from recorded samples, keeping the last value of each run of equal times.

        Long runs accumulate ``t`` so large that ``t + dt`` rounds to ``t``;
        those increments are merged into the next representable time.
        """
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        last = np.concatenate([t[1:] > t[:-1], [True]])
        last[0] = True
        return cls(t[last], v[last])

    @classmethod
    def constant(cls, value, t_end, steps):
        return cls(np.linspace(0.0, t_end, steps + 1), np.full(steps + 1, float(value)))

    def window(self, i0, i1=None):
        """Sub-path on grid indices ``i0..i1`` with time shifted to start at 0."""
        sl = slice(i0, None if i1 is None else i1 + 1)
        return DrivingPath(self.times[sl] - self.times[i0], self.values[sl])


@dataclass(frozen=True)
class CurveTrace:
    points: np.ndarray
    times: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "x", "y"])
            for t, z in zip(self.times, self.points):
                wr.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag))])


class TraceError(ArithmeticError):
    pass


# --------------------------------------------------------------- forward

def _upper_root(q, ref):
    """Square root of ``q`` in the closed upper half plane; real roots take the sign of ``ref``."""
    r = np.sqrt(q.astype(complex))
    r = np.where(r.imag < 0, -r, r)
    real = r.imag == 0
    return np.where(real & (np.real(ref) < 0), -r, r)


def flow_points(path, z, tol=1e-8):
    """Vectorised :func:`flow_point`: returns arrays ``(values, taus)``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex)).copy()
    if np.any(z.imag < 0):
        raise ValueError("points must lie in the closed upper half plane")
    t, W = path.times, path.values
    scale = tol * max(1.0, math.sqrt(t[-1]), float(np.max(np.abs(z - W[0]))))
    tau = np.full(z.shape, np.inf)
    tau[z == W[0]] = 0.0
    alive = tau == np.inf
    g = z
    for i in range(1, t.size):
        if not alive.any():
            break
        dt = t[i] - t[i - 1]
        wi = W[i - 1]
        h = g[alive] - wi
        q0 = h * h
        # |g - W| along the step is sqrt|q0 + 4 s|; find its minimum over s in [0, dt]
        s_star = np.clip(-q0.real / 4.0, 0.0, dt)
        gap = np.sqrt(np.abs(q0 + 4.0 * s_star))
        hit = gap < scale
        idx = np.flatnonzero(alive)
        new = wi + _upper_root(q0 + 4.0 * dt, h)
        # a real point left behind by a jump of W across it has been swallowed
        crossed = (g[idx].imag == 0) & (np.sign((new - W[i]).real) != np.sign(h.real)) & ~hit
        if hit.any():
            tau[idx[hit]] = t[i - 1] + s_star[hit]
            g[idx[hit]] = wi + np.sqrt(q0[hit] + 4.0 * s_star[hit] + 0j)
        if crossed.any():
            tau[idx[crossed]] = t[i]
            g[idx[crossed]] = W[i]
        keep = ~(hit | crossed)
        g[idx[keep]] = new[keep]
        alive[idx[~keep]] = False
    return g, tau


def flow_point(path, z, tol=1e-8):
    """``g_t(z)`` at the end of the path and the swallowing time (``inf`` if not reached).

    Blow-up is declared when ``|g - W|`` falls below ``tol`` times the problem
    scale; after blow-up the returned value is ``g`` at that moment.
    """
    g, tau = flow_points(path, [z], tol)
    return complex(g[0]), float(tau[0])


# ---------------------------------------------------------------- tracing

def _inverse_step(z, w, dt):
    return w + _upper_root((z - w) ** 2 - 4.0 * dt, z - w)


def tilt_parameters(dw, dt):
    """Angle fraction and prevertices of the straight slit grown by ``W0 + c sqrt(t)``.

    With ``c = dw / sqrt(dt)`` the hull after ``dt`` is a segment at angle
    ``alpha pi`` and ``F(z) = (z - xl)**(1 - alpha) (z - xr)**alpha`` maps the
    half plane onto its complement with ``F(z) = z - 2 dt / z + ...``.
    """
    dw = np.asarray(dw, dtype=float)
    c = dw / np.sqrt(dt)
    beta = c / np.sqrt(16.0 + c * c)
    alpha = 0.5 * (1.0 - beta)
    length = 2.0 * np.sqrt(dt / (alpha * (1.0 - alpha)))
    return alpha, -alpha * length, (1.0 - alpha) * length


def _tilted_map(z, alpha, xl, xr):
    u = z - xl
    v = z - xr
    u = u.real + 1j * np.maximum(u.imag, 0.0)
    v = v.real + 1j * np.maximum(v.imag, 0.0)
    return np.exp((1.0 - alpha) * np.log(u) + alpha * np.log(v))


def _seeds(times, values, substeps, tilted):
    """Points of each step's slit at equal fractions ``r = 1/s, ..., 1`` of its length.

    The slit of step ``j`` lives in the plane of ``g_{t_{j-1}}`` and starts at
    ``W_{j-1}``; its length grows like ``sqrt(u)``, so the point at ``r`` is
    reached at sub-time ``r**2 dt_j``.
    """
    dts = np.diff(times)
    r = np.arange(1, substeps + 1) / substeps
    u = r * r
    if tilted:
        alpha, xl, xr = tilt_parameters(np.diff(values), dts)
        tip = _tilted_map(np.diff(values).astype(complex), alpha, xl, xr)
    else:
        tip = 2j * np.sqrt(dts)
    z = values[:-1, None] + tip[:, None] * r[None, :]
    tz = times[:-1, None] + dts[:, None] * u[None, :]
    return z.ravel(), tz.ravel()


def _trace_numpy(times, values, z, substeps, tilted):
    if tilted:
        alpha, xl, xr = tilt_parameters(np.diff(values), np.diff(times))
    for i in range(times.size - 2, 0, -1):
        sl = slice(i * substeps, None)
        w = values[i - 1]
        if tilted:
            z[sl] = w + _tilted_map(z[sl] - w, alpha[i - 1], xl[i - 1], xr[i - 1])
        else:
            z[sl] = _inverse_step(z[sl], w, times[i] - times[i - 1])
    return z


@njit
def _trace_numba(times, values, z, substeps, tilted, alpha, xl, xr):
    for i in range(times.size - 2, 0, -1):
        w = values[i - 1]
        dt = times[i] - times[i - 1]
        a = alpha[i - 1]
        for j in range(i * substeps, z.size):
            h = z[j] - w
            if tilted:
                u = h - xl[i - 1]
                v = h - xr[i - 1]
                if u.imag < 0:
                    u = complex(u.real, 0.0)
                if v.imag < 0:
                    v = complex(v.real, 0.0)
                z[j] = w + np.exp((1.0 - a) * np.log(u) + a * np.log(v))
            else:
                r = np.sqrt(h * h - 4.0 * dt)
                if r.imag < 0 or (r.imag == 0 and r.real * h.real < 0):
                    r = -r
                z[j] = w + r


def trace_curve(path, backend=None, substeps=4, interpolation="sqrt"):
    """Curve points at every grid time by composing inverse single-slit maps.

    ``interpolation="constant"`` holds the driving at ``W_{t_{i-1}}`` on each
    step (vertical slits, the model used by :func:`flow_point`); the tip at
    ``t_j`` is then ``f_1 o ... o f_j (W_{t_{j-1}})``. Jumps of the driving
    make each new slit start away from the previous tip, so the hull is a
    comb rather than a curve at the resolution of the grid.
    ``interpolation="sqrt"`` (default) uses ``W_{t_{i-1}} + c sqrt(t - t_{i-1})``
    which is continuous, hits every grid value and grows one straight slit
    per step, giving a genuine curve. ``substeps`` exact curve points are
    placed at equal fractions of each slit's length.
    """
    t, v = path.times, path.values
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if interpolation not in ("sqrt", "constant"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if t.size < 2:
        return CurveTrace(np.array([complex(v[0])]), t.copy())
    tilted = interpolation == "sqrt"
    z, tz = _seeds(t, v, substeps, tilted)
    if resolve_backend(backend) == "numba":
        alpha, xl, xr = tilt_parameters(np.diff(v), np.diff(t))
        _trace_numba(t, v, z, substeps, tilted, alpha, xl, xr)
    else:
        with np.errstate(all="ignore"):
            z = _trace_numpy(t, v, z, substeps, tilted)
    bad = np.flatnonzero(~np.isfinite(z))
    if bad.size:
        raise TraceError(f"non-finite tip at step {bad[0] // substeps + 1}")
    pts = np.concatenate([[complex(v[0], 0.0)], z])
    pts.imag = np.maximum(pts.imag, 0.0)
    return CurveTrace(pts, np.concatenate([[0.0], tz]))


# ------------------------------------------------------------- simplicity

def _seg_dist(p0, p1, q0, q1):
    """Distances between segment pairs ``[p0, p1]`` and ``[q0, q1]`` (complex arrays)."""
    def cross(a, b):
        return a.real * b.imag - a.imag * b.real

    def pt_seg(x, a, b):
        ab = b - a
        den = np.abs(ab) ** 2
        with np.errstate(all="ignore"):
            s = np.where(den > 0, ((x - a) * np.conj(ab)).real / den, 0.0)
        return np.abs(x - (a + np.clip(s, 0.0, 1.0) * ab))

    r, s = p1 - p0, q1 - q0
    d1, d2 = cross(r, q0 - p0), cross(r, q1 - p0)
    d3, d4 = cross(s, p0 - q0), cross(s, p1 - q0)
    inter = (d1 * d2 < 0) & (d3 * d4 < 0)
    d = np.minimum(np.minimum(pt_seg(p0, q0, q1), pt_seg(p1, q0, q1)),
                   np.minimum(pt_seg(q0, p0, p1), pt_seg(q1, p0, p1)))
    return np.where(inter, 0.0, d)


_CHUNK = 1 << 16


def simplicity_check(trace, tol=0.0):
    """True iff no two non-adjacent polyline segments come within ``tol``.

    Segments are bucketed on a grid with cell size of the median segment
    length; segments longer than eight cells are compared against all others.
    A diagnostic, not a proof.
    """
    p = np.asarray(trace.points, dtype=complex)
    if p.size < 3:
        raise ValueError("need at least 3 points")
    a, b = p[:-1], p[1:]
    n = a.size
    length = np.abs(b - a)
    cell = max(tol, float(np.median(length)), 1e-300)
    lo_x = np.floor((np.minimum(a.real, b.real) - tol) / cell).astype(np.int64)
    hi_x = np.floor((np.maximum(a.real, b.real) + tol) / cell).astype(np.int64)
    lo_y = np.floor((np.minimum(a.imag, b.imag) - tol) / cell).astype(np.int64)
    hi_y = np.floor((np.maximum(a.imag, b.imag) + tol) / cell).astype(np.int64)
    long_mask = (hi_x - lo_x > 8) | (hi_y - lo_y > 8)
    buckets = {}
    for i in np.flatnonzero(~long_mask):
        for cx in range(lo_x[i], hi_x[i] + 1):
            for cy in range(lo_y[i], hi_y[i] + 1):
                buckets.setdefault((cx, cy), []).append(i)

    def clash(pi, pj):
        keep = np.abs(pi - pj) > 1
        pi, pj = pi[keep], pj[keep]
        for s in range(0, pi.size, _CHUNK):
            sl = slice(s, s + _CHUNK)
            if np.any(_seg_dist(a[pi[sl]], b[pi[sl]], a[pj[sl]], b[pj[sl]]) <= tol):
                return True
        return False

    for members in buckets.values():
        if len(members) < 2:
            continue
        m = np.array(members)
        for r in range(m.size - 1):
            if clash(np.full(m.size - r - 1, m[r]), m[r + 1:]):
                return False
    for i in np.flatnonzero(long_mask):
        if clash(np.full(n, i), np.arange(n)):
            return False
    return True
