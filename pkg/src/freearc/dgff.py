"""Discrete Gaussian free field oracle with mixed boundary conditions.

The upper half plane is mapped conformally onto a rectangle carrying a
uniform square grid. The left side of the rectangle is the image of
``(-inf, a)`` (reflecting, or pinned for the all-Dirichlet limit); the
other three sides carry the data ``+-lambda`` of the arcs ``(a, b_1), ...,
(b_n, inf)``. The corner at the top of the left side is the image of
infinity, so the whole boundary is represented without truncation. Since the
Green function is conformally invariant, lattice covariances are compared
with the half-plane Green function evaluated at the mapped vertices.

With precision ``Q = B^T B`` (``B`` the edge incidence matrix restricted to
unpinned vertices) the field ``Q^{-1} B^T z`` with ``z`` white noise on edges
has covariance ``Q^{-1}``, so one sparse LU factorization serves both the
harmonic mean and the fluctuation.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np
from scipy import optimize, sparse, special
from scipy.sparse.linalg import splu

from ._accel import njit
from .formula import BoundaryConfig, greens_dirichlet, greens_mix, hit_free_arc_probability
from .montecarlo import CheckReport, McSummary
from . import kernels as K

MIN_CELLS = 16
FREE = -1


def sn_complex(zeta, m):
    """Jacobi ``sn(zeta | m)`` for complex ``zeta`` via the imaginary-argument addition formula."""
    zeta = np.asarray(zeta, dtype=complex)
    s, c, d, _ = special.ellipj(zeta.real, m)
    s1, c1, d1, _ = special.ellipj(zeta.imag, 1.0 - m)
    den = c1 * c1 + m * s * s * s1 * s1
    with np.errstate(divide="ignore", invalid="ignore"):
        return (s * d1 + 1j * c * d * s1 * c1) / den


def aspect_parameter(width, height):
    """Parameter ``m`` with ``2 K(m) / K(1 - m) = width / height``."""
    target = math.log(width / height)

    def f(t):
        m = 1.0 / (1.0 + math.exp(-t))
        return math.log(2 * special.ellipk(m) / special.ellipkm1(m)) - target

    if not f(-30.0) < 0 < f(30.0):
        raise ValueError("aspect ratio out of range")
    t = optimize.brentq(f, -30.0, 30.0, xtol=1e-14)
    return 1.0 / (1.0 + math.exp(-t))


@dataclass
class LatticeSpec:
    """Grid of ``width x height`` cells on the rectangle ``[-K, K] x [0, K']``.

    Vertex ``(i, j)`` maps to the half plane by ``a + s (x + 1)/(x + 1/k)``
    with ``x = sn(-K + 2K i/width + i K' j/height)``. ``scale`` is ``s``; by
    default it maximizes the smallest number of boundary vertices on any
    Dirichlet arc. ``free=False`` pins the left side to the value of
    ``(a, b_1)``, which is the all-Dirichlet half plane (the limit a -> -inf).
    """
    config: BoundaryConfig
    width: int = 128
    height: int = 128
    free: bool = True
    scale: float = None
    min_cells: int = MIN_CELLS
    m: float = field(init=False)
    arc_counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError("grid needs at least 4 cells per side")
        self.m = aspect_parameter(self.width, self.height)
        if self.scale is None:
            self.scale = self._auto_scale()
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        self.arc_counts = self._arc_counts(self.scale)
        short = int(np.argmin(self.arc_counts))
        if self.arc_counts[short] < self.min_cells:
            raise ValueError(f"grid too small: arc {short} has {self.arc_counts[short]} boundary cells "
                             f"(< {self.min_cells}); increase width/height")

    @property
    def kk(self):
        return float(special.ellipk(self.m))

    @property
    def kk_prime(self):
        return float(special.ellipk(1.0 - self.m))

    @property
    def mesh(self):
        return 2.0 * self.kk / self.width

    def zeta(self, i, j):
        """Rectangle coordinate of (possibly fractional) grid position ``(i, j)``."""
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return -self.kk + 2.0 * self.kk * i / self.width + 1j * self.kk_prime * j / self.height

    def _mobius(self, x, s):
        k = math.sqrt(self.m)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.config.a + s * (x + 1.0) / (x + 1.0 / k)

    def embed(self, i, j):
        """Half-plane image of grid position ``(i, j)``; the top-left corner maps to ``inf``."""
        x = sn_complex(self.zeta(i, j), self.m)
        z = self._mobius(x, self.scale)
        top_left = (np.asarray(i) == 0) & (np.asarray(j) == self.height)
        return np.where(top_left, complex(np.inf, 0.0), z)

    # boundary bookkeeping: perimeter counterclockwise from the bottom-left corner
    def perimeter(self):
        nx, ny = self.width, self.height
        i = np.concatenate([np.arange(nx), np.full(ny, nx), np.arange(nx, 0, -1), np.zeros(ny, int)])
        j = np.concatenate([np.zeros(nx, int), np.arange(ny), np.full(nx, ny), np.arange(ny, 0, -1)])
        return i, j

    def _perimeter_x(self):
        i, j = self.perimeter()
        return i, j, sn_complex(self.zeta(i, j), self.m).real

    def _arcs_from_z(self, z, i, j):
        """Arc index per boundary vertex: ``r`` for ``(b_r, b_{r+1})``, FREE on the left side."""
        b = np.asarray(self.config.b)
        arc = np.searchsorted(b, np.real(z), side="right")
        left = (i == 0) & (j > 0)
        arc = np.where(left, FREE, arc)
        if self.free:
            arc = np.where((i == 0) & (j == self.height), self.config.n, arc)
        return arc

    def _arc_counts(self, s):
        i, j, x = self._perimeter_x()
        z = self._mobius(x, s)
        z = np.where((i == 0) & (j == self.height), np.inf, z)
        arc = self._arcs_from_z(z, i, j)
        return np.bincount(arc[arc >= 0], minlength=self.config.n + 1)

    def _auto_scale(self):
        spread = np.asarray(self.config.b) - self.config.a
        cands = np.exp(np.linspace(math.log(spread[0]) - 3, math.log(spread[-1]) + 3, 241))
        best = max(cands, key=lambda s: (self._arc_counts(s).min(), -abs(math.log(s))))
        return float(best)

    def boundary(self):
        """Perimeter vertex coordinates, arc indices and pinned values (nan where free)."""
        i, j = self.perimeter()
        z = self.embed(i, j)
        arc = self._arcs_from_z(z, i, j)
        vals = np.array([self.config.arc_value(r) for r in np.maximum(arc, 0)])
        if self.free:
            vals = np.where(arc == FREE, np.nan, vals)
        else:
            vals = np.where(arc == FREE, self.config.arc_value(0), vals)
        return i, j, arc, vals

    def switch_edges(self):
        """Perimeter edge index (between vertex ``p`` and ``p + 1``) of each ``b_r``, ``r = 1..n``."""
        _, _, arc, _ = self.boundary()
        nxt = np.roll(arc, -1)
        out = {}
        for r in range(1, self.config.n + 1):
            hit = np.flatnonzero((arc == r - 1) & (nxt == r))
            if hit.size != 1:
                raise ValueError(f"marked point b_{r} is not resolved by the grid")
            out[r] = int(hit[0])
        return out

    def to_dict(self):
        return {"config": self.config.to_dict(), "width": self.width, "height": self.height,
                "free": self.free, "scale": self.scale, "min_cells": self.min_cells}


@dataclass
class LatticeOperator:
    spec: LatticeSpec
    pinned: np.ndarray
    values: np.ndarray
    index: np.ndarray
    precision: sparse.csc_matrix
    incidence: sparse.csr_matrix
    lu: object
    mean: np.ndarray

    @property
    def n_unknown(self):
        return self.precision.shape[0]


@dataclass
class FieldSample:
    values: np.ndarray
    seed: int = None

    def to_csv(self, path, spec):
        ny1, nx1 = self.values.shape
        jj, ii = np.mgrid[0:ny1, 0:nx1]
        z = spec.embed(ii.ravel(), jj.ravel())
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["i", "j", "x", "y", "value"])
            for i, j, zz, v in zip(ii.ravel(), jj.ravel(), z, self.values.ravel()):
                wr.writerow([i, j, repr(float(zz.real)), repr(float(zz.imag)), repr(float(v))])


def build_operator(spec):
    """Factor the precision of the unpinned vertices; pinned vertices carry boundary data."""
    nx, ny = spec.width, spec.height
    pinned = np.zeros((ny + 1, nx + 1), bool)
    values = np.zeros((ny + 1, nx + 1))
    bi, bj, _, bvals = spec.boundary()
    fixed = ~np.isnan(bvals)
    pinned[bj[fixed], bi[fixed]] = True
    values[bj[fixed], bi[fixed]] = bvals[fixed]
    if not pinned.any():
        raise ValueError("singular operator: no pinned vertex")
    index = np.full(pinned.shape, -1, dtype=np.int64)
    index[~pinned] = np.arange(int((~pinned).sum()))
    n = int((~pinned).sum())
    # edges of the grid graph: horizontal then vertical
    h0 = (slice(None), slice(0, nx))
    h1 = (slice(None), slice(1, nx + 1))
    v0 = (slice(0, ny), slice(None))
    v1 = (slice(1, ny + 1), slice(None))
    ua = np.concatenate([index[h0].ravel(), index[v0].ravel()])
    ub = np.concatenate([index[h1].ravel(), index[v1].ravel()])
    va = np.concatenate([values[h0].ravel(), values[v0].ravel()])
    vb = np.concatenate([values[h1].ravel(), values[v1].ravel()])
    live = (ua >= 0) | (ub >= 0)
    ua, ub, va, vb = ua[live], ub[live], va[live], vb[live]
    e = np.arange(ua.size)
    rows = np.concatenate([e[ua >= 0], e[ub >= 0]])
    cols = np.concatenate([ua[ua >= 0], ub[ub >= 0]])
    data = np.concatenate([np.ones(int((ua >= 0).sum())), -np.ones(int((ub >= 0).sum()))])
    B = sparse.csr_matrix((data, (rows, cols)), shape=(ua.size, n))
    Q = (B.T @ B).tocsc()
    # pinned neighbours enter the harmonic equation as sources
    rhs = np.zeros(n)
    np.add.at(rhs, ua[(ua >= 0) & (ub < 0)], vb[(ua >= 0) & (ub < 0)])
    np.add.at(rhs, ub[(ub >= 0) & (ua < 0)], va[(ub >= 0) & (ua < 0)])
    lu = splu(Q)
    mean = values.copy()
    mean[~pinned] = lu.solve(rhs)
    return LatticeOperator(spec, pinned, values, index, Q, B, lu, mean)


def sample_fluctuations(op, seeds, batch=256):
    """Zero-mean fluctuations at the unpinned vertices, one row per seed."""
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.int64))
    out = np.empty((seeds.size, op.n_unknown))
    BT = op.incidence.T.tocsr()
    for s in range(0, seeds.size, batch):
        chunk = seeds[s:s + batch]
        z = np.column_stack([np.random.default_rng(int(sd)).standard_normal(op.incidence.shape[0])
                             for sd in chunk])
        out[s:s + chunk.size] = op.lu.solve(BT @ z).T
    return out


def sample_field(op, seed):
    """Mean plus fluctuation; pinned vertices carry exactly their boundary values."""
    vals = op.mean.copy()
    vals[~op.pinned] += sample_fluctuations(op, [seed])[0]
    return FieldSample(vals, seed)


def _fields(op, fluct):
    for row in fluct:
        vals = op.mean.copy()
        vals[~op.pinned] += row
        yield vals


# ------------------------------------------------------------- level lines

@njit
def _march(f, ci, cj, e_in, max_cells, pts):
    """Follow the zero set of the bilinear interpolant from edge ``e_in`` of cell ``(ci, cj)``.

    Edges are 0 bottom, 1 right, 2 top, 3 left. At saddles the branch of the
    bilinear zero set is chosen by the sign of the saddle value; exact ties
    turn left. Returns the number of recorded crossings and the cell and edge of
    the boundary exit (edge -1 if ``max_cells`` was exhausted).
    """
    ny = f.shape[0] - 1
    nx = f.shape[1] - 1
    di = np.array([0, 1, 1, 0])
    dj = np.array([0, 0, 1, 1])
    vals = np.empty(4)
    n = 0
    i, j, e = ci, cj, e_in
    for _ in range(max_cells):
        for c in range(4):
            vals[c] = f[j + dj[c], i + di[c]]
        if n == 0:
            c0, c1 = e, (e + 1) % 4
            t = vals[c0] / (vals[c0] - vals[c1])
            pts[n, 0] = i + di[c0] + t * (di[c1] - di[c0])
            pts[n, 1] = j + dj[c0] + t * (dj[c1] - dj[c0])
            n += 1
        count = 0
        last = -1
        for q in range(1, 4):
            ed = (e + q) % 4
            if (vals[ed] >= 0) != (vals[(ed + 1) % 4] >= 0):
                count += 1
                last = ed
        if count == 1:
            ex = last
        else:
            # saddle: the interpolant's zero set separates the corners whose sign
            # differs from the saddle value; ties turn left
            den = vals[0] - vals[1] + vals[2] - vals[3]
            sv = (vals[0] * vals[2] - vals[1] * vals[3]) / den
            if sv == 0.0:
                ex = (e + 3) % 4
            else:
                # corner of the entry edge that is cut off from the saddle
                c0 = e if (vals[e] >= 0) != (sv > 0) else (e + 1) % 4
                ex = (e + 3) % 4 if c0 == e else (e + 1) % 4
        c0, c1 = ex, (ex + 1) % 4
        t = vals[c0] / (vals[c0] - vals[c1])
        pts[n, 0] = i + di[c0] + t * (di[c1] - di[c0])
        pts[n, 1] = j + dj[c0] + t * (dj[c1] - dj[c0])
        n += 1
        ni, nj = i, j
        if ex == 0:
            nj -= 1
        elif ex == 1:
            ni += 1
        elif ex == 2:
            nj += 1
        else:
            ni -= 1
        if ni < 0 or nj < 0 or ni >= nx or nj >= ny:
            return n, i, j, ex
        i, j, e = ni, nj, (ex + 2) % 4
    return n, i, j, -1


@dataclass
class LevelLine:
    """Terminal classification of a lattice level line and its polyline in grid coordinates."""
    label: str
    index: int
    points: np.ndarray

    def to_csv(self, path, spec=None):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            head = ["gi", "gj"] + (["x", "y"] if spec is not None else [])
            wr.writerow(head)
            z = spec.embed(self.points[:, 0], self.points[:, 1]) if spec is not None else None
            for r, (gi, gj) in enumerate(self.points):
                row = [repr(float(gi)), repr(float(gj))]
                if z is not None:
                    row += [repr(float(z[r].real)), repr(float(z[r].imag))]
                wr.writerow(row)


def _edge_cell(i0, j0, i1, j1, nx, ny):
    """Boundary cell and its edge number for the boundary edge between two perimeter vertices."""
    if j0 == 0 and j1 == 0:
        return min(i0, i1), 0, 0
    if i0 == nx and i1 == nx:
        return nx - 1, min(j0, j1), 1
    if j0 == ny and j1 == ny:
        return min(i0, i1), ny - 1, 2
    return 0, min(j0, j1), 3


class _Boundary:
    def __init__(self, spec):
        self.i, self.j, self.arc, _ = spec.boundary()
        self.P = self.i.size
        self.where = {(int(a), int(b)): p for p, (a, b) in enumerate(zip(self.i, self.j))}
        self.switch = spec.switch_edges()
        self.by_edge = {v: r for r, v in self.switch.items()}

    def edge_index(self, cell_i, cell_j, e):
        di = (0, 1, 1, 0)
        dj = (0, 0, 1, 1)
        p0 = self.where[(cell_i + di[e], cell_j + dj[e])]
        p1 = self.where[(cell_i + di[(e + 1) % 4], cell_j + dj[(e + 1) % 4])]
        return p0 if (p1 - p0) % self.P == 1 else p1

    def vertices(self, p):
        q = (p + 1) % self.P
        return int(self.i[p]), int(self.j[p]), int(self.i[q]), int(self.j[q])


def _trace(values, spec, bd, start):
    nx, ny = spec.width, spec.height
    p = bd.switch[start]
    ci, cj, e = _edge_cell(*bd.vertices(p), nx, ny)
    cap = 4 * nx * ny + 16
    pts = np.empty((cap + 2, 2))
    n, li, lj, ex = _march(values, ci, cj, e, cap, pts)
    poly = pts[:n].copy()
    if ex < 0:
        return LevelLine("Censored", -1, poly)
    q = bd.edge_index(li, lj, ex)
    if bd.arc[q] == FREE or bd.arc[(q + 1) % bd.P] == FREE:
        return LevelLine("FreeArc", 0, poly)
    if q in bd.by_edge:
        return LevelLine("SwallowedPoint", bd.by_edge[q], poly)
    return LevelLine("Censored", -1, poly)


def trace_level_line(sample, spec, start=None):
    """Zero level line of the interpolated field from the boundary switch at ``b_start``."""
    vals = np.ascontiguousarray(sample.values if isinstance(sample, FieldSample) else sample, dtype=float)
    return _trace(vals, spec, _Boundary(spec), spec.config.k if start is None else start)


_KIND = {"FreeArc": K.KIND_FREE, "SwallowedPoint": K.KIND_POINT, "Censored": K.KIND_CENSORED}


def level_line_frequencies(spec, n_samples=1000, seed_base=0, batch=128, op=None):
    """Terminal labels of level lines over ``n_samples`` fields (seed ``seed_base + i``)."""
    op = op or build_operator(spec)
    bd = _Boundary(spec)
    kinds = np.empty(n_samples, np.int64)
    idxs = np.zeros(n_samples, np.int64)
    for s in range(0, n_samples, batch):
        seeds = seed_base + np.arange(s, min(s + batch, n_samples))
        for r, vals in enumerate(_fields(op, sample_fluctuations(op, seeds, batch))):
            line = _trace(vals, spec, bd, spec.config.k)
            kinds[s + r] = _KIND[line.label]
            idxs[s + r] = line.index
    reasons = np.where(kinds == K.KIND_CENSORED, K.REASON_MAXSTEPS, K.REASON_NONE)
    return McSummary.from_arrays(kinds, idxs, reasons, seed_base,
                                 {"lattice": spec.to_dict()}, None)


def frequency_check(spec, n_samples=1000, seed_base=0, tol=0.05, target=None):
    """FreeArc frequency against the formula value within an absolute tolerance."""
    summ = level_line_frequencies(spec, n_samples, seed_base)
    if target is None:
        if spec.free:
            target = hit_free_arc_probability(spec.config)
        else:
            from .formula import dirichlet_limit_probability
            target = dirichlet_limit_probability(spec.config.b, spec.config.k)
    err = abs(summ.p_free_hat - target)
    return CheckReport("dgff_frequency", err, tol, bool(err < tol),
                       f"FreeArc frequency {summ.p_free_hat:.4f} (n={summ.n_completed}, "
                       f"censored={summ.n_censored}) target {target:.4f}",
                       data={"summary": summ.to_dict(), "target": target})


# -------------------------------------------------------------- covariance

def _green(spec, z, w):
    if spec.free:
        return greens_mix(z, w, spec.config.a)
    return greens_dirichlet(z, w)


def default_blocks(spec):
    """Two square vertex blocks in the interior, left and right of centre."""
    nx, ny = spec.width, spec.height
    h = max(1, nx // 32)

    def block(ci, cj):
        ii, jj = np.meshgrid(np.arange(ci - h, ci + h + 1), np.arange(cj - h, cj + h + 1))
        return np.column_stack([ii.ravel(), jj.ravel()])

    return block(int(0.3 * nx), ny // 2), block(int(0.6 * nx), int(0.4 * ny))


def covariance_check(spec, n_samples=4000, seed_base=0, blocks=None, z=3.0, op=None):
    """Empirical covariance of two block averages against the continuum Green function.

    The oracle averages the half-plane Green function over the mapped block
    vertices. Also reports the exact lattice covariance ``w_A^T Q^{-1} w_B``.
    """
    op = op or build_operator(spec)
    A, B = blocks or default_blocks(spec)
    ia = op.index[A[:, 1], A[:, 0]]
    ib = op.index[B[:, 1], B[:, 0]]
    if np.any(ia < 0) or np.any(ib < 0):
        raise ValueError("blocks must consist of unpinned vertices")
    fl = sample_fluctuations(op, seed_base + np.arange(n_samples))
    xa = fl[:, ia].mean(axis=1)
    xb = fl[:, ib].mean(axis=1)
    prod = (xa - xa.mean()) * (xb - xb.mean())
    emp = float(prod.sum() / (n_samples - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n_samples))
    za = spec.embed(A[:, 0], A[:, 1])
    zb = spec.embed(B[:, 0], B[:, 1])
    oracle = float(np.mean(_green(spec, za[:, None], zb[None, :])))
    wa = np.zeros(op.n_unknown)
    wb = np.zeros(op.n_unknown)
    np.add.at(wa, ia, 1.0 / ia.size)
    np.add.at(wb, ib, 1.0 / ib.size)
    exact = float(wa @ op.lu.solve(wb))
    stat = abs(emp - oracle) / se
    return CheckReport("dgff_covariance", stat, z, bool(stat < z),
                       f"empirical={emp:.5f}+-{se:.5f} continuum={oracle:.5f} lattice exact={exact:.5f}",
                       data={"empirical": emp, "se": se, "oracle": oracle, "exact": exact})


def psd_check(spec, n_samples=2000, seed_base=0, op=None):
    """Exact covariance (dense inverse) is symmetric positive definite and the empirical one PSD."""
    op = op or build_operator(spec)
    if op.n_unknown > 400:
        raise ValueError("dense check limited to small grids")
    Q = op.precision.toarray()
    C = np.linalg.inv(Q)
    sym = float(np.max(np.abs(C - C.T)))
    eig_min = float(np.linalg.eigvalsh(0.5 * (C + C.T)).min())
    fl = sample_fluctuations(op, seed_base + np.arange(n_samples))
    emp_min = float(np.linalg.eigvalsh(np.cov(fl, rowvar=False)).min())
    ok = sym < 1e-10 and eig_min > 0 and emp_min > -1e-10
    return CheckReport("dgff_psd", -min(eig_min, emp_min), 0.0, bool(ok),
                       f"asymmetry={sym:.2e} min eig exact={eig_min:.3e} empirical={emp_min:.3e}",
                       data={"asymmetry": sym, "min_eig": eig_min, "min_eig_empirical": emp_min})
