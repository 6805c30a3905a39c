import csv

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freearc import dgff as D
from freearc.formula import BoundaryConfig, harmonic_phi, hit_free_arc_probability

TWO = BoundaryConfig(0.0, (1.0, 4.0), 1)
FOUR = BoundaryConfig(0.0, (1.0, 2.0, 5.0, 7.0), 1)


@pytest.fixture(scope="module")
def small():
    spec = D.LatticeSpec(TWO, 16, 16, min_cells=2)
    return spec, D.build_operator(spec)


@pytest.fixture(scope="module")
def medium():
    spec = D.LatticeSpec(TWO, 64, 64)
    return spec, D.build_operator(spec)


# --------------------------------------------------------- conformal map

@settings(max_examples=50)
@given(st.floats(-2.0, 2.0), st.floats(-1.0, 1.0), st.floats(0.05, 0.95))
def test_sn_complex_matches_mpmath(x, y, m):
    ours = complex(D.sn_complex(x + 1j * y, m))
    ref = complex(mpmath.ellipfun("sn", mpmath.mpc(x, y), m=m))
    assert abs(ours - ref) <= 1e-10 * max(1.0, abs(ref))


@pytest.mark.parametrize("w,h", [(16, 16), (64, 32), (32, 64), (100, 37)])
def test_aspect_parameter(w, h):
    m = D.aspect_parameter(w, h)
    ratio = 2 * mpmath.ellipk(m) / mpmath.ellipk(1 - m)
    assert float(ratio) == pytest.approx(w / h, rel=1e-10)


def test_embed_maps_boundary_in_order(medium):
    spec, _ = medium
    i, j = spec.perimeter()
    z = spec.embed(i, j)
    # start just after the top-left corner (the image of infinity) and walk counterclockwise
    p0 = int(np.flatnonzero((i == 0) & (j == spec.height))[0])
    zz = np.roll(z, -p0 - 1)[:-1]
    assert np.all(np.abs(zz.imag) < 1e-9)
    assert np.all(np.diff(zz.real) > 0)
    left = (i == 0) & (j > 0) & (j < spec.height)
    assert np.all(z[left].real < spec.config.a)
    assert z[0] == pytest.approx(spec.config.a)


def test_embed_interior_in_upper_half_plane(medium):
    spec, _ = medium
    jj, ii = np.mgrid[1:spec.height, 1:spec.width]
    assert np.all(spec.embed(ii, jj).imag > 0)


def test_grid_too_small_refused():
    with pytest.raises(ValueError, match="grid too small"):
        D.LatticeSpec(FOUR, 16, 16)
    with pytest.raises(ValueError):
        D.LatticeSpec(TWO, 3, 16)


def test_switch_edges_separate_arcs(medium):
    spec, _ = medium
    _, _, arc, _ = spec.boundary()
    for r, p in spec.switch_edges().items():
        assert arc[p] == r - 1 and arc[(p + 1) % arc.size] == r


# -------------------------------------------------------------- operator

def laplacian_by_hand(pinned):
    ny1, nx1 = pinned.shape
    idx = {}
    for j in range(ny1):
        for i in range(nx1):
            if not pinned[j, i]:
                idx[(i, j)] = len(idx)
    Q = np.zeros((len(idx), len(idx)))
    for (i, j), r in idx.items():
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (i + di, j + dj)
            if 0 <= nb[0] < nx1 and 0 <= nb[1] < ny1:
                Q[r, r] += 1
                if nb in idx:
                    Q[r, idx[nb]] -= 1
    return Q


def test_precision_is_grid_laplacian(small):
    _, op = small
    assert np.array_equal(op.precision.toarray(), laplacian_by_hand(op.pinned))


def test_free_side_vertices_have_three_neighbours(small):
    spec, op = small
    Q = op.precision.toarray()
    for j in range(1, spec.height):
        assert Q[op.index[j, 0], op.index[j, 0]] == 3


def test_dirichlet_mode_pins_left_side():
    spec = D.LatticeSpec(TWO, 16, 16, free=False, min_cells=2)
    op = D.build_operator(spec)
    assert np.all(op.pinned[:, 0])
    assert np.allclose(op.values[1:, 0], TWO.arc_value(0))


def test_mean_is_discrete_harmonic(small):
    spec, op = small
    u = op.mean
    ny, nx = spec.height, spec.width
    lap = 4 * u[1:ny, 1:nx] - u[:ny - 1, 1:nx] - u[2:, 1:nx] - u[1:ny, :nx - 1] - u[1:ny, 2:]
    assert np.max(np.abs(lap)) < 1e-12
    free = 3 * u[1:ny, 0] - u[:ny - 1, 0] - u[2:, 0] - u[1:ny, 1]
    assert np.max(np.abs(free)) < 1e-12


def test_mean_approximates_continuum_harmonic_function(medium):
    spec, op = medium
    n = spec.width
    jj, ii = np.mgrid[1:n, 1:n]
    err = np.abs(op.mean[1:n, 1:n].ravel() - harmonic_phi(spec.embed(ii.ravel(), jj.ravel()), TWO))
    assert np.median(err) < 0.01


def test_sample_keeps_boundary_values(small):
    spec, op = small
    s = D.sample_field(op, 3)
    assert np.array_equal(s.values[op.pinned], op.values[op.pinned])
    assert not np.allclose(s.values[~op.pinned], op.mean[~op.pinned])
    again = D.sample_field(op, 3)
    assert np.array_equal(s.values, again.values)


def test_fluctuation_mean_and_variance(small):
    _, op = small
    fl = D.sample_fluctuations(op, np.arange(4000))
    C = np.linalg.inv(op.precision.toarray())
    sd = np.sqrt(np.diag(C))
    z = fl.mean(axis=0) / (sd / np.sqrt(fl.shape[0]))
    assert np.mean(np.abs(z) < 3) > 0.99
    rel = fl.var(axis=0, ddof=1) / np.diag(C)
    # chi-square with 3999 dof: relative SD ~0.022
    assert np.all(np.abs(rel - 1) < 0.1)


def test_boundary_variance_below_interior(medium):
    _, op = medium
    C_diag = lambda j, i: op.lu.solve(np.eye(op.n_unknown)[op.index[j, i]])[op.index[j, i]]
    assert C_diag(1, 32) < C_diag(32, 32)


def test_psd(small):
    spec, op = small
    r = D.psd_check(spec, n_samples=1000, op=op)
    assert r.passed, r.details


def test_covariance_small(medium):
    spec, op = medium
    r = D.covariance_check(spec, n_samples=2000, op=op)
    assert r.passed, r.details
    assert r.data["exact"] == pytest.approx(r.data["oracle"], rel=0.02)


def test_field_csv(small, tmp_path):
    spec, op = small
    D.sample_field(op, 0).to_csv(tmp_path / "f.csv", spec)
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert len(rows) == (spec.width + 1) * (spec.height + 1)


# ----------------------------------------------------------- level lines

def constructed_field(spec, centre, radius, sign):
    jj, ii = np.mgrid[0:spec.height + 1, 0:spec.width + 1]
    z = spec.embed(ii, jj)
    with np.errstate(invalid="ignore"):
        f = sign * (np.abs(z - centre) - radius)
    return np.where(np.isfinite(f), f, sign * 1e6)


def test_semicircle_to_free_side(medium):
    spec, _ = medium
    # zero set |z - a| = b_1 - a runs from b_1 to a point left of a
    v0 = np.sign(TWO.arc_value(0))
    f = constructed_field(spec, TWO.a, TWO.b[0] - TWO.a, -v0)
    line = D.trace_level_line(f, spec)
    assert line.label == "FreeArc"
    emb = spec.embed(line.points[-1, 0], line.points[-1, 1])
    assert emb.real < TWO.a


def test_semicircle_swallows_next_point(medium):
    spec, _ = medium
    c = 0.5 * (TWO.b[0] + TWO.b[1])
    f = constructed_field(spec, c, 0.5 * (TWO.b[1] - TWO.b[0]), np.sign(TWO.arc_value(0)))
    line = D.trace_level_line(f, spec)
    assert line.label == "SwallowedPoint" and line.index == 2
    pts = spec.embed(line.points[:, 0], line.points[:, 1])
    assert np.max(np.abs(np.abs(pts - c) - 1.5)) < 0.2


def test_sampled_line_stays_on_grid(medium, tmp_path):
    spec, op = medium
    line = D.trace_level_line(D.sample_field(op, 1), spec)
    assert line.label in ("FreeArc", "SwallowedPoint")
    assert np.all((line.points >= 0) & (line.points <= spec.width))
    line.to_csv(tmp_path / "l.csv", spec)
    assert len(list(csv.DictReader(open(tmp_path / "l.csv")))) == len(line.points)


def test_level_line_frequencies_small(medium):
    spec, op = medium
    s = D.level_line_frequencies(spec, n_samples=200, op=op)
    assert s.n_total == 200 and s.n_censored == 0
    assert s.n_free + s.n_point.get(2, 0) == 200


@pytest.mark.slow
@pytest.mark.parametrize("cfg", [TWO, BoundaryConfig(0.0, (1.0, 4.0, 9.0), 1)])
def test_frequency_128(cfg):
    r = D.frequency_check(D.LatticeSpec(cfg, 128, 128), n_samples=2000)
    assert r.passed, r.details
    assert r.data["target"] == pytest.approx(hit_free_arc_probability(cfg))
