import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freearc.formula import BoundaryConfig
from freearc.loewner import (CurveTrace, DrivingPath, TraceError, flow_point, flow_points,
                             simplicity_check, tilt_parameters, trace_curve)
from freearc.sde import StepControl, record_trajectory


def brownian_path(seed, steps=400, dt=1e-3, kappa=4.0):
    rng = np.random.default_rng(seed)
    w = np.concatenate([[0.0], np.cumsum(math.sqrt(kappa * dt) * rng.normal(size=steps))])
    return DrivingPath(np.arange(steps + 1) * dt, w)


# ------------------------------------------------------------ DrivingPath

def test_path_validation():
    with pytest.raises(ValueError):
        DrivingPath([0.0, 1.0, 1.0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        DrivingPath([0.1, 1.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        DrivingPath([0.0, 1.0], [0.0, np.nan])
    with pytest.raises(ValueError):
        DrivingPath([0.0, 1.0], [0.0])


def test_from_samples_merges_repeated_times():
    p = DrivingPath.from_samples([0.0, 1.0, 1.0, 2.0], [0.0, 0.5, 0.7, 1.0])
    assert p.times.tolist() == [0.0, 1.0, 2.0]
    assert p.values.tolist() == [0.0, 0.7, 1.0]


# ---------------------------------------------------------------- forward

def test_constant_driving_slit_map():
    g, tau = flow_point(DrivingPath.constant(0.0, 1.0, 10), 3j)
    assert g == pytest.approx(1j * math.sqrt(5.0), abs=1e-12)
    assert tau == math.inf


def test_swallowing_time_on_vertical_slit():
    _, tau = flow_point(DrivingPath.constant(0.0, 1.0, 7), 1j)
    assert tau == pytest.approx(0.25, abs=1e-12)


def test_identity_at_time_zero():
    p = DrivingPath([0.0], [0.3])
    g, tau = flow_point(p, 1.0 + 2.0j)
    assert g == 1.0 + 2.0j and tau == math.inf
    assert flow_point(p, 0.3)[1] == 0.0


def test_real_point_swallowed_by_jump():
    p = DrivingPath([0.0, 0.1, 0.2], [0.0, 5.0, 5.0])
    _, tau = flow_point(p, 2.0)
    assert tau == pytest.approx(0.1)


def test_lower_half_plane_rejected():
    with pytest.raises(ValueError):
        flow_point(DrivingPath.constant(0.0, 1.0, 2), 1.0 - 1.0j)


@pytest.mark.parametrize("seed", [0, 1])
def test_hydrodynamic_normalization(seed):
    p = brownian_path(seed, steps=200)
    t = p.times[-1]
    res = []
    for r in (1e3, 1e4):
        z = r * np.exp(1j * 1.1)
        g, _ = flow_point(p, z)
        res.append(abs(g - z - 2 * t / z))
    # residual is the 1/z**2 term of the expansion
    assert res[1] < res[0] / 50


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6), st.integers(1, 199))
def test_composition_consistency(seed, split):
    p = brownian_path(seed, steps=200)
    z = np.array([0.5 + 1.0j, -1.0 + 0.3j, 2.0 + 2.0j])
    direct, _ = flow_points(p, z)
    mid, _ = flow_points(p.window(0, split), z)
    tail = DrivingPath(p.times[split:] - p.times[split], p.values[split:])
    again, _ = flow_points(tail, mid)
    assert np.allclose(direct, again, rtol=0, atol=1e-12)


@settings(max_examples=25)
@given(st.integers(0, 10 ** 6))
def test_flow_stays_in_upper_half_plane(seed):
    p = brownian_path(seed, steps=100)
    g, tau = flow_points(p, np.array([0.1 + 0.05j, 1.0 + 1e-3j, -2.0 + 3.0j]))
    assert np.all(g.imag >= 0)


# ---------------------------------------------------------------- tracing

@pytest.mark.parametrize("interpolation", ["sqrt", "constant"])
@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_vertical_slit_tip(interpolation, backend):
    tr = trace_curve(DrivingPath.constant(0.0, 1.0, 400), backend=backend,
                     interpolation=interpolation)
    assert abs(tr.points[-1] - 2j) < 1e-6
    assert tr.points[0] == 0j and tr.times[-1] == 1.0


def test_single_step_tip():
    tr = trace_curve(DrivingPath([0.0, 0.09], [0.7, 0.7]), substeps=1, interpolation="constant")
    assert tr.points[-1] == pytest.approx(0.7 + 2j * 0.3, abs=1e-14)


def test_single_tilted_step_is_straight_segment():
    dw, dt = 0.3, 0.01
    alpha, _, _ = tilt_parameters(dw, dt)
    tr = trace_curve(DrivingPath([0.0, dt], [0.0, dw]), substeps=5)
    angles = np.angle(tr.points[1:])
    assert np.allclose(angles, alpha * math.pi, atol=1e-12)


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(1e-6, 10))
def test_tilt_prevertex_is_end_driving_value(dw, dt):
    alpha, xl, xr = tilt_parameters(dw, dt)
    length = xr - xl
    # F'(x) = 0 at the tip's prevertex (1 - alpha) xr + alpha xl
    assert (1 - alpha) * xr + alpha * xl == pytest.approx(dw, abs=1e-9 * max(1.0, length))
    assert (1 - alpha) * xl + alpha * xr == pytest.approx(0.0, abs=1e-12 * max(1.0, length))
    # half-plane capacity: coefficient of 1/z equals -2 dt
    assert alpha * (1 - alpha) * length ** 2 / 2 == pytest.approx(2 * dt, rel=1e-12)


def test_constant_mode_inverse_consistency():
    p = brownian_path(3, steps=60)
    tr = trace_curve(p, substeps=1, interpolation="constant")
    for j in (5, 30, 60):
        g, tau = flow_point(p.window(0, j), tr.points[j], tol=1e-6)
        assert tau == pytest.approx(p.times[j], abs=1e-6)
        assert abs(g - p.values[j - 1]) < 1e-4


def test_sqrt_mode_tips_flow_close_to_driving():
    p = brownian_path(4, steps=2000, dt=1e-5)
    tr = trace_curve(p, substeps=1)
    j = 1000
    g, _ = flow_point(p.window(0, j), tr.points[j], tol=0.0)
    # forward flow holds W piecewise constant, so it agrees up to the step scale
    assert abs(g - p.values[j]) < 20 * math.sqrt(1e-5)


@pytest.mark.parametrize("interpolation", ["sqrt", "constant"])
def test_backend_agreement(interpolation):
    p = brownian_path(5, steps=300)
    a = trace_curve(p, backend="numba", interpolation=interpolation)
    b = trace_curve(p, backend="numpy", interpolation=interpolation)
    assert np.allclose(a.points, b.points, rtol=0, atol=1e-10)
    assert np.array_equal(a.times, b.times)


def test_trace_invariants():
    tr = trace_curve(brownian_path(6))
    assert tr.points[0] == 0j
    assert np.all(tr.points.imag >= 0)
    assert np.all(np.diff(tr.times) > 0)
    assert tr.points.size == tr.times.size == 400 * 4 + 1


def test_trace_rejects_bad_arguments():
    p = brownian_path(0, steps=5)
    with pytest.raises(ValueError):
        trace_curve(p, substeps=0)
    with pytest.raises(ValueError):
        trace_curve(p, interpolation="linear")


def test_trace_error_type():
    assert issubclass(TraceError, ArithmeticError)


def test_csv_export(tmp_path):
    tr = trace_curve(DrivingPath.constant(0.0, 1.0, 3), substeps=1)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "y"]
    assert len(rows) == 5
    assert float(rows[-1][2]) == pytest.approx(2.0)


# ------------------------------------------------------------- simplicity

def test_vertical_slit_is_simple():
    assert simplicity_check(trace_curve(DrivingPath.constant(0.0, 1.0, 100)))


def test_self_crossing_polyline():
    pts = np.array([0, 2j, 1 + 1j, -1 + 1j])
    assert not simplicity_check(CurveTrace(pts, np.arange(4.0)))


def test_near_touch_with_tolerance():
    pts = np.array([0, 2j, 2 + 2j, 2 + 0.5j, 0.01 + 0.5j])
    tr = CurveTrace(pts, np.arange(5.0))
    assert simplicity_check(tr)
    assert not simplicity_check(tr, tol=0.02)


def test_long_segment_crossing_detected():
    # one long segment spanning many grid cells of short ones
    short = np.linspace(0, 1, 200) + 1j * 0.5
    pts = np.concatenate([short, [0.5 + 1j, 0.5 + 0j]])
    assert not simplicity_check(CurveTrace(pts, np.arange(pts.size, dtype=float)))


def test_simplicity_needs_three_points():
    with pytest.raises(ValueError):
        simplicity_check(CurveTrace(np.array([0, 1j]), np.array([0.0, 1.0])))


@pytest.mark.parametrize("seed", range(5))
def test_brownian_traces_are_simple(seed):
    assert simplicity_check(trace_curve(brownian_path(seed, steps=1000)))


def test_trajectory_trace_is_simple():
    cfg = BoundaryConfig(0.0, (1.0,), 1)
    traj = record_trajectory(cfg, StepControl(), seed=1)
    assert traj.record.label == "FreeArc"
    tr = trace_curve(DrivingPath.from_samples(traj.t, traj.w))
    assert simplicity_check(tr)
