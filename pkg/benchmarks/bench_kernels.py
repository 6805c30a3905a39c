"""Time the numba kernels against the pure-numpy fallback and check they agree.

    python benchmarks/bench_kernels.py --n-traj 200 --trace-steps 2000
"""
import argparse
import time

import numpy as np

from freearc._accel import HAS_NUMBA
from freearc.formula import BoundaryConfig
from freearc.loewner import DrivingPath, trace_curve
from freearc.sde import StepControl, run_ensemble


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_ensemble(n_traj, repeat):
    cfg = BoundaryConfig(0.0, (1.0, 2.0, 5.0, 7.0), 1)
    ctrl = StepControl()
    seeds = np.arange(n_traj)
    run_ensemble(cfg, ctrl, seeds[:2], backend="numba")  # compile
    t_nb, a = timed(lambda: run_ensemble(cfg, ctrl, seeds, backend="numba"), repeat)
    t_np, b = timed(lambda: run_ensemble(cfg, ctrl, seeds, backend="numpy"), repeat)
    same = np.array_equal(a["kinds"], b["kinds"]) and np.allclose(a["ts"], b["ts"], rtol=1e-9)
    return t_nb, t_np, same, int(a["steps"].sum())


def bench_trace(steps, repeat):
    rng = np.random.default_rng(0)
    dt = 1.0 / steps
    w = np.concatenate([[0.0], np.cumsum(2.0 * np.sqrt(dt) * rng.normal(size=steps))])
    path = DrivingPath(np.arange(steps + 1) * dt, w)
    trace_curve(DrivingPath.constant(0.0, 1.0, 4), backend="numba")  # compile
    t_nb, a = timed(lambda: trace_curve(path, backend="numba"), repeat)
    t_np, b = timed(lambda: trace_curve(path, backend="numpy"), repeat)
    return t_nb, t_np, bool(np.allclose(a.points, b.points, atol=1e-9))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-traj", type=int, default=200)
    p.add_argument("--trace-steps", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=1)
    args = p.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not installed; both columns run the numpy fallback")
    t_nb, t_np, same, steps = bench_ensemble(args.n_traj, args.repeat)
    print(f"ensemble  {args.n_traj} trajectories ({steps} steps): numba {t_nb:.3f}s  "
          f"numpy {t_np:.3f}s  speedup {t_np / t_nb:.1f}x  identical={same}")
    t_nb, t_np, same = bench_trace(args.trace_steps, args.repeat)
    print(f"trace     {args.trace_steps} steps x 4 substeps: numba {t_nb:.3f}s  "
          f"numpy {t_np:.3f}s  speedup {t_np / t_nb:.1f}x  agree={same}")


if __name__ == "__main__":
    main()
