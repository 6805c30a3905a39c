"""Deterministic verification suites shared by the CLI and the acceptance tests."""
import math

import numpy as np

from .formula import (BoundaryConfig, dirichlet_limit_probability, greens_dirichlet, greens_mix,
                      greens_mix_images, hit_free_arc_probability)
from .loewner import DrivingPath, flow_point, trace_curve
from .montecarlo import CheckReport


def _upper_points(rng, n, scale=5.0):
    x = rng.uniform(-scale, scale, n)
    y = rng.uniform(0.05, scale, n)
    return x + 1j * y


def green_check(n_pairs=1000, seed=0, tol=1e-12, limit_tol=1e-3, far=-1e8):
    """Symmetry and image-sum identity of the mixed Green function, and its Dirichlet limit."""
    rng = np.random.default_rng(seed)
    z = _upper_points(rng, n_pairs)
    w = _upper_points(rng, n_pairs)
    a = rng.uniform(-3, 3, n_pairs)
    g = greens_mix(z, w, a)
    sym = float(np.max(np.abs(g - greens_mix(w, z, a))))
    refl = float(np.max(np.abs(g - greens_mix_images(z, w, a))))
    gd = greens_dirichlet(z, w)
    lim = float(np.max(np.abs(greens_mix(z, w, far) - gd) / np.abs(gd)))
    stat = max(sym / tol, refl / tol, lim / limit_tol)
    return CheckReport("green", stat, 1.0, bool(stat < 1.0),
                       f"symmetry={sym:.2e} reflection={refl:.2e} (tol {tol:g}); "
                       f"Dirichlet limit rel={lim:.2e} (tol {limit_tol:g}) over {n_pairs} pairs",
                       data={"symmetry": sym, "reflection": refl, "dirichlet_limit": lim})


def dirichlet_limit_check(seed=0, tol=1e-3, far=1e8):
    """Finite-``a`` probability at ``a = b_1 - far`` against the product formula."""
    rng = np.random.default_rng(seed)
    cases = [(0.0, 1.0, 3.0)] + [tuple(float(x) for x in np.sort(rng.uniform(0, 10, 5))) for _ in range(2)]
    rows, worst = [], 0.0
    for b in cases:
        numeric = hit_free_arc_probability(BoundaryConfig(b[0] - far, b, 1))
        closed = dirichlet_limit_probability(b, 1, method="closed")
        rel = abs(numeric - closed) / closed
        worst = max(worst, rel)
        rows.append(f"b={tuple(round(x, 4) for x in b)}: numeric={numeric:.6f} product={closed:.6f} rel={rel:.1e}")
    return CheckReport("dirichlet_limit", worst, tol, bool(worst < tol), "; ".join(rows),
                       data={"worst": worst})


def loewner_check(tol=1e-6, steps=1000):
    """Constant-driving slit: ``g_1(3i) = i sqrt 5`` and traced tip ``2i``."""
    path = DrivingPath.constant(0.0, 1.0, steps)
    g, _ = flow_point(path, 3j)
    err_flow = float(abs(g - 1j * math.sqrt(5.0)))
    err_tip = float(abs(trace_curve(path).points[-1] - 2j))
    stat = max(err_flow, err_tip)
    return CheckReport("loewner", stat, tol, bool(stat < tol),
                       f"|g_1(3i) - i sqrt5|={err_flow:.2e} |tip - 2i|={err_tip:.2e}",
                       data={"flow_error": err_flow, "tip_error": err_tip})
