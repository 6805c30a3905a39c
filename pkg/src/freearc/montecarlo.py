"""Ensembles of driving-SDE trajectories and the statistical checks built on them.

Every trajectory ``i`` of a run uses seed ``seed_base + i`` and every draw is
a pure function of (seed, step), so results do not depend on how the seeds
are split across worker processes: chunks are fixed-size and merged in
order.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import csv
import json
import math

import numpy as np

from . import kernels as K
from ._accel import resolve_backend
from .formula import BoundaryConfig, g_from_gaps, hit_free_arc_probability
from .sde import StepControl, run_ensemble

CHUNK = 4096


def wilson_interval(successes, total, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0 <= successes <= total:
        raise ValueError("need 0 <= successes <= total")
    p = successes / total
    z2 = z * z
    den = 1.0 + z2 / total
    centre = (p + z2 / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z2 / (4 * total * total)) / den
    lo, hi = centre - half, centre + half
    if successes == 0:
        lo = 0.0
    if successes == total:
        hi = 1.0
    return max(0.0, lo), min(1.0, hi)


@dataclass
class McSummary:
    """Outcome counts of an ensemble; every derived statistic is recomputed from counts.

    ``p_free_hat`` and its interval exclude censored runs.
    """
    n_total: int = 0
    n_free: int = 0
    n_point: dict = field(default_factory=dict)
    n_anomaly: int = 0
    n_censored: int = 0
    censored_reasons: dict = field(default_factory=dict)
    anomaly_points: dict = field(default_factory=dict)
    seed_base: int = 0
    z: float = 1.96
    config: dict = None
    control: dict = None

    @classmethod
    def from_arrays(cls, kinds, idxs, reasons, seed_base=0, config=None, control=None):
        kinds, idxs, reasons = map(np.asarray, (kinds, idxs, reasons))

        def tally(mask, key):
            vals, counts = np.unique(key[mask], return_counts=True)
            return {int(v): int(c) for v, c in zip(vals, counts)}

        cens = kinds == K.KIND_CENSORED
        return cls(n_total=int(kinds.size), n_free=int(np.sum(kinds == K.KIND_FREE)),
                   n_point=tally(kinds == K.KIND_POINT, idxs),
                   n_anomaly=int(np.sum(kinds == K.KIND_ANOMALY)),
                   n_censored=int(cens.sum()),
                   censored_reasons={K.REASON_NAMES[r]: c for r, c in tally(cens, reasons).items()},
                   anomaly_points=tally(kinds == K.KIND_ANOMALY, idxs),
                   seed_base=seed_base, config=config, control=control)

    def merge(self, other):
        if self.config != other.config or self.control != other.control:
            raise ValueError("cannot merge summaries of different runs")

        def add(a, b):
            return {k: a.get(k, 0) + b.get(k, 0) for k in sorted(set(a) | set(b))}

        return McSummary(self.n_total + other.n_total, self.n_free + other.n_free,
                         add(self.n_point, other.n_point), self.n_anomaly + other.n_anomaly,
                         self.n_censored + other.n_censored,
                         add(self.censored_reasons, other.censored_reasons),
                         add(self.anomaly_points, other.anomaly_points),
                         min(self.seed_base, other.seed_base), self.z, self.config, self.control)

    @property
    def n_completed(self):
        return self.n_total - self.n_censored

    @property
    def p_free_hat(self):
        return self.n_free / self.n_completed if self.n_completed else float("nan")

    def interval(self, z=None):
        if not self.n_completed:
            return float("nan"), float("nan")
        return wilson_interval(self.n_free, self.n_completed, self.z if z is None else z)

    @property
    def ci_low(self):
        return self.interval()[0]

    @property
    def ci_high(self):
        return self.interval()[1]

    @property
    def censored_fraction(self):
        return self.n_censored / self.n_total if self.n_total else 0.0

    @property
    def anomaly_rate(self):
        return self.n_anomaly / self.n_completed if self.n_completed else 0.0

    def to_dict(self):
        d = asdict(self)
        d["n_point"] = {str(k): v for k, v in self.n_point.items()}
        d["anomaly_points"] = {str(k): v for k, v in self.anomaly_points.items()}
        d.update(n_completed=self.n_completed, p_free_hat=self.p_free_hat, ci_low=self.ci_low,
                 ci_high=self.ci_high, censored_fraction=self.censored_fraction,
                 anomaly_rate=self.anomaly_rate)
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


@dataclass
class CheckReport:
    """``passed`` is true iff ``statistic`` is within ``threshold`` (and the check was conclusive)."""
    name: str
    statistic: float
    threshold: float
    passed: bool
    details: str = ""
    status: str = None
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status is None:
            self.status = "pass" if self.passed else "fail"

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- ensembles

def _chunk_job(args):
    cfg_dict, ctrl_dict, seeds, with_force, backend = args
    cfg = BoundaryConfig.from_dict(cfg_dict)
    out = run_ensemble(cfg, StepControl.from_dict(ctrl_dict), seeds, with_force, backend)
    return out


def simulate(config, ctrl, n_traj, seed_base=0, workers=1, with_force=True, backend=None):
    """Terminal data of ``n_traj`` trajectories (see :func:`freearc.sde.run_ensemble`)."""
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    seeds = seed_base + np.arange(n_traj, dtype=np.int64)
    chunks = [seeds[i:i + CHUNK] for i in range(0, n_traj, CHUNK)]
    backend = resolve_backend(backend)
    jobs = [(config.to_dict(), ctrl.to_dict(), c, with_force, backend) for c in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def estimate(config, ctrl=None, n_traj=100_000, seed_base=0, workers=1, backend=None,
             return_outcomes=False):
    """Free-arc frequency with Wilson interval; independent of ``workers``."""
    ctrl = ctrl or StepControl()
    out = simulate(config, ctrl, n_traj, seed_base, workers, backend=backend)
    summ = McSummary.from_arrays(out["kinds"], out["idxs"], out["reasons"], seed_base,
                                 config.to_dict(), ctrl.to_dict())
    return (summ, out) if return_outcomes else summ


def formula_check(summary, config, z=3.0):
    """Does the formula value lie in the ``z``-sigma Wilson interval of the estimate?"""
    g = hit_free_arc_probability(config)
    lo, hi = summary.interval(z)
    half = 0.5 * (hi - lo)
    stat = abs(summary.p_free_hat - g) / (half / z) if half > 0 else float("inf")
    return CheckReport("formula", stat, z, bool(lo <= g <= hi),
                       f"p_hat={summary.p_free_hat:.5f} g={g:.5f} interval=[{lo:.5f}, {hi:.5f}] "
                       f"censored={summary.censored_fraction:.4%} anomalous={summary.anomaly_rate:.4%}",
                       data={"p_free_hat": summary.p_free_hat, "g": g, "low": lo, "high": hi})


def write_outcomes_csv(path, out, seed_base=0):
    """Per-trajectory CSV: seed, outcome, index, reason, T, steps."""
    names = {K.KIND_FREE: "FreeArc", K.KIND_POINT: "SwallowedPoint",
             K.KIND_ANOMALY: "AnomalousSamePolarity", K.KIND_CENSORED: "Censored"}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "outcome", "index", "reason", "T", "steps"])
        for i in range(out["kinds"].size):
            kind = int(out["kinds"][i])
            idx = int(out["idxs"][i]) if kind in (K.KIND_POINT, K.KIND_ANOMALY) else ""
            reason = K.REASON_NAMES.get(int(out["reasons"][i]), "") if kind == K.KIND_CENSORED else ""
            wr.writerow([seed_base + i, names[kind], idx, reason, repr(float(out["ts"][i])),
                         int(out["steps"][i])])


# ----------------------------------------------------------- checkpoints

def run_checkpoints(config, ctrl, seeds, checkpoints, n_guard=0, run_to_end=False,
                    with_force=True, backend=None):
    """States at absolute times ``checkpoints``, frozen at guard exits and terminal events."""
    seeds = np.ascontiguousarray(seeds, dtype=np.int64)
    cks = np.ascontiguousarray(checkpoints, dtype=float)
    if np.any(np.diff(cks) <= 0) or np.any(cks <= 0):
        raise ValueError("checkpoints must be positive and increasing")
    args = ctrl.kernel_args(config, with_force)
    if resolve_backend(backend) == "numpy":
        return K.checkpoint_np(*args, seeds, cks, int(n_guard), bool(run_to_end))
    m, c, n1 = seeds.size, cks.size, config.n + 1
    out = {"ck_d": np.zeros((m, c, n1)), "ck_w": np.zeros((m, c)), "ck_jsq": np.zeros((m, c)),
           "ck_t": np.zeros((m, c)), "ck_stop": np.zeros((m, c), np.int64),
           "kinds": np.zeros(m, np.int64), "idxs": np.zeros(m, np.int64), "end_d": np.zeros((m, n1))}
    K.checkpoint_nb(*args, seeds, cks, int(n_guard), bool(run_to_end), out["ck_d"], out["ck_w"],
                    out["ck_jsq"], out["ck_t"], out["ck_stop"], out["kinds"], out["idxs"], out["end_d"])
    return out


def martingale_constancy(config, ctrl=None, n_traj=20_000, checkpoints=(0.01, 0.05, 0.1),
                         n_guard=10, seed_base=0, backend=None, z=2.0):
    """Optional-stopping check of the running free-arc probability.

    ``checkpoints`` are in units of the squared initial minimum gap. The
    mean of the running probability at each checkpoint (stopped at the guard
    exit or terminal event) must be within ``z`` standard errors of its
    initial value. Runs are then continued to their terminal event: the
    running probability must be >= 0.9 on average for FreeArc outcomes and
    <= 0.1 for swallowed points.
    """
    ctrl = ctrl or StepControl()
    g0 = config.min_gap
    cks = np.asarray(checkpoints, dtype=float) * g0 * g0
    seeds = seed_base + np.arange(n_traj, dtype=np.int64)
    out = run_checkpoints(config, ctrl, seeds, cks, n_guard, True, True, backend)
    sgn = config.signs
    m0 = hit_free_arc_probability(config)
    with np.errstate(all="ignore"):
        mt = g_from_gaps(out["ck_d"], sgn)
        m_end = g_from_gaps(out["end_d"], sgn)
    means = mt.mean(axis=0)
    ses = mt.std(axis=0, ddof=1) / math.sqrt(n_traj)
    zs = np.where(ses > 0, np.abs(means - m0) / np.where(ses > 0, ses, 1.0), 0.0)
    free = out["kinds"] == K.KIND_FREE
    point = out["kinds"] == K.KIND_POINT
    free_mean = float(m_end[free].mean()) if free.any() else float("nan")
    point_mean = float(m_end[point].mean()) if point.any() else float("nan")
    dich_ok = (not free.any() or free_mean >= 0.9) and (not point.any() or point_mean <= 0.1)
    stat = float(zs.max())
    details = "; ".join(f"t={c:g}: mean={m:.5f} se={s:.2e} z={zz:.2f} guard-stopped={np.mean(out['ck_stop'][:, i] == 1):.3f}"
                        for i, (c, m, s, zz) in enumerate(zip(checkpoints, means, ses, zs)))
    details += f"; M0={m0:.5f}; terminal mean FreeArc={free_mean:.4f} point={point_mean:.4f}"
    return CheckReport("martingale", stat, z, bool(stat <= z and dich_ok), details,
                       data={"m0": m0, "means": means.tolist(), "se": ses.tolist(),
                             "z": zs.tolist(), "terminal_free_mean": free_mean,
                             "terminal_point_mean": point_mean})


# --------------------------------------------------------------- Girsanov

def _weighted_stats(x, w):
    wn = w / w.sum()
    mu = float(np.sum(wn * x))
    se = float(math.sqrt(np.sum(wn * wn * (x - mu) ** 2)))
    return mu, se


def girsanov_check(config, ctrl=None, n_traj=100_000, t_check=None, seed_base=0, bins=10,
                   backend=None, z=3.0, l1_max=0.05, ess_min=0.1):
    """Compare the driving value at ``t_check`` under the full system with
    SLE_4(-1) reweighted by ``M_t / M_0``, ``M = Z^{1/4} N``.

    ``t_check`` is in units of the squared initial minimum gap; by default it
    is ``0.01`` capped at the 5th percentile of terminal times from a pilot
    run. Both ensembles are stopped at their terminal events.
    """
    ctrl = ctrl or StepControl()
    g0 = config.min_gap
    if t_check is None:
        pilot = simulate(config, ctrl, min(n_traj, 2000), seed_base + 10 ** 9, backend=backend)
        t_check = min(0.01, float(np.quantile(pilot["ts"], 0.05)) / (g0 * g0))
    tc = np.array([t_check * g0 * g0])
    seeds = seed_base + np.arange(n_traj, dtype=np.int64)
    a = run_checkpoints(config, ctrl, seeds, tc, 0, False, True, backend)
    b = run_checkpoints(config, ctrl, seeds + n_traj, tc, 0, False, False, backend)
    xa = a["ck_w"][:, 0]
    xb = b["ck_w"][:, 0]
    sgn, k = config.signs, config.k
    lz0 = float(K.log_z_value_np((config.start - config.points)[None, :], k, sgn)[0])
    with np.errstate(all="ignore"):
        lz = K.log_z_value_np(b["ck_d"][:, 0, :], k, sgn)
    logw = (lz - lz0) / 4.0 - b["ck_jsq"][:, 0] / 8.0
    finite = np.isfinite(logw)
    wts = np.where(finite, np.exp(logw - np.max(logw[finite])), 0.0)
    ess = float(wts.sum() ** 2 / np.sum(wts * wts))
    mu_a = float(xa.mean())
    se_a = float(xa.std(ddof=1) / math.sqrt(n_traj))
    mu_b, se_b = _weighted_stats(xb, wts)
    se = math.hypot(se_a, se_b)
    zstat = abs(mu_a - mu_b) / se if se > 0 else 0.0
    edges = np.quantile(np.concatenate([xa, xb]), np.linspace(0, 1, bins + 1))
    edges[0], edges[-1] = -np.inf, np.inf
    ha = np.histogram(xa, edges)[0] / n_traj
    hb = np.histogram(xb, edges, weights=wts)[0] / wts.sum()
    l1 = float(np.abs(ha - hb).sum())
    stopped = float(np.mean(a["ck_stop"][:, 0] == 2))
    details = (f"t_check={t_check:g} g0^2; mean A={mu_a:.6f}+-{se_a:.2e} weighted B={mu_b:.6f}+-{se_b:.2e} "
               f"z={zstat:.2f}; L1={l1:.4f}; ESS={ess / n_traj:.3f} n; terminated before t_check={stopped:.4f}")
    data = {"t_check": t_check, "mean_a": mu_a, "mean_b": mu_b, "se": se, "z": zstat, "l1": l1,
            "ess_fraction": ess / n_traj}
    if ess < ess_min * n_traj:
        return CheckReport("girsanov", zstat, z, False, details + " (degenerate weights)",
                           status="inconclusive", data=data)
    return CheckReport("girsanov", zstat, z, bool(zstat < z and l1 < l1_max), details, data=data)


# ------------------------------------------------------------------ log Z

def logz_variation(config, ctrl, seeds, t_end, n_guard=10, backend=None):
    """Per-trajectory ``(QV of log Z, 4 int J^2, sum of residuals, sum of squared residuals, steps)``."""
    g0 = config.min_gap
    args = (config.points, config.k, config.signs, ctrl.dt_base * g0 * g0, ctrl.epsilon * g0,
            ctrl.eta_value, float(ctrl.adapt_power), t_end * g0 * g0, int(n_guard))
    seeds = np.ascontiguousarray(seeds, dtype=np.int64)
    if resolve_backend(backend) == "numpy":
        return K.logz_variation_np(*args, seeds)
    out = np.zeros((seeds.size, 5))
    K.logz_variation_nb(*args, seeds, out)
    return out


def logz_identity_check(config, ctrl=None, n_traj=2000, t_end=0.1, n_guard=10, refine=10.0,
                        seed_base=0, backend=None, rel_tol=0.05, z=3.0):
    """Quadratic variation of log Z against ``4 int J^2 ds`` under SLE_4(-1).

    Runs at ``dt_base / refine`` up to ``t_end`` (units of g0^2) or the guard
    exit. Passes when the pooled ratio is within ``rel_tol`` of 1 and the
    step-level residual ``dlogZ - 2 J dB`` has mean zero within ``z`` SE.
    """
    ctrl = (ctrl or StepControl())
    fine = StepControl(**{**ctrl.to_dict(), "dt_base": ctrl.dt_base / refine})
    out = logz_variation(config, fine, seed_base + np.arange(n_traj), t_end, n_guard, backend)
    qv, jint = float(out[:, 0].sum()), float(out[:, 1].sum())
    if jint == 0:
        ratio = 1.0 if qv == 0 else float("inf")
    else:
        ratio = qv / jint
    n_steps = float(out[:, 4].sum())
    res_mean = float(out[:, 2].sum()) / n_steps
    res_var = float(out[:, 3].sum()) / n_steps - res_mean ** 2
    res_z = abs(res_mean) / math.sqrt(res_var / n_steps) if res_var > 0 else 0.0
    stat = abs(ratio - 1.0)
    details = (f"QV={qv:.6g} 4intJ^2={jint:.6g} ratio={ratio:.5f}; residual mean={res_mean:.3e} "
               f"z={res_z:.2f} over {int(n_steps)} steps")
    return CheckReport("logz_qv", stat, rel_tol, bool(stat < rel_tol and res_z < z), details,
                       data={"ratio": ratio, "residual_z": res_z})


# ------------------------------------------------------------- refinement

def anomaly_refinement(config, ctrl=None, n_traj=100_000, factors=(0.1, 1.0, 10.0), seed_base=0,
                       workers=1, backend=None, max_rate=0.01):
    """Same-parity terminal rate under joint refinement of ``epsilon`` and ``dt_base``.

    ``factors`` divide both; the rate at factor 1 must be below ``max_rate``
    and the sequence must not increase.
    """
    ctrl = ctrl or StepControl()
    rates, summaries = [], []
    for f in factors:
        s = estimate(config, ctrl.refined(f), n_traj, seed_base, workers, backend)
        summaries.append(s)
        rates.append(s.anomaly_rate)
    base = rates[list(factors).index(1.0)] if 1.0 in factors else rates[0]
    monotone = all(b <= a for a, b in zip(rates, rates[1:]))
    details = "; ".join(f"factor {f:g}: anomalous={r:.4%} censored={s.censored_fraction:.4%} p_hat={s.p_free_hat:.5f}"
                        for f, r, s in zip(factors, rates, summaries))
    return CheckReport("anomaly_refinement", base, max_rate, bool(base < max_rate and monotone),
                       details, data={"factors": list(factors), "rates": rates})
