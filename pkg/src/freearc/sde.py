"""Driving SDE of the level line with a free arc, and plain SLE_kappa(rho).

The single-step functions (:func:`drift_general`, :func:`step_general`,
:func:`step_sle_kappa_rho`) work on positions and are meant for inspection
and tests. Whole trajectories run through :mod:`freearc.kernels` in gap
coordinates; :func:`run_trajectory` is the entry point.
"""
from dataclasses import dataclass, field, replace
import csv
import enum
import math

import numpy as np

from . import kernels as K
from ._accel import resolve_backend
from .formula import BoundaryConfig, DomainError, force_term, g_from_gaps


@dataclass(frozen=True)
class DrivingState:
    """``b_img`` holds the images of ``b_i`` for ``i != k`` in increasing order."""
    t: float
    w: float
    a_img: float
    b_img: tuple
    j_sq_integral: float = 0.0

    @classmethod
    def initial(cls, config):
        b = tuple(x for i, x in enumerate(config.b, start=1) if i != config.k)
        return cls(0.0, config.start, config.a, b, 0.0)

    def gaps(self, config):
        """Gap vector ``d[j] = w - p_j`` with ``d[k] = 0`` (index 0 is ``a``)."""
        b = list(self.b_img)
        b.insert(config.k - 1, self.w)
        d = self.w - np.array([self.a_img] + b)
        d[config.k] = 0.0
        return d

    @classmethod
    def from_gaps(cls, config, t, w, d, j_sq_integral=0.0):
        d = np.asarray(d, dtype=float)
        p = w - d
        b = tuple(float(p[j]) for j in range(1, d.size) if j != config.k)
        return cls(float(t), float(w), float(p[0]), b, float(j_sq_integral))


@dataclass(frozen=True)
class SleParams:
    kappa: float
    rho: float
    x0: float
    y0: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.y0 > self.x0:
            raise ValueError("force point y0 must satisfy y0 <= x0")


@dataclass(frozen=True)
class StepControl:
    """Integration settings, in units of the initial minimum gap ``g0``.

    Lengths (``epsilon``, ``floor``) scale with ``g0`` and times (``dt_base``,
    ``t_max``) with ``g0**2``, so one control fits every configuration.
    ``eta`` is the dimensionless separation ratio used to call a collision
    decisive; ``None`` ties it to ``epsilon``.
    """
    dt_base: float = 1e-3
    epsilon: float = 1e-4
    adapt_power: float = 2.0
    t_max: float = 1e30
    eta: float = None
    floor: float = 1e-40
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.dt_base > 0 and self.epsilon > 0 and self.t_max > 0):
            raise ValueError("dt_base, epsilon and t_max must be positive")
        if self.adapt_power < 0:
            raise ValueError("adapt_power must be >= 0")
        if self.eta is not None and not (0 < self.eta < 1):
            raise ValueError("eta must lie in (0, 1)")

    @property
    def eta_value(self):
        return min(self.epsilon, 0.5) if self.eta is None else self.eta

    def refined(self, factor):
        """Control with ``epsilon``, ``dt_base`` and an explicit ``eta`` divided by ``factor``."""
        return replace(self, dt_base=self.dt_base / factor, epsilon=self.epsilon / factor,
                       eta=None if self.eta is None else self.eta / factor)

    def kernel_args(self, config, with_force=True):
        """Positional argument tuple shared by the kernels."""
        g0 = config.min_gap
        return (config.points, config.k, config.signs, with_force, self.dt_base * g0 * g0,
                self.epsilon * g0, self.eta_value, float(self.adapt_power),
                self.t_max * g0 * g0, self.floor * g0, int(self.max_steps))

    def to_dict(self):
        return {"dt_base": self.dt_base, "epsilon": self.epsilon, "adapt_power": self.adapt_power,
                "t_max": self.t_max, "eta": self.eta, "floor": self.floor, "max_steps": self.max_steps}

    @classmethod
    def from_dict(cls, d):
        known = cls().to_dict()
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown step control fields: {sorted(unknown)}")
        return cls(**{**known, **d})


class Outcome(enum.Enum):
    FREE_ARC = "FreeArc"
    SWALLOWED_POINT = "SwallowedPoint"
    ANOMALOUS = "AnomalousSamePolarity"
    CENSORED = "Censored"


_KIND_TO_OUTCOME = {K.KIND_FREE: Outcome.FREE_ARC, K.KIND_POINT: Outcome.SWALLOWED_POINT,
                    K.KIND_ANOMALY: Outcome.ANOMALOUS, K.KIND_CENSORED: Outcome.CENSORED}


@dataclass(frozen=True)
class OutcomeRecord:
    """``index`` is the swallowed point for point outcomes, ``reason`` the cause of censoring."""
    outcome: Outcome
    T: float
    final: DrivingState
    steps: int
    index: int = None
    reason: str = None

    @property
    def label(self):
        if self.outcome in (Outcome.SWALLOWED_POINT, Outcome.ANOMALOUS):
            return f"{self.outcome.value}({self.index})"
        if self.outcome is Outcome.CENSORED:
            return f"Censored({self.reason})"
        return self.outcome.value


@dataclass(frozen=True)
class Observables:
    j: float
    log_z: float
    n_weight: float
    m: float
    m_tilde: float


# ------------------------------------------------------------- single steps

def _require_no_collision(state, config):
    d = state.gaps(config)
    if any(d[j] == 0 for j in range(d.size) if j != config.k):
        raise DomainError("state has a zero gap (collision)")
    return d


def drift_general(state, config):
    """Drift of the driving process: ``-1/(w - a) + sum_I F - sum_J F`` with ``F = F(w, b_i, a)``."""
    _require_no_collision(state, config)
    w, a = state.w, state.a_img
    if not w > a:
        raise DomainError("driving value must lie to the right of a")
    return -1.0 / (w - a) + j_from_state(state, config)


def j_from_state(state, config):
    """``J = sum_I F(w, b_i, a) - sum_J F(w, b_i, a)``."""
    w, a = state.w, state.a_img
    b = list(state.b_img)
    b.insert(config.k - 1, w)
    total = 0.0
    for i in config.split.same:
        if i != config.k:
            total += force_term(w, b[i - 1], a)
    for i in config.split.other:
        total -= force_term(w, b[i - 1], a)
    return total


def step_general(state, config, dB, dt):
    """One Euler-Maruyama step of the driving system; ``dB`` has variance ``dt``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return state
    drift = drift_general(state, config)
    j = j_from_state(state, config)
    w0 = state.w
    return DrivingState(t=state.t + dt, w=w0 + 2.0 * dB + drift * dt,
                        a_img=state.a_img + 2.0 * dt / (state.a_img - w0),
                        b_img=tuple(x + 2.0 * dt / (x - w0) for x in state.b_img),
                        j_sq_integral=state.j_sq_integral + j * j * dt)


def step_sle_kappa_rho(w, v, params, dB, dt):
    """One Euler step of SLE_kappa(rho) with force point ``v``."""
    if w == v:
        raise DomainError("driving value and force point coincide")
    return (w + math.sqrt(params.kappa) * dB + params.rho * dt / (w - v),
            v + 2.0 * dt / (v - w))


# ---------------------------------------------------------- classification

def detect_collision(state, config, epsilon, eta=None, rule="decisive"):
    """Terminal classification of ``state`` or ``None`` while undecided.

    ``rule="nearest"`` labels the nearest point as soon as its gap is below
    ``epsilon`` (ties go to the smaller gap). ``rule="decisive"`` (used by
    the simulation) waits until the collision is unambiguous: the point is
    within ``epsilon``, everything between it and ``w`` has merged into it
    and the next point out is ``1/eta`` times further away.
    """
    d = state.gaps(config)
    k = config.k
    if rule == "nearest":
        cand = [(abs(d[j]), j) for j in range(d.size) if j != k and abs(d[j]) <= epsilon]
        if not cand:
            return None
        j = min(cand)[1]
    elif rule == "decisive":
        eta = min(epsilon, 0.5) if eta is None else eta
        j = int(K.decide_np(d[None, :], k, epsilon, eta)[0])
        if j < 0:
            return None
    else:
        raise ValueError(f"unknown rule {rule!r}")
    kind = int(K.classify_np(np.array([j]), config.signs)[0])
    return OutcomeRecord(_KIND_TO_OUTCOME[kind], state.t, state, 0, index=j)


def guard_time_hit(state, config, n_guard):
    """True once some normalised position leaves ``(1/n_guard, 1 - 1/n_guard)``."""
    if n_guard < 2:
        raise ValueError("n_guard must be >= 2")
    lo, hi = 1.0 / n_guard, 1.0 - 1.0 / n_guard
    w, a = state.w, state.a_img
    b = list(state.b_img)
    b.insert(config.k - 1, w)
    for i, bi in enumerate(b, start=1):
        if i == config.k:
            continue
        r = (w - a) / (bi - a) if i > config.k else (bi - a) / (w - a)
        if r <= lo or r >= hi:
            return True
    return False


def observables(state, config):
    d = _require_no_collision(state, config)
    if not d[0] > 0:
        raise DomainError("driving value must lie to the right of a")
    d2 = d[None, :]
    sgn = config.signs
    j = float(K.j_value_np(d2, config.k, sgn)[0])
    log_z = float(K.log_z_value_np(d2, config.k, sgn)[0])
    n_weight = math.exp(-state.j_sq_integral / 8.0)
    return Observables(j=j, log_z=log_z, n_weight=n_weight,
                       m=math.exp(log_z / 4.0) * n_weight,
                       m_tilde=float(g_from_gaps(d, sgn)))


# ------------------------------------------------------------- trajectories

def _record(config, kind, idx, reason, t, w, jsq, steps, d):
    final = DrivingState.from_gaps(config, t, w, d, jsq)
    idx = int(idx) if idx >= 0 and kind != K.KIND_FREE else None
    reason = K.REASON_NAMES.get(int(reason)) if kind == K.KIND_CENSORED else None
    return OutcomeRecord(_KIND_TO_OUTCOME[int(kind)], float(t), final, int(steps), idx, reason)


def run_ensemble(config, ctrl, seeds, with_force=True, backend=None):
    """Terminal data of many trajectories as a dict of arrays.

    Keys: ``kinds``, ``idxs``, ``reasons``, ``ts``, ``ws``, ``jsqs``,
    ``steps`` and ``dmat`` (final gaps, one row per seed).
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.int64)
    args = ctrl.kernel_args(config, with_force)
    if resolve_backend(backend) == "numpy":
        return K.ensemble_np(*args, seeds)
    m, n1 = seeds.size, config.n + 1
    out = {"kinds": np.empty(m, np.int64), "idxs": np.empty(m, np.int64),
           "reasons": np.empty(m, np.int64), "ts": np.empty(m), "ws": np.empty(m),
           "jsqs": np.empty(m), "steps": np.empty(m, np.int64), "dmat": np.empty((m, n1))}
    K.ensemble_nb(*args, seeds, out["kinds"], out["idxs"], out["reasons"], out["ts"], out["ws"],
                  out["jsqs"], out["steps"], out["dmat"])
    return out


def run_trajectory(config, ctrl=None, seed=0, with_force=True, backend=None):
    """Integrate one trajectory to its terminal event; deterministic in ``seed``."""
    ctrl = ctrl or StepControl()
    o = run_ensemble(config, ctrl, [seed], with_force, backend)
    return _record(config, o["kinds"][0], o["idxs"][0], o["reasons"][0], o["ts"][0],
                   o["ws"][0], o["jsqs"][0], o["steps"][0], o["dmat"][0])


@dataclass
class TrajectoryPath:
    """Every state of one trajectory, in gap coordinates."""
    config: BoundaryConfig
    t: np.ndarray
    w: np.ndarray
    gaps: np.ndarray
    j_sq_integral: np.ndarray
    record: OutcomeRecord = field(default=None)

    def states(self):
        for i in range(self.t.size):
            yield DrivingState.from_gaps(self.config, self.t[i], self.w[i], self.gaps[i],
                                         self.j_sq_integral[i])

    def observables(self):
        """Arrays ``j, log_z, n_weight, m, m_tilde`` along the path.

        The last row sits at the terminal event, where ``log_z`` may be huge."""
        sgn, k = self.config.signs, self.config.k
        with np.errstate(all="ignore"):
            j = K.j_value_np(self.gaps, k, sgn)
            log_z = K.log_z_value_np(self.gaps, k, sgn)
            n_w = np.exp(-self.j_sq_integral / 8.0)
            return {"j": j, "log_z": log_z, "n_weight": n_w, "m": np.exp(log_z / 4.0) * n_w,
                    "m_tilde": g_from_gaps(self.gaps, sgn)}


def record_trajectory(config, ctrl=None, seed=0, with_force=True, backend=None):
    """Run one trajectory keeping every intermediate state.

    The numba path integrates twice (once to size the buffers); both passes
    draw the same noise, so the recording matches :func:`run_trajectory`.
    """
    ctrl = ctrl or StepControl()
    args = ctrl.kernel_args(config, with_force)
    n1 = config.n + 1
    if resolve_backend(backend) == "numpy":
        trace = []
        o = K.ensemble_np(*args, np.array([seed], dtype=np.int64), trace=trace)
        t = np.array([0.0] + [r[0] for r in trace])
        w = np.array([config.start] + [r[1] for r in trace])
        d0 = config.start - config.points
        d0[config.k] = 0.0
        gaps = np.vstack([d0] + [r[2] for r in trace])
        jsq = np.array([0.0] + [r[3] for r in trace])
        rec = _record(config, o["kinds"][0], o["idxs"][0], o["reasons"][0], o["ts"][0],
                      o["ws"][0], o["jsqs"][0], o["steps"][0], o["dmat"][0])
        return TrajectoryPath(config, t, w, gaps, jsq, rec)
    e1, e2 = np.empty(0), np.empty((0, n1))
    d = np.empty(n1)
    res = K.run_one(*args, np.int64(seed), d, e1, e1, e2, e1)
    size = int(res[6]) + 1
    t, w, jsq, gaps = np.empty(size), np.empty(size), np.empty(size), np.empty((size, n1))
    res = K.run_one(*args, np.int64(seed), d, t, w, gaps, jsq)
    rec = _record(config, *res[:3], res[3], res[4], res[5], res[6], d)
    return TrajectoryPath(config, t, w, gaps, jsq, rec)


DIAGNOSTIC_COLUMNS = ("t", "w", "a_img")


def write_diagnostics(path, traj, fh=None):
    """CSV rows ``t, w, a_img, b_img..., J, logZ, N, M, M_tilde`` for a recorded trajectory."""
    cfg = traj.config
    others = [i for i in range(1, cfg.n + 1) if i != cfg.k]
    header = list(DIAGNOSTIC_COLUMNS) + [f"b{i}_img" for i in others] + ["J", "logZ", "N", "M", "M_tilde"]
    obs = traj.observables()
    pos = traj.w[:, None] - traj.gaps
    close = fh is None
    fh = fh or open(path, "w", newline="")
    try:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(traj.t.size):
            row = [traj.t[i], traj.w[i], pos[i, 0]] + [pos[i, j] for j in others]
            row += [obs["j"][i], obs["log_z"][i], obs["n_weight"][i], obs["m"][i], obs["m_tilde"][i]]
            wr.writerow([repr(float(x)) for x in row])
    finally:
        if close:
            fh.close()
