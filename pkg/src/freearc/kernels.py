"""Hot loops of the driving-SDE simulation, in numba and numpy flavours.

State is held in gap coordinates ``d[j] = w - p_j`` (``p_0 = a``,
``p_j = b_j``; ``d[k]`` is unused). The Euler step

    w   += 2 sqrt(dt) Z + drift dt
    p_j += 2 dt / (p_j - w)

becomes ``d_j += dW + 2 dt / d_j`` which keeps full relative precision for
gaps many orders of magnitude below the marked-point spacing. Every quantity
the simulation needs (drift, J, log Z, running probability, guard ratios)
is a function of the gaps alone, using ``b_j - a = d_0 - d_j``.

The numba kernels integrate one trajectory at a time; the numpy kernels
advance a whole ensemble in lock step and only exist as a fallback and as a
cross-check, so they follow the numba arithmetic operation for operation.
"""
import numpy as np

from ._accel import njit
from .rng import normal_nb, normal_np

KIND_RUNNING = -1
KIND_FREE = 0
KIND_POINT = 1
KIND_ANOMALY = 2
KIND_CENSORED = 3

REASON_NONE = 0
REASON_TMAX = 1
REASON_NONFINITE = 2
REASON_UNRESOLVED = 3
REASON_MAXSTEPS = 4
REASON_ORDER = 5
REASON_NAMES = {REASON_TMAX: "t_max", REASON_NONFINITE: "nonfinite",
                REASON_UNRESOLVED: "unresolved", REASON_MAXSTEPS: "max_steps",
                REASON_ORDER: "order"}

NO_CONTACT = -2
UNDECIDED = -1


# ---------------------------------------------------------------- numba core

@njit
def j_value(d, k, sgn):
    d0 = d[0]
    acc = 0.0
    for j in range(1, d.size):
        if j != k:
            dj = d[j]
            acc += sgn[j] * 2.0 / dj * np.sqrt(1.0 - dj / d0)
    return acc


@njit
def log_z_value(d, k, sgn):
    d0 = d[0]
    sk = np.sqrt(d0)
    acc = 0.0
    for j in range(1, d.size):
        if j != k:
            dj = d[j]
            acc += sgn[j] * (np.log(abs(dj)) - 2.0 * np.log(np.sqrt(d0 - dj) + sk))
    return 2.0 * acc


@njit
def min_gap(d, k):
    m = d[0]
    for j in range(1, d.size):
        if j != k:
            g = abs(d[j])
            if g < m:
                m = g
    return m


@njit
def order_ok(d, k):
    if not d[k - 1] > 0.0:
        return False
    for j in range(1, k):
        if not d[j - 1] >= d[j]:
            return False
    n = d.size - 1
    if k < n:
        if not d[k + 1] < 0.0:
            return False
        for j in range(k + 2, n + 1):
            if not d[j] <= d[j - 1]:
                return False
    return True


@njit
def decide(d, k, eps, eta):
    """Terminal point index, ``UNDECIDED`` while in contact, ``NO_CONTACT`` otherwise.

    A point ``j`` on one side of ``w`` is terminal when its gap is below
    ``eps``, the next point further out is at least ``1/eta`` times further,
    and every point between ``j`` and ``w`` has collapsed onto ``j`` (relative
    spread below ``eta``). Index 0 (``a``) means the free arc.
    """
    n = d.size - 1
    left = d[k - 1]
    right = -d[k + 1] if k < n else np.inf
    if left > eps and right > eps:
        return NO_CONTACT
    for side in range(2):
        go_left = (side == 0) == (left <= right)
        if go_left:
            if left <= eps:
                for j in range(0, k):
                    dj = d[j]
                    if dj > eps:
                        continue
                    if j > 0 and dj > eta * d[j - 1]:
                        continue
                    if left < (1.0 - eta) * dj:
                        continue
                    return j
        else:
            if right <= eps:
                for j in range(n, k, -1):
                    dj = -d[j]
                    if dj > eps:
                        continue
                    if j < n and dj > eta * (-d[j + 1]):
                        continue
                    if right < (1.0 - eta) * dj:
                        continue
                    return j
    return UNDECIDED


@njit
def guard_hit(d, k, n_guard):
    if n_guard <= 0:
        return False
    lo = 1.0 / n_guard
    hi = 1.0 - lo
    d0 = d[0]
    for j in range(1, d.size):
        if j == k:
            continue
        if j > k:
            r = d0 / (d0 - d[j])
        else:
            r = (d0 - d[j]) / d0
        if r <= lo or r >= hi:
            return True
    return False


@njit
def final_decision(d, k, sgn, eps, eta):
    """Decisive contact that ends the run: the free arc or a J-side point.

    Contacts resolving to a same-parity point are provisional; the curve
    approaches those arcs without touching them, so integration continues
    and only a run still pinned there at the resolution floor is recorded
    as anomalous.
    """
    r = decide(d, k, eps, eta)
    if r >= 0 and sgn[r] > 0:
        return UNDECIDED
    return r


@njit
def _classify(j, sgn):
    if j == 0:
        return KIND_FREE
    if sgn[j] < 0:
        return KIND_POINT
    return KIND_ANOMALY


@njit
def _adaptive_dt(mg, g0, dt_base, pw):
    x = mg / g0
    if pw == 2.0:
        return dt_base * x * x
    return dt_base * x ** pw


@njit
def run_one(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap, max_steps,
            seed, d, rec_t, rec_w, rec_d, rec_jsq):
    """Integrate one trajectory to its terminal decision.

    ``d`` receives the final gaps. ``rec_*`` arrays record the state after
    every step while there is room (pass zero-length arrays to skip).
    Returns ``(kind, index, reason, t, w, jsq, steps)``.
    """
    n1 = pts.size
    w = pts[k]
    for j in range(n1):
        d[j] = w - pts[j]
    d[k] = 0.0
    g0 = min_gap(d, k)
    t = 0.0
    jsq = 0.0
    step = 0
    n_rec = rec_t.size
    if n_rec > 0:
        rec_t[0] = 0.0
        rec_w[0] = w
        rec_jsq[0] = 0.0
        for j in range(n1):
            rec_d[0, j] = d[j]
    while True:
        if t >= t_max:
            return KIND_CENSORED, -1, REASON_TMAX, t, w, jsq, step
        if step >= max_steps:
            return KIND_CENSORED, -1, REASON_MAXSTEPS, t, w, jsq, step
        d0 = d[0]
        jv = j_value(d, k, sgn)
        mg = min_gap(d, k)
        if mg <= floor_gap:
            r = decide(d, k, eps, eta)
            if r > 0 and sgn[r] > 0:
                return KIND_ANOMALY, r, REASON_NONE, t, w, jsq, step
            return KIND_CENSORED, -1, REASON_UNRESOLVED, t, w, jsq, step
        dt = _adaptive_dt(mg, g0, dt_base, pw)
        z = normal_nb(seed, step)
        drift = -1.0 / d0
        if with_force:
            drift += jv
        dw = 2.0 * np.sqrt(dt) * z + drift * dt
        for j in range(n1):
            if j != k:
                d[j] += dw + 2.0 * dt / d[j]
        w += dw
        t += dt
        jsq += jv * jv * dt
        step += 1
        if step < n_rec:
            rec_t[step] = t
            rec_w[step] = w
            rec_jsq[step] = jsq
            for j in range(n1):
                rec_d[step, j] = d[j]
        if not np.isfinite(w) or not np.isfinite(d[0]):
            return KIND_CENSORED, -1, REASON_NONFINITE, t, w, jsq, step
        if not order_ok(d, k):
            return KIND_CENSORED, -1, REASON_ORDER, t, w, jsq, step
        r = final_decision(d, k, sgn, eps, eta)
        if r >= 0:
            return _classify(r, sgn), r, REASON_NONE, t, w, jsq, step


@njit
def ensemble_nb(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap, max_steps,
                seeds, kinds, idxs, reasons, ts, ws, jsqs, steps, dmat):
    empty1 = np.empty(0)
    empty2 = np.empty((0, pts.size))
    for i in range(seeds.size):
        res = run_one(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap,
                      max_steps, seeds[i], dmat[i], empty1, empty1, empty2, empty1)
        kinds[i] = res[0]
        idxs[i] = res[1]
        reasons[i] = res[2]
        ts[i] = res[3]
        ws[i] = res[4]
        jsqs[i] = res[5]
        steps[i] = res[6]


@njit
def _store_checkpoints(c_from, n_ck, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, row):
    for c in range(c_from, n_ck):
        for j in range(d.size):
            ck_d[row, c, j] = d[j]
        ck_w[row, c] = w
        ck_jsq[row, c] = jsq
        ck_t[row, c] = t


@njit
def checkpoint_nb(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap, max_steps,
                  seeds, checkpoints, n_guard, run_to_end,
                  ck_d, ck_w, ck_jsq, ck_t, ck_stop, kinds, idxs, end_d):
    """States at fixed times, frozen at the first guard exit or terminal event.

    ``ck_stop[i, c]`` is 0 if checkpoint ``c`` was reached freely, 1 if the
    value is frozen at a guard exit and 2 if frozen at the terminal event.
    With ``run_to_end`` the trajectory continues to its terminal decision
    after the checkpoints are filled; ``kinds``/``idxs``/``end_d`` hold it.
    """
    n1 = pts.size
    n_ck = checkpoints.size
    for i in range(seeds.size):
        seed = seeds[i]
        d = end_d[i]
        w = pts[k]
        for j in range(n1):
            d[j] = w - pts[j]
        d[k] = 0.0
        g0 = min_gap(d, k)
        t = 0.0
        jsq = 0.0
        step = 0
        c = 0
        frozen = False
        kinds[i] = KIND_RUNNING
        idxs[i] = -1
        if guard_hit(d, k, n_guard):
            _store_checkpoints(0, n_ck, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, i)
            for cc in range(n_ck):
                ck_stop[i, cc] = 1
            frozen = True
            c = n_ck
        while True:
            if frozen and not run_to_end:
                break
            if t >= t_max or step >= max_steps:
                kinds[i] = KIND_CENSORED
                break
            d0 = d[0]
            jv = j_value(d, k, sgn)
            mg = min_gap(d, k)
            if mg <= floor_gap:
                r = decide(d, k, eps, eta)
                if r > 0 and sgn[r] > 0:
                    kinds[i] = KIND_ANOMALY
                    idxs[i] = r
                else:
                    kinds[i] = KIND_CENSORED
                break
            dt = _adaptive_dt(mg, g0, dt_base, pw)
            if c < n_ck and t + dt >= checkpoints[c]:
                dt = checkpoints[c] - t
            z = normal_nb(seed, step)
            drift = -1.0 / d0
            if with_force:
                drift += jv
            dw = 2.0 * np.sqrt(dt) * z + drift * dt
            for j in range(n1):
                if j != k:
                    d[j] += dw + 2.0 * dt / d[j]
            w += dw
            jsq += jv * jv * dt
            if c < n_ck and dt == checkpoints[c] - t:
                t = checkpoints[c]
            else:
                t += dt
            step += 1
            if not np.isfinite(w) or not np.isfinite(d[0]) or not order_ok(d, k):
                kinds[i] = KIND_CENSORED
                break
            r = final_decision(d, k, sgn, eps, eta)
            if r >= 0:
                kinds[i] = _classify(r, sgn)
                idxs[i] = r
                if not frozen:
                    _store_checkpoints(c, n_ck, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, i)
                    for cc in range(c, n_ck):
                        ck_stop[i, cc] = 2
                break
            if not frozen:
                while c < n_ck and t >= checkpoints[c]:
                    _store_checkpoints(c, c + 1, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, i)
                    ck_stop[i, c] = 0
                    c += 1
                if guard_hit(d, k, n_guard):
                    _store_checkpoints(c, n_ck, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, i)
                    for cc in range(c, n_ck):
                        ck_stop[i, cc] = 1
                    c = n_ck
                    frozen = True
                elif c >= n_ck:
                    frozen = True
        if not frozen:
            # censored before all checkpoints: freeze at the last state
            _store_checkpoints(c, n_ck, d, w, jsq, t, ck_d, ck_w, ck_jsq, ck_t, i)
            for cc in range(c, n_ck):
                ck_stop[i, cc] = 2


@njit
def logz_variation_nb(pts, k, sgn, dt_base, eps, eta, pw, t_end, n_guard, seeds, out):
    """Per-trajectory Ito accounting of log Z under SLE_4(-1) on ``[0, t_end ^ T_guard]``.

    ``out[i]`` = (sum dlogZ^2, sum 4 J^2 dt, sum (dlogZ - 2 J dB),
    sum (dlogZ - 2 J dB)^2, steps).
    """
    n1 = pts.size
    d = np.empty(n1)
    for i in range(seeds.size):
        w = pts[k]
        for j in range(n1):
            d[j] = w - pts[j]
        d[k] = 0.0
        g0 = min_gap(d, k)
        t = 0.0
        step = 0
        qv = 0.0
        jint = 0.0
        res = 0.0
        res2 = 0.0
        lz = log_z_value(d, k, sgn)
        while t < t_end and not guard_hit(d, k, n_guard):
            jv = j_value(d, k, sgn)
            mg = min_gap(d, k)
            dt = _adaptive_dt(mg, g0, dt_base, pw)
            if t + dt > t_end:
                dt = t_end - t
            z = normal_nb(seeds[i], step)
            db = np.sqrt(dt) * z
            dw = 2.0 * db - dt / d[0]
            for j in range(n1):
                if j != k:
                    d[j] += dw + 2.0 * dt / d[j]
            t += dt
            step += 1
            lz_new = log_z_value(d, k, sgn)
            dl = lz_new - lz
            lz = lz_new
            qv += dl * dl
            jint += 4.0 * jv * jv * dt
            e = dl - 2.0 * jv * db
            res += e
            res2 += e * e
            if final_decision(d, k, sgn, eps, eta) >= 0:
                break
        out[i, 0] = qv
        out[i, 1] = jint
        out[i, 2] = res
        out[i, 3] = res2
        out[i, 4] = step


# ---------------------------------------------------------------- numpy twins

def j_value_np(d, k, sgn):
    d0 = d[:, 0]
    acc = np.zeros(d.shape[0])
    for j in range(1, d.shape[1]):
        if j != k:
            dj = d[:, j]
            acc = acc + sgn[j] * 2.0 / dj * np.sqrt(1.0 - dj / d0)
    return acc


def log_z_value_np(d, k, sgn):
    d0 = d[:, 0]
    sk = np.sqrt(d0)
    acc = np.zeros(d.shape[0])
    for j in range(1, d.shape[1]):
        if j != k:
            dj = d[:, j]
            acc = acc + sgn[j] * (np.log(np.abs(dj)) - 2.0 * np.log(np.sqrt(d0 - dj) + sk))
    return 2.0 * acc


def min_gap_np(d, k):
    cols = [j for j in range(d.shape[1]) if j != k]
    return np.abs(d[:, cols]).min(axis=1)


def order_ok_np(d, k):
    n = d.shape[1] - 1
    ok = d[:, k - 1] > 0.0
    for j in range(1, k):
        ok &= d[:, j - 1] >= d[:, j]
    if k < n:
        ok &= d[:, k + 1] < 0.0
        for j in range(k + 2, n + 1):
            ok &= d[:, j] <= d[:, j - 1]
    return ok


def decide_np(d, k, eps, eta):
    m, n1 = d.shape
    n = n1 - 1
    left = d[:, k - 1]
    right = -d[:, k + 1] if k < n else np.full(m, np.inf)
    res = np.where((left <= eps) | (right <= eps), UNDECIDED, NO_CONTACT)
    left_res = np.full(m, -1)
    for j in range(0, k):
        dj = d[:, j]
        ok = (left_res < 0) & (dj <= eps) & (left >= (1.0 - eta) * dj)
        if j > 0:
            ok &= dj <= eta * d[:, j - 1]
        left_res = np.where(ok, j, left_res)
    right_res = np.full(m, -1)
    for j in range(n, k, -1):
        dj = -d[:, j]
        ok = (right_res < 0) & (dj <= eps) & (right >= (1.0 - eta) * dj)
        if j < n:
            ok &= dj <= eta * (-d[:, j + 1])
        right_res = np.where(ok, j, right_res)
    left_first = left <= right
    first = np.where(left_first, left_res, right_res)
    second = np.where(left_first, right_res, left_res)
    picked = np.where(first >= 0, first, second)
    return np.where(picked >= 0, picked, res)


def final_decision_np(d, k, sgn, eps, eta):
    r = decide_np(d, k, eps, eta)
    return np.where((r >= 0) & (sgn[np.clip(r, 0, len(sgn) - 1)] > 0), UNDECIDED, r)


def _floor_anomaly_np(d, k, sgn, eps, eta):
    r = decide_np(d, k, eps, eta)
    return np.where((r > 0) & (sgn[np.clip(r, 0, len(sgn) - 1)] > 0), r, -1)


def guard_hit_np(d, k, n_guard):
    if n_guard <= 0:
        return np.zeros(d.shape[0], dtype=bool)
    lo = 1.0 / n_guard
    hi = 1.0 - lo
    d0 = d[:, 0]
    hit = np.zeros(d.shape[0], dtype=bool)
    for j in range(1, d.shape[1]):
        if j == k:
            continue
        r = d0 / (d0 - d[:, j]) if j > k else (d0 - d[:, j]) / d0
        hit |= (r <= lo) | (r >= hi)
    return hit


def classify_np(j, sgn):
    j = np.asarray(j)
    s = sgn[np.clip(j, 0, len(sgn) - 1)]
    return np.where(j == 0, KIND_FREE, np.where(s < 0, KIND_POINT, KIND_ANOMALY))


def _adaptive_dt_np(mg, g0, dt_base, pw):
    x = mg / g0
    if pw == 2.0:
        return dt_base * x * x
    return dt_base * x ** pw


def ensemble_np(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap, max_steps, seeds,
                trace=None):
    """Lock-step twin of :func:`ensemble_nb`; returns the same arrays as a dict.

    With a single seed, ``trace`` (a list) receives ``(t, w, gaps, jsq)`` after every step.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    if trace is not None and seeds.size != 1:
        raise ValueError("trace needs exactly one seed")
    m, n1 = seeds.size, pts.size
    out = {"kinds": np.full(m, KIND_RUNNING, dtype=np.int64), "idxs": np.full(m, -1, dtype=np.int64),
           "reasons": np.zeros(m, dtype=np.int64), "ts": np.zeros(m), "ws": np.zeros(m),
           "jsqs": np.zeros(m), "steps": np.zeros(m, dtype=np.int64), "dmat": np.zeros((m, n1))}
    rows = np.arange(m)
    d = np.tile(pts[k] - pts, (m, 1))
    d[:, k] = 0.0
    w = np.full(m, pts[k])
    g0 = min_gap_np(d[:1], k)[0]
    t = np.zeros(m)
    jsq = np.zeros(m)
    step = np.zeros(m, dtype=np.int64)
    sd = seeds.copy()
    cols = [j for j in range(n1) if j != k]

    def finish(mask, kind, idx, reason):
        r = rows[mask]
        out["kinds"][r] = kind if np.ndim(kind) == 0 else kind[mask]
        out["idxs"][r] = idx if np.ndim(idx) == 0 else idx[mask]
        out["reasons"][r] = reason
        out["ts"][r] = t[mask]
        out["ws"][r] = w[mask]
        out["jsqs"][r] = jsq[mask]
        out["steps"][r] = step[mask]
        out["dmat"][r] = d[mask]

    while rows.size:
        done = np.zeros(rows.size, dtype=bool)
        for cond, reason in ((t >= t_max, REASON_TMAX), (step >= max_steps, REASON_MAXSTEPS)):
            cond &= ~done
            if cond.any():
                finish(cond, KIND_CENSORED, -1, reason)
                done |= cond
        jv = j_value_np(d, k, sgn)
        mg = min_gap_np(d, k)
        cond = (mg <= floor_gap) & ~done
        if cond.any():
            ra = _floor_anomaly_np(d, k, sgn, eps, eta)
            an = cond & (ra > 0)
            if an.any():
                finish(an, KIND_ANOMALY, ra, REASON_NONE)
            if (cond & ~an).any():
                finish(cond & ~an, KIND_CENSORED, -1, REASON_UNRESOLVED)
            done |= cond
        live = ~done
        dt = _adaptive_dt_np(mg, g0, dt_base, pw)
        z = normal_np(sd, step)
        drift = -1.0 / d[:, 0]
        if with_force:
            drift = drift + jv
        dw = 2.0 * np.sqrt(dt) * z + drift * dt
        with np.errstate(all="ignore"):
            upd = d[:, cols] + dw[:, None] + 2.0 * dt[:, None] / d[:, cols]
        d[live[:, None] & np.isin(np.arange(n1), cols)[None, :]] = upd[live].ravel()
        w = np.where(live, w + dw, w)
        t = np.where(live, t + dt, t)
        jsq = np.where(live, jsq + jv * jv * dt, jsq)
        step = np.where(live, step + 1, step)
        if trace is not None and live[0]:
            trace.append((t[0], w[0], d[0].copy(), jsq[0]))
        bad = live & ~(np.isfinite(w) & np.isfinite(d[:, 0]))
        if bad.any():
            finish(bad, KIND_CENSORED, -1, REASON_NONFINITE)
            done |= bad
        live = ~done
        with np.errstate(all="ignore"):
            bad = live & ~order_ok_np(d, k)
        if bad.any():
            finish(bad, KIND_CENSORED, -1, REASON_ORDER)
            done |= bad
        live = ~done
        r = final_decision_np(d, k, sgn, eps, eta)
        hit = live & (r >= 0)
        if hit.any():
            finish(hit, classify_np(r, sgn), r, REASON_NONE)
            done |= hit
        if done.any():
            keep = ~done
            rows, d, w, t, jsq, step, sd = rows[keep], d[keep], w[keep], t[keep], jsq[keep], step[keep], sd[keep]
    return out


def checkpoint_np(pts, k, sgn, with_force, dt_base, eps, eta, pw, t_max, floor_gap, max_steps,
                  seeds, checkpoints, n_guard, run_to_end):
    """Lock-step twin of :func:`checkpoint_nb`; returns a dict of its output arrays."""
    seeds = np.asarray(seeds, dtype=np.int64)
    checkpoints = np.asarray(checkpoints, dtype=float)
    m, n1, n_ck = seeds.size, pts.size, checkpoints.size
    out = {"ck_d": np.zeros((m, n_ck, n1)), "ck_w": np.zeros((m, n_ck)), "ck_jsq": np.zeros((m, n_ck)),
           "ck_t": np.zeros((m, n_ck)), "ck_stop": np.zeros((m, n_ck), dtype=np.int64),
           "kinds": np.full(m, KIND_RUNNING, dtype=np.int64), "idxs": np.full(m, -1, dtype=np.int64),
           "end_d": np.zeros((m, n1))}
    rows = np.arange(m)
    d = np.tile(pts[k] - pts, (m, 1))
    d[:, k] = 0.0
    w = np.full(m, pts[k])
    g0 = min_gap_np(d[:1], k)[0]
    t = np.zeros(m)
    jsq = np.zeros(m)
    step = np.zeros(m, dtype=np.int64)
    c = np.zeros(m, dtype=np.int64)
    frozen = np.zeros(m, dtype=bool)
    sd = seeds.copy()
    cols = [j for j in range(n1) if j != k]
    colmask = np.isin(np.arange(n1), cols)

    def store(mask, lo, hi, code):
        # fill checkpoints lo[i]..hi[i]-1 of the masked rows
        for i in np.flatnonzero(mask):
            r = rows[i]
            sl = slice(lo[i], hi[i])
            out["ck_d"][r, sl] = d[i]
            out["ck_w"][r, sl] = w[i]
            out["ck_jsq"][r, sl] = jsq[i]
            out["ck_t"][r, sl] = t[i]
            out["ck_stop"][r, sl] = code

    full = np.full(m, n_ck)
    g = guard_hit_np(d, k, n_guard)
    if g.any():
        store(g, c, full, 1)
        frozen |= g
        c = np.where(g, n_ck, c)
    while rows.size:
        done = frozen & (not run_to_end)
        cens = ~done & ((t >= t_max) | (step >= max_steps))
        jv = j_value_np(d, k, sgn)
        mg = min_gap_np(d, k)
        at_floor = ~done & ~cens & (mg <= floor_gap)
        cens |= at_floor
        if cens.any():
            out["kinds"][rows[cens]] = KIND_CENSORED
            ra = _floor_anomaly_np(d, k, sgn, eps, eta)
            an = at_floor & (ra > 0)
            out["kinds"][rows[an]] = KIND_ANOMALY
            out["idxs"][rows[an]] = ra[an]
            done |= cens
        live = ~done
        dt = _adaptive_dt_np(mg, g0, dt_base, pw)
        nxt = checkpoints[np.minimum(c, n_ck - 1)] if n_ck else np.full(rows.size, np.inf)
        pending = c < n_ck
        capped = pending & (t + dt >= nxt)
        dt = np.where(capped, nxt - t, dt)
        z = normal_np(sd, step)
        drift = -1.0 / d[:, 0]
        if with_force:
            drift = drift + jv
        dw = 2.0 * np.sqrt(dt) * z + drift * dt
        with np.errstate(all="ignore"):
            upd = d[:, cols] + dw[:, None] + 2.0 * dt[:, None] / d[:, cols]
        d[live[:, None] & colmask[None, :]] = upd[live].ravel()
        w = np.where(live, w + dw, w)
        jsq = np.where(live, jsq + jv * jv * dt, jsq)
        t = np.where(live, np.where(capped, nxt, t + dt), t)
        step = np.where(live, step + 1, step)
        with np.errstate(all="ignore"):
            bad = live & ~(np.isfinite(w) & np.isfinite(d[:, 0]) & order_ok_np(d, k))
        if bad.any():
            out["kinds"][rows[bad]] = KIND_CENSORED
            done |= bad
        live = ~done
        r = final_decision_np(d, k, sgn, eps, eta)
        hit = live & (r >= 0)
        if hit.any():
            out["kinds"][rows[hit]] = classify_np(r, sgn)[hit]
            out["idxs"][rows[hit]] = r[hit]
            fr = hit & ~frozen
            store(fr, c, full, 2)
            done |= hit
        live = ~done & ~frozen
        reached = live & (c < n_ck)
        while reached.any():
            at = reached & (t >= checkpoints[np.minimum(c, n_ck - 1)])
            if not at.any():
                break
            store(at, c, c + 1, 0)
            c = np.where(at, c + 1, c)
            reached = at & (c < n_ck)
        gh = live & guard_hit_np(d, k, n_guard)
        gh &= c < n_ck
        if gh.any():
            store(gh, c, full, 1)
            c = np.where(gh, n_ck, c)
        frozen |= live & (c >= n_ck)
        ended = done & ~frozen
        if ended.any():
            store(ended, c, full, 2)
        if done.any():
            out["end_d"][rows[done]] = d[done]
            keep = ~done
            rows, d, w, t, jsq, step, sd, c, frozen = (rows[keep], d[keep], w[keep], t[keep], jsq[keep],
                                                        step[keep], sd[keep], c[keep], frozen[keep])
    return out


def logz_variation_np(pts, k, sgn, dt_base, eps, eta, pw, t_end, n_guard, seeds):
    seeds = np.asarray(seeds, dtype=np.int64)
    m, n1 = seeds.size, pts.size
    out = np.zeros((m, 5))
    rows = np.arange(m)
    d = np.tile(pts[k] - pts, (m, 1))
    d[:, k] = 0.0
    g0 = min_gap_np(d[:1], k)[0]
    t = np.zeros(m)
    step = np.zeros(m, dtype=np.int64)
    acc = np.zeros((m, 4))
    lz = log_z_value_np(d, k, sgn)
    sd = seeds.copy()
    cols = [j for j in range(n1) if j != k]
    colmask = np.isin(np.arange(n1), cols)
    while rows.size:
        done = (t >= t_end) | guard_hit_np(d, k, n_guard)
        live = ~done
        jv = j_value_np(d, k, sgn)
        mg = min_gap_np(d, k)
        dt = _adaptive_dt_np(mg, g0, dt_base, pw)
        dt = np.where(t + dt > t_end, t_end - t, dt)
        z = normal_np(sd, step)
        db = np.sqrt(dt) * z
        dw = 2.0 * db - dt / d[:, 0]
        with np.errstate(all="ignore"):
            upd = d[:, cols] + dw[:, None] + 2.0 * dt[:, None] / d[:, cols]
        d[live[:, None] & colmask[None, :]] = upd[live].ravel()
        t = np.where(live, t + dt, t)
        step = np.where(live, step + 1, step)
        with np.errstate(all="ignore"):
            lz_new = log_z_value_np(d, k, sgn)
        dl = lz_new - lz
        lz = np.where(live, lz_new, lz)
        e = dl - 2.0 * jv * db
        inc = np.stack([dl * dl, 4.0 * jv * jv * dt, e, e * e], axis=1)
        acc += np.where(live[:, None], inc, 0.0)
        hit = live & (final_decision_np(d, k, sgn, eps, eta) >= 0)
        done |= hit
        if done.any():
            r = rows[done]
            out[r, :4] = acc[done]
            out[r, 4] = step[done]
            keep = ~done
            rows, d, t, step, acc, lz, sd = rows[keep], d[keep], t[keep], step[keep], acc[keep], lz[keep], sd[keep]
    return out
