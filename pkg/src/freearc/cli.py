"""Command line entry point: ``freearc {prob,simulate,verify,trace,dgff}``.

Configuration is JSON with sections ``boundary``, ``step``, ``mc``, ``dgff``
and ``output``; flags override file fields and every JSON report echoes the
fully resolved configuration. Exit codes: 0 pass, 1 usage or configuration
error, 2 failed statistical check.
"""
import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .formula import (LAMBDA, BoundaryConfig, dirichlet_limit_probability,
                      hit_free_arc_probability, probability_factors)
from .sde import StepControl

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

DEFAULTS = {
    "boundary": {"a": 0.0, "b": [1.0, 4.0], "k": 1, "lambda": LAMBDA, "first_sign": 1},
    "step": StepControl().to_dict(),
    "mc": {"n_traj": 100_000, "seed_base": 0, "workers": 1, "checkpoints": [0.01, 0.05, 0.1],
           "n_guard": 10, "t_check": None, "martingale_n_traj": 20_000,
           "girsanov_n_traj": 100_000, "logz_n_traj": 2000},
    "dgff": {"width": 128, "height": 128, "free": True, "n_samples": 2000, "seed": 0,
             "cov_width": 64, "cov_height": 64, "cov_samples": 4000, "run": "both"},
    "output": {"dir": None, "outcomes_csv": False},
}
CHECKS = ("martingale", "girsanov", "green", "loewner", "logz", "dirichlet", "anomaly")
ALL_CHECKS = ("martingale", "girsanov", "green", "loewner", "logz", "dirichlet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise UsageError(f"unknown config key {path}{key!r}")
        if isinstance(base[key], dict) and key != "step":
            if not isinstance(val, dict):
                raise UsageError(f"config section {path}{key!r} must be an object")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        elif key == "step":
            out[key] = {**base[key], **val}
        else:
            out[key] = val
    return out


def resolve_config(args):
    """Defaults, then the config file, then command-line flags."""
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = _merge(DEFAULTS, raw)
    cfg["_has_dgff"] = "dgff" in raw
    flags = {("mc", "seed_base"): args.seed, ("mc", "n_traj"): args.n_traj,
             ("mc", "workers"): args.workers, ("output", "dir"): args.out,
             ("boundary", "a"): args.a, ("boundary", "k"): args.k,
             ("boundary", "b"): args.b}
    for (sec, key), val in flags.items():
        if val is not None:
            cfg[sec][key] = val
    return cfg


def _boundary(cfg, allow_invalid=False):
    try:
        return BoundaryConfig.from_dict(cfg["boundary"])
    except (ValueError, TypeError, KeyError) as exc:
        if allow_invalid:
            return None
        raise UsageError(f"invalid boundary: {exc}") from exc


def _step(cfg):
    try:
        return StepControl.from_dict(cfg["step"])
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid step control: {exc}") from exc


def _outdir(cfg):
    d = cfg["output"]["dir"]
    if d is None:
        return None
    try:
        os.makedirs(d, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {d}: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise UsageError(f"output directory {d} is not writable")
    return d


def _public(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _emit(payload, cfg, name):
    text = json.dumps(payload, sort_keys=True, indent=2, default=_jsonable)
    print(text)
    d = _outdir(cfg)
    if d is not None:
        with open(os.path.join(d, f"{name}.json"), "w") as fh:
            fh.write(text + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x).__name__}")


# --------------------------------------------------------------- commands

def cmd_prob(args, cfg):
    conf = _boundary(cfg, allow_invalid=args.dirichlet_limit)
    lines = []
    payload = {"command": "prob", "config": _public(cfg)}
    if conf is not None:
        g = hit_free_arc_probability(conf)
        lines.append(f"p_free = {g:.12f}")
        for i, group, f in probability_factors(conf):
            lines.append(f"  factor b_{i} ({'I' if group == 'same' else 'J'}): {f:.12f}")
        payload.update(p_free=g, factors=[{"index": i, "group": grp, "factor": f}
                                           for i, grp, f in probability_factors(conf)])
    if args.dirichlet_limit:
        b, k = cfg["boundary"]["b"], cfg["boundary"]["k"]
        try:
            lim = dirichlet_limit_probability(b, k)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        lines.append(f"dirichlet_limit = {lim:.12f}")
        payload["dirichlet_limit"] = lim
    print("\n".join(lines))
    d = _outdir(cfg)
    if d is not None:
        with open(os.path.join(d, "prob.json"), "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
    return EXIT_OK


def cmd_simulate(args, cfg):
    from . import montecarlo as mc
    conf, ctrl, m = _boundary(cfg), _step(cfg), cfg["mc"]
    if m["n_traj"] < 1:
        raise UsageError("n_traj must be >= 1")
    if m["workers"] < 1:
        raise UsageError("workers must be >= 1")
    summ, out = mc.estimate(conf, ctrl, m["n_traj"], m["seed_base"], m["workers"],
                            return_outcomes=True)
    check = mc.formula_check(summ, conf)
    d = _outdir(cfg)
    if d is not None and cfg["output"]["outcomes_csv"]:
        mc.write_outcomes_csv(os.path.join(d, "outcomes.csv"), out, m["seed_base"])
    _emit({"command": "simulate", "config": _public(cfg), "summary": summ.to_dict(),
           "checks": [check.to_dict()], "passed": check.passed}, cfg, "simulate")
    return EXIT_OK if check.passed else EXIT_FAIL


def _run_check(name, conf, ctrl, m):
    from . import checks, montecarlo as mc
    if name == "martingale":
        return mc.martingale_constancy(conf, ctrl, m["martingale_n_traj"], m["checkpoints"],
                                       m["n_guard"], m["seed_base"])
    if name == "girsanov":
        return mc.girsanov_check(conf, ctrl, m["girsanov_n_traj"], m["t_check"], m["seed_base"])
    if name == "logz":
        return mc.logz_identity_check(conf, ctrl, m["logz_n_traj"], seed_base=m["seed_base"])
    if name == "anomaly":
        return mc.anomaly_refinement(conf, ctrl, m["n_traj"], seed_base=m["seed_base"],
                                     workers=m["workers"])
    if name == "green":
        return checks.green_check(seed=m["seed_base"])
    if name == "loewner":
        return checks.loewner_check()
    if name == "dirichlet":
        return checks.dirichlet_limit_check(seed=m["seed_base"])
    raise UsageError(f"unknown check {name!r}")


def cmd_verify(args, cfg):
    names = ALL_CHECKS if args.check == "all" else (args.check,)
    conf, ctrl = _boundary(cfg), _step(cfg)
    reports = [_run_check(n, conf, ctrl, cfg["mc"]) for n in names]
    for r in reports:
        print(f"[{r.status.upper()}] {r.name}: {r.details}", file=sys.stderr)
    ok = all(r.passed for r in reports)
    _emit({"command": "verify", "config": _public(cfg), "checks": [r.to_dict() for r in reports],
           "passed": ok}, cfg, "verify")
    return EXIT_OK if ok else EXIT_FAIL


def _read_driving(path):
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        t = np.array([float(r["t"]) for r in rows])
        w = np.array([float(r["w"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot read driving path {path}: {exc}") from exc
    return t, w


def cmd_trace(args, cfg):
    from .loewner import DrivingPath, TraceError, simplicity_check, trace_curve
    from .sde import record_trajectory, write_diagnostics
    d = _outdir(cfg)
    seed = cfg["mc"]["seed_base"]
    info = {"command": "trace", "config": _public(cfg)}
    if args.driving:
        t, w = _read_driving(args.driving)
        label, tag = None, "driving"
    else:
        conf, ctrl = _boundary(cfg), _step(cfg)
        traj = record_trajectory(conf, ctrl, seed=seed)
        t, w = traj.t, traj.w
        label, tag = traj.record.label, f"seed{seed}"
        info.update(outcome=label, T=traj.record.T, steps=traj.record.steps,
                    index=traj.record.index)
    try:
        path = DrivingPath.from_samples(t, w)
        curve = trace_curve(path, substeps=args.substeps)
    except (ValueError, TraceError) as exc:
        raise UsageError(f"cannot trace: {exc}") from exc
    simple = simplicity_check(curve) if curve.points.size >= 3 else True
    tip = curve.points[-1]
    info.update(simple=bool(simple), tip=[float(tip.real), float(tip.imag)],
                points=int(curve.points.size))
    if d is not None:
        curve.to_csv(os.path.join(d, f"trace_{tag}.csv"))
        if not args.driving:
            write_diagnostics(os.path.join(d, f"diagnostics_{tag}.csv"), traj)
    _emit(info, cfg, f"trace_{tag}")
    return EXIT_OK


def cmd_dgff(args, cfg):
    from . import dgff
    if not cfg["_has_dgff"]:
        raise UsageError("dgff needs a config file with a 'dgff' section")
    conf, g = _boundary(cfg), cfg["dgff"]
    run = args.run or g["run"]
    if run not in ("covariance", "frequency", "both"):
        raise UsageError(f"unknown dgff run {run!r}")
    reports, extra = [], {}
    try:
        if run in ("covariance", "both"):
            spec = dgff.LatticeSpec(conf, g["cov_width"], g["cov_height"], g["free"])
            reports.append(dgff.covariance_check(spec, g["cov_samples"], g["seed"]))
        if run in ("frequency", "both"):
            spec = dgff.LatticeSpec(conf, g["width"], g["height"], g["free"])
            reports.append(dgff.frequency_check(spec, g["n_samples"], g["seed"]))
            extra["lattice"] = spec.to_dict()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    d = _outdir(cfg)
    if d is not None and run in ("frequency", "both"):
        op = dgff.build_operator(spec)
        sample = dgff.sample_field(op, g["seed"])
        sample.to_csv(os.path.join(d, "field.csv"), spec)
        dgff.trace_level_line(sample, spec).to_csv(os.path.join(d, "level_line.csv"), spec)
    for r in reports:
        print(f"[{r.status.upper()}] {r.name}: {r.details}", file=sys.stderr)
    ok = all(r.passed for r in reports)
    _emit({"command": "dgff", "config": _public(cfg), "checks": [r.to_dict() for r in reports],
           "passed": ok, **extra}, cfg, "dgff")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"prob": cmd_prob, "simulate": cmd_simulate, "verify": cmd_verify,
            "trace": cmd_trace, "dgff": cmd_dgff}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="seed base (mc.seed_base)")
    common.add_argument("--n-traj", type=int, dest="n_traj", help="trajectories (mc.n_traj)")
    common.add_argument("--workers", type=int, help="worker processes (mc.workers)")
    common.add_argument("--out", metavar="DIR", help="output directory for JSON/CSV files")
    common.add_argument("--a", type=float, help="free-arc endpoint (boundary.a)")
    common.add_argument("--b", type=float, nargs="+", help="Dirichlet points (boundary.b)")
    common.add_argument("--k", type=int, help="start index, 1-based (boundary.k)")
    p = _Parser(prog="freearc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sp = sub.add_parser("prob", parents=[common], help="evaluate the free-arc probability")
    sp.add_argument("--dirichlet-limit", action="store_true", dest="dirichlet_limit",
                    help="also print the a -> -inf limit")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo estimate against the formula")
    sp = sub.add_parser("verify", parents=[common], help="run verification checks")
    sp.add_argument("--check", default="all", choices=CHECKS + ("all",))
    sp = sub.add_parser("trace", parents=[common], help="trace one curve to CSV")
    sp.add_argument("--driving", metavar="CSV", help="trace a driving path (columns t, w) instead")
    sp.add_argument("--substeps", type=int, default=4)
    sp = sub.add_parser("dgff", parents=[common], help="lattice free-field oracle")
    sp.add_argument("--run", choices=("covariance", "frequency", "both"))
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"freearc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
