"""Command-line interface.

Every subcommand writes a CSV table and a YAML summary into ``--out`` (when
given) and prints the summary to stdout.  Outputs contain no timestamps or
host data, so identical inputs and seed give byte-identical files.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 failed
verification.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np
import yaml

from . import __version__
from .ballbox import ball_box_verify
from .errors import (
    BlowUp,
    CCLiftError,
    DimensionMismatch,
    RankDeficient,
    SpecFileError,
    StepBudgetExceeded,
    UnknownSystem,
)
from .fields import VectorField, Word
from .flow import approx_exp
from .frame import check_involutivity
from .integrate import IntegratorConfig, dopri5
from .lifting import TargetPath, estimate_C0, horizontal_lift, named_submersion, SUBMERSIONS
from .palais import DIRECT, RENEWAL, ControlSchedule, detect_blowup, integrate_cauchy
from .systems import BUILTIN_NAMES, SystemSpec, builtin, load_spec_file, quasi_random_points

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("InputError", message)
        raise SystemExit(EXIT_INPUT)


# --------------------------------------------------------------------------- #
# formatting helpers
# --------------------------------------------------------------------------- #

def _num(v):
    """Plain Python scalars for YAML (shortest round-trip repr)."""
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return [_num(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    return v


def _dump(doc) -> str:
    return yaml.safe_dump(_num(doc), sort_keys=False, default_flow_style=None, width=120)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _emit_error(kind, message):
    if isinstance(message, BaseException) and message.args:
        message = message.args[0]
    sys.stderr.write(_dump({"error": kind, "message": str(message)}))


def _write_outputs(args, name, summary, table=None):
    summary = dict(summary)
    summary.setdefault("seed", args.seed)
    summary["tolerances"] = {"rel": args.tol_rel, "abs": args.tol_abs}
    text = _dump(summary)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{name}_summary.yaml"), "w", encoding="utf-8") as fh:
            fh.write(text)
        if table is not None:
            with open(os.path.join(args.out, f"{name}.csv"), "w", encoding="utf-8", newline="") as fh:
                fh.write(_csv_text(*table))
    sys.stdout.write(text)


# --------------------------------------------------------------------------- #
# argument parsing helpers
# --------------------------------------------------------------------------- #

def _vector(text, dim=None, what="vector"):
    try:
        v = np.array([float(s) for s in str(text).replace(";", ",").split(",") if s.strip()], dtype=float)
    except ValueError:
        raise InputError(f"cannot parse {what} {text!r}") from None
    if dim is not None and v.shape != (dim,):
        raise InputError(f"{what} must have {dim} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{what} has non-finite entries")
    return v


def _word(text, m):
    try:
        letters = tuple(int(c) for c in str(text).replace(",", ".").split(".")) if "." in str(text) or "," in str(
            text
        ) else tuple(int(c) for c in str(text))
        w = Word(letters)
    except ValueError:
        raise InputError(f"cannot parse word {text!r}") from None
    if max(w.letters) > m:
        raise InputError(f"word {text} uses a generator beyond the {m} available")
    return w


def _system(args) -> SystemSpec:
    if args.spec:
        spec = load_spec_file(args.spec)
        spec.self_test()
        return spec
    if not args.system:
        raise InputError("one of --system or --spec is required")
    return builtin(args.system)


def _cfg(args) -> IntegratorConfig:
    try:
        return IntegratorConfig(rel_tol=args.tol_rel, abs_tol=args.tol_abs)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _base_point(args, spec):
    return spec.base_point if args.x is None else _vector(args.x, spec.dim, "--x")


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #

def cmd_bracket_table(args):
    spec = _system(args)
    s = args.s or spec.s
    frame = spec.frame(s)
    pts = quasi_random_points(spec.dim, args.count, -2.0, 2.0, args.seed)
    vals = frame.values(pts)
    rows = []
    for j, (w, deg) in enumerate(zip(frame.words, frame.degrees)):
        col = vals[:, :, j]
        rows.append([j + 1, str(w), deg, frame.fields[j].form, float(np.max(np.abs(col)))])
    rel = spec.check_relations(args.count, args.seed)
    rel_rows = [{"relation": k, "residual": r, "tol": t, "passed": bool(p)} for k, (r, t, p) in rel.items()]
    passed = all(r["passed"] for r in rel_rows)
    summary = {
        "command": "bracket-table",
        "system": spec.name,
        "s": s,
        "q": frame.q,
        "seed": args.seed,
        "samples": args.count,
        "relations": rel_rows,
        "passed": passed,
    }
    _write_outputs(args, "bracket_table", summary, (["j", "word", "degree", "form", "max_abs_sampled"], rows))
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_flow(args):
    spec = _system(args)
    x = _base_point(args, spec)
    w = _word(args.word, len(spec.generators))
    X = spec.bracket(w)
    t = float(args.t)
    if t == 0.0:
        times, states, steps, rejected = [0.0], [x], [0.0], 0
    else:
        try:
            sol = dopri5(lambda u, y: t * X.eval_batch(y), 0.0, x[None, :], 1.0, _cfg(args), record=True)
        except BlowUp as exc:
            raise BlowUp(exc.t * t, exc.reason) from None
        times = [u * t + 0.0 for u in sol.times]
        states = [z[0] for z in sol.states]
        steps = [0.0] + [h * abs(t) for h in sol.steps]
        rejected = sol.n_rejected
    summary = {
        "command": "flow",
        "system": spec.name,
        "word": str(w),
        "x": x,
        "t": t,
        "endpoint": states[-1],
        "accepted_steps": len(times) - 1,
        "rejected_steps": int(rejected),
    }
    rows = [[u] + list(z) + [h] for u, z, h in zip(times, states, steps)]
    _write_outputs(args, "flow", summary, (["t"] + [f"x{i + 1}" for i in range(spec.dim)] + ["step"], rows))
    return EXIT_OK


def cmd_approx_exp(args):
    spec = _system(args)
    x = _base_point(args, spec)
    w = _word(args.word, len(spec.generators))
    cfg = _cfg(args)
    try:
        lo, hi, k = args.t_grid.split(":")
        ts = np.geomspace(float(lo), float(hi), int(k))
    except ValueError:
        raise InputError("--t-grid must look like 1e-4:1e-2:9") from None
    Yw = spec.bracket(w)(x)
    rows, errs = [], []
    for t in ts:
        y = approx_exp(spec.generators, w, t, x, cfg)
        back = approx_exp(spec.generators, w, -t, y, cfg)
        e = float(np.linalg.norm(y - x - t * Yw))
        errs.append(e)
        rows.append([t, e, float(np.linalg.norm(back - x))])
    errs = np.array(errs)
    floor = 1e-13 * max(1.0, float(np.linalg.norm(x)))
    exact = bool(np.all(errs <= floor))
    slope = None if exact else float(np.polyfit(np.log(ts), np.log(np.maximum(errs, 1e-300)), 1)[0])
    target = 1.0 + 1.0 / w.length - 0.1
    passed = exact or slope >= target
    summary = {
        "command": "approx-exp",
        "system": spec.name,
        "word": str(w),
        "x": x,
        "slope": slope,
        "exact": exact,
        "required_slope": target,
        "max_roundtrip": float(max(r[2] for r in rows)),
        "passed": bool(passed),
    }
    _write_outputs(args, "approx_exp", summary, (["t", "error", "roundtrip"], rows))
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_lift(args):
    try:
        f = named_submersion(args.submersion)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    theta0 = _vector(args.theta0, f.dom_dim, "--theta0") if args.theta0 else np.zeros(f.dom_dim)
    y0 = f(theta0)
    y1 = _vector(args.target, f.codom_dim, "--target")
    path = TargetPath.segment(y0, y1, args.steps)
    res = horizontal_lift(f, path, theta0, _cfg(args))
    radius = args.radius if args.radius is not None else (f.radius if np.isfinite(f.radius) else 10.0)
    C0 = estimate_C0(f.with_domain(center=theta0), args.count, args.seed, radius=radius)
    bound = C0 * path.speed_bound
    summary = {
        "command": "lift",
        "submersion": f.name,
        "theta0": theta0,
        "target": y1,
        "exit_flag": res.exit_flag,
        "endpoint": res.theta[-1],
        "max_residual": res.max_residual,
        "lipschitz_observed": res.lipschitz_observed,
        "C0_estimate": C0,
        "speed_bound": bound,
        "passed": bool(res.completed and res.lipschitz_observed <= 1.01 * bound),
    }
    rows = [[t] + list(th) for t, th in zip(res.t, res.theta)]
    _write_outputs(args, "lift", summary, (["t"] + [f"theta{i + 1}" for i in range(f.dom_dim)], rows))
    if not res.completed:
        return EXIT_NUMERIC
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


def cmd_involutivity(args):
    spec = _system(args)
    s = args.s or spec.s
    frame = spec.frame(s)
    pts = quasi_random_points(spec.dim, args.count, -args.box, args.box, args.seed)
    rep = check_involutivity(frame, pts)
    rows = []
    for x, i, j, c, r in rep.records():
        rows.append(list(x) + [i + 1, j + 1] + list(c) + [r])
    header = [f"x{k + 1}" for k in range(spec.dim)] + ["i", "j"] + [f"c{k + 1}" for k in range(frame.q)] + ["residual"]
    summary = {
        "command": "involutivity",
        "system": spec.name,
        "s": s,
        "seed": args.seed,
        "samples": args.count,
        "box": args.box,
        "max_residual": rep.max_residual,
        "C1_hat": rep.C1_hat,
        "max_variance": rep.max_variance,
        "constant_coefficients": rep.constant_coefficients,
        "rank_varies": rep.rank_varies,
        "involutive": rep.involutive,
    }
    _write_outputs(args, "involutivity", summary, (header, rows))
    return EXIT_OK if rep.involutive else EXIT_VERIFY


def cmd_ballbox(args):
    spec = _system(args)
    x = _base_point(args, spec)
    eps = args.epsilon if args.epsilon is not None else spec.epsilon
    delta = args.delta if args.delta is not None else spec.delta
    if eps is None or delta is None:
        raise InputError(f"system {spec.name} has no calibrated constants; pass --epsilon and --delta")
    frame = spec.frame(spec.ballbox_s)
    rep = ball_box_verify(frame, x, eps, delta, args.count, args.seed, _cfg(args), orbit=spec.orbit_rank is not None)
    rows = []
    for r in rep.targets:
        h = r.h if r.h is not None else np.full(frame.q, np.nan)
        rows.append(list(r.target) + [r.length_bound, r.h_norm, r.residual, r.reason] + list(h))
    header = (
        [f"target{i + 1}" for i in range(spec.dim)]
        + ["length_bound", "h_norm", "residual", "status"]
        + [f"h{j + 1}" for j in range(frame.q)]
    )
    summary = {
        "command": "ballbox",
        "system": spec.name,
        "x": x,
        "epsilon": eps,
        "delta": delta,
        "count": args.count,
        "seed": args.seed,
        "rank": rep.rank,
        "success_rate": rep.success_rate,
        "max_h_norm": rep.max_h_norm,
        "max_residual": rep.max_residual,
        "passed": rep.passed,
    }
    _write_outputs(args, "ballbox", summary, (header, rows))
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_palais(args):
    spec = _system(args)
    x = _base_point(args, spec)
    frame = spec.frame(args.s or spec.s)
    if args.schedule:
        try:
            schedule = ControlSchedule.from_csv(args.schedule)
        except (OSError, ValueError) as exc:
            raise InputError(str(exc)) from None
    else:
        e = np.eye(frame.q)
        schedule = ControlSchedule.square_wave(e[0], e[1 % frame.q], 0.2, args.tmax)
    mode = {"direct": DIRECT, "renewal": RENEWAL}.get(args.mode.lower())
    if mode is None:
        raise InputError("--mode must be direct or renewal")
    delta = args.delta if args.delta is not None else spec.delta
    if mode == RENEWAL and delta is None:
        raise InputError("Renewal mode needs --delta for this system")
    try:
        traj = integrate_cauchy(frame, x, schedule, args.tmax, mode, _cfg(args), delta=delta, on_blowup="record")
    except Exception as exc:
        if isinstance(exc, CCLiftError):
            raise
        raise InputError(str(exc)) from None
    summary = {
        "command": "palais",
        "system": spec.name,
        "mode": mode,
        "T": args.tmax,
        "delta": delta if mode == RENEWAL else None,
        "x": x,
        "endpoint": traj.endpoint,
        "steps": int(len(traj.times) - 1),
        "max_norm": traj.max_norm,
        "blowup": traj.blowup,
        "hypothesis_violation": traj.hypothesis_violation,
    }
    n = spec.dim
    rows = [[t] + list(p) + [h] for t, p, h in zip(traj.times, traj.points, traj.steps)]
    _write_outputs(args, "palais", summary, (["t"] + [f"x{i + 1}" for i in range(n)] + ["step"], rows))
    return EXIT_NUMERIC if traj.blowup is not None else EXIT_OK


def cmd_blowup(args):
    spec = _system(args)
    x = _base_point(args, spec)
    m = len(spec.generators)
    coefs = _vector(args.combo, m, "--combo") if args.combo else np.ones(m)
    X = VectorField.combine(list(coefs), spec.generators)
    t_star = detect_blowup(X, x, args.tmax, _cfg(args))
    summary = {
        "command": "blowup",
        "system": spec.name,
        "x": x,
        "combination": coefs,
        "T_max": args.tmax,
        "t_star": t_star,
        "blows_up": t_star is not None,
    }
    _write_outputs(args, "blowup", summary)
    return EXIT_OK


COMMANDS = {
    "bracket-table": cmd_bracket_table,
    "flow": cmd_flow,
    "approx-exp": cmd_approx_exp,
    "lift": cmd_lift,
    "involutivity": cmd_involutivity,
    "ballbox": cmd_ballbox,
    "palais": cmd_palais,
    "blowup": cmd_blowup,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help=f"built-in system ({', '.join(BUILTIN_NAMES)})")
    common.add_argument("--spec", help="path to a system spec document (YAML, spec_version: 1)")
    common.add_argument("--seed", type=int, default=0, help="seed for quasi-random sampling")
    common.add_argument("--out", help="directory for CSV and summary files")
    common.add_argument("--tol-rel", type=float, default=1e-10, help="integrator relative tolerance")
    common.add_argument("--tol-abs", type=float, default=1e-12, help="integrator absolute tolerance")
    common.add_argument("--x", help="base point, comma separated")
    common.add_argument("--s", type=int, help="maximal bracket length")

    p = _Parser(prog="cclift", description="Horizontal lifting and Carnot-Caratheodory geometry toolkit")
    p.add_argument("--version", action="version", version=f"cclift {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("bracket-table", parents=[common], help="frame fields and relation residuals")
    q.add_argument("--count", type=int, default=100)

    q = sub.add_parser("flow", parents=[common], help="flow of a bracket field")
    q.add_argument("--word", default="1")
    q.add_argument("--t", type=float, default=1.0)

    q = sub.add_parser("approx-exp", parents=[common], help="convergence order of approximate exponentials")
    q.add_argument("--word", default="12")
    q.add_argument("--t-grid", default="1e-4:1e-2:9")

    q = sub.add_parser("lift", parents=[common], help="horizontal lift through a named submersion")
    q.add_argument("--submersion", required=True, choices=sorted(SUBMERSIONS))
    q.add_argument("--target", required=True)
    q.add_argument("--theta0")
    q.add_argument("--steps", type=int, default=1024)
    q.add_argument("--count", type=int, default=1024, help="samples for the C0 estimate")
    q.add_argument("--radius", type=float, help="sampling radius for the C0 estimate")

    q = sub.add_parser("involutivity", parents=[common], help="bracket closure coefficients")
    q.add_argument("--count", type=int, default=100)
    q.add_argument("--box", type=float, default=2.0)

    q = sub.add_parser("ballbox", parents=[common], help="ball-box verification at a base point")
    q.add_argument("--epsilon", type=float)
    q.add_argument("--delta", type=float)
    q.add_argument("--count", type=int, default=100)

    q = sub.add_parser("palais", parents=[common], help="integrate a controlled Cauchy problem")
    q.add_argument("--schedule", help="CSV with columns t_start,b1..bq (default: square wave e1/e2)")
    q.add_argument("--tmax", type=float, default=10.0)
    q.add_argument("--mode", default="direct")
    q.add_argument("--delta", type=float)

    q = sub.add_parser("blowup", parents=[common], help="escape time of a combination of generators")
    q.add_argument("--tmax", type=float, default=2.0)
    q.add_argument("--combo", help="coefficients of the generators (default all ones)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, UnknownSystem, SpecFileError, DimensionMismatch) as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_INPUT
    except (RankDeficient, BlowUp, StepBudgetExceeded) as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_NUMERIC
    except CCLiftError as exc:
        _emit_error(type(exc).__name__, exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
