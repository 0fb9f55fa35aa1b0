"""Command-line interface: ``kppfront {region,roots,curves,solve,validate}``.

Exit codes: 0 success, 1 validation thresholds missed, 2 bad input,
3 no front exists, 4 iteration did not converge, 5 internal invariant
violated (monotonicity, tail fit, ordering).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import charroots as cr
from .analysis import validate_az
from .charroots import ModelParams, classify, root_data
from .errors import NotConverged, WavefrontError
from .pipeline import NoFront, critical_params, solve

log = logging.getLogger("kppfront")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_NOT_EXISTS = 3
EXIT_NOT_CONVERGED = 4
EXIT_INVARIANT = 5


class BadInput(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _clean(obj):
    """Recursively convert to plain JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(obj, fh=None) -> str:
    text = json.dumps(_clean(obj), indent=2, allow_nan=False)
    if fh is not None:
        fh.write(text + "\n")
    return text


def write_json(path: Path, obj) -> Path:
    with open(path, "w") as fh:
        dump_json(obj, fh)
    return path


def _fmt(x) -> str:
    """CSV cell: 17 significant digits, 'inf' for infinity, empty when undefined."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def parse_c(text: str, h: float) -> ModelParams:
    if text.strip().lower() == "critical":
        try:
            return critical_params(h)
        except ValueError as exc:
            raise BadInput(f"--c critical: {exc}") from None
    try:
        c = float(text)
    except ValueError:
        raise BadInput(f"--c must be a number or 'critical', got {text!r}") from None
    return make_params(h, c)


def make_params(h: float, c: float) -> ModelParams:
    try:
        return ModelParams(h, c)
    except ValueError as exc:
        raise BadInput(str(exc)) from None


def parse_sweep(text: str):
    """``h0:h1:n,c0:c1:m`` -> (h values, c values)."""
    try:
        hs, cs = text.split(",")
        out = []
        for part in (hs, cs):
            a, b, n = part.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            out.append(np.linspace(float(a), float(b), n))
        return out
    except ValueError:
        raise BadInput(f"--sweep expects h0:h1:n,c0:c1:m, got {text!r}") from None


def _positive(name, x):
    if not (x > 0 and math.isfinite(x)):
        raise BadInput(f"{name} must be positive, got {x!r}")


# --------------------------------------------------------------------------
# commands


def cmd_region(args) -> int:
    if args.sweep:
        hs, cs = parse_sweep(args.sweep)
        out = sys.stdout
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["h", "c", "epsilon", "verdict", "critical_speed", "minus_regime", "plus_regime"])
        for h in hs:
            for c in cs:
                rep = classify(make_params(float(h), float(c)), tol=args.tol_class)
                w.writerow([_fmt(float(h)), _fmt(float(c)), _fmt(rep.epsilon), rep.verdict.value,
                            int(rep.critical_speed),
                            rep.minus_regime.value if rep.minus_regime else "",
                            rep.plus_regime.value if rep.plus_regime else ""])
        return EXIT_OK
    _require_hc(args)
    params = parse_c(args.c, args.h)
    rep = classify(params, tol=args.tol_class)
    dump_json(rep.to_dict(), sys.stdout)
    return EXIT_OK if rep.exists else EXIT_NOT_EXISTS


def cmd_roots(args) -> int:
    _require_hc(args)
    params = parse_c(args.c, args.h)
    rep = classify(params, tol=args.tol_class)
    dump_json(root_data(params, double=rep.critical_speed).to_dict(), sys.stdout)
    return EXIT_OK


def curve_rows(n: int, h_max: float = 0.7):
    h1, h0 = cr.critical_constants()
    special = [0.0, cr.HALF_LN2, cr.INV_E, h0, h1]
    hs = np.unique(np.concatenate((np.linspace(0.0, h_max, n), special)))
    rows = []
    for h in hs:
        h = float(h)
        es = cr.eps_star(h) if cr.INV_E < h <= h1 else None
        eh = cr.eps_sharp(h) if cr.HALF_LN2 < h <= h0 else None
        cs = cr.c_star(h)
        rows.append((h, es, cs, eh, cr.c_sharp(h), h0, h1))
    return rows


def cmd_curves(args) -> int:
    if args.n < 2:
        raise BadInput("--n must be at least 2")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["h", "eps_star", "c_star", "eps_sharp", "c_sharp", "h0", "h1"])
    for row in curve_rows(args.n):
        w.writerow([_fmt(x) for x in row])
    return EXIT_OK


def _solve_one(h, c_text, args, out_dir: Path) -> dict:
    """Run one instance and write its files. Returns a summary with an exit code."""
    params = parse_c(c_text, h) if isinstance(c_text, str) else make_params(h, c_text)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"h": params.h, "c": params.c, "epsilon": params.epsilon, "out_dir": str(out_dir)}
    try:
        res = solve(params, delta=args.delta, tol_iter=args.tol, max_iter=args.max_iter,
                    keep=args.emit_iterates)
    except ValueError as exc:
        raise BadInput(str(exc)) from None
    except NoFront as exc:
        summary.update(status=exc.code, message=str(exc), exit=EXIT_NOT_EXISTS,
                       region=classify(params).to_dict())
        return summary
    except NotConverged as exc:
        if exc.profile is not None:
            exc.profile.to_csv(out_dir / "profile_partial.csv")
        if exc.report is not None:
            write_json(out_dir / "iteration.json", exc.report.to_dict())
        summary.update(status=exc.code, message=str(exc), exit=EXIT_NOT_CONVERGED)
        return summary
    except WavefrontError as exc:
        rep = getattr(exc, "report", None)
        if rep is not None:
            write_json(out_dir / "iteration.json", rep.to_dict())
        summary.update(status=exc.code, message=str(exc), exit=EXIT_INVARIANT)
        return summary

    res.profile.to_csv(out_dir / "profile.csv")
    write_json(out_dir / "iteration.json", res.iteration.to_dict())
    fits = {"plus": res.plus_fit, "minus": res.minus_fit}
    for side, fit in fits.items():
        payload = fit.to_dict() if fit is not None else {}
        payload["error"] = res.fit_errors.get(side)
        write_json(out_dir / f"{side}_fit.json", payload)
    for j, it in enumerate(res.iterates):
        it.to_csv(out_dir / f"iterate_{j}.csv")
    summary.update(
        status="OK",
        exit=EXIT_OK,
        region=res.report.to_dict(),
        roots=res.roots.to_dict(),
        operator=res.config.kind.value,
        lower=res.lower.label,
        A=res.A,
        shift=res.shift,
        iterations=res.iteration.iterations,
        converged=res.iteration.converged,
        final_residual_fp=res.iteration.final_residual_fp,
        final_residual_ode=res.iteration.final_residual_ode,
        plus_fit=res.plus_fit.to_dict() if res.plus_fit else None,
        minus_fit=res.minus_fit.to_dict() if res.minus_fit else None,
        fit_errors=res.fit_errors,
        files=sorted(p.name for p in out_dir.iterdir()),
    )
    return summary


def _sweep_task(job):
    h, c, args, out = job
    try:
        return _solve_one(h, c, args, out)
    except BadInput as exc:
        return {"h": h, "c": c, "status": "BAD_INPUT", "message": str(exc), "exit": EXIT_BAD_INPUT}


def cmd_solve(args) -> int:
    _positive("--delta", args.delta)
    _positive("--tol", args.tol)
    if args.max_iter < 1 or args.emit_iterates < 0:
        raise BadInput("--max-iter must be >= 1 and --emit-iterates >= 0")
    out_root = Path(args.out_dir)
    if args.sweep:
        hs, cs = parse_sweep(args.sweep)
        jobs = [(float(h), float(c), args, out_root / f"h{h:.6g}_c{c:.6g}") for h in hs for c in cs]
        out_root.mkdir(parents=True, exist_ok=True)
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_task, jobs))
        with open(out_root / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "c", "status", "iterations", "final_residual_ode", "out_dir"])
            for r in results:
                w.writerow([_fmt(r["h"]), _fmt(r["c"]), r["status"], r.get("iterations", ""),
                            _fmt(r.get("final_residual_ode")), r.get("out_dir", "")])
        dump_json({"instances": len(results),
                   "status_counts": {s: sum(r["status"] == s for r in results)
                                     for s in sorted({r["status"] for r in results})}}, sys.stdout)
        return EXIT_OK
    _require_hc(args)
    summary = _solve_one(args.h, args.c, args, out_root)
    write_json(out_root / "summary.json", summary)
    dump_json(summary, sys.stdout)
    return summary["exit"]


def cmd_validate(args) -> int:
    _positive("--delta", args.delta)
    report = validate_az(delta=args.delta, tol_iter=args.tol, max_iter=args.max_iter)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "validation.json", report)
    dump_json(report, sys.stdout)
    return EXIT_OK if report["passed"] else EXIT_FAILED


def _require_hc(args):
    if args.h is None or args.c is None:
        raise BadInput("--h and --c are required")
    if not (args.h >= 0 and math.isfinite(args.h)):
        raise BadInput(f"--h must be a finite number >= 0, got {args.h!r}")


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--h", type=float, help="delay h >= 0")
    common.add_argument("--c", type=str, help="wave speed c >= 2, or 'critical' for c*(h)")
    common.add_argument("--tol-class", type=float, default=cr.DEFAULT_TOL,
                        help="relative band in c for the critical curves (default 1e-9)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--delta", type=float, default=0.01, help="grid step target (default 0.01)")
    run.add_argument("--tol", type=float, default=1e-10, help="sup-increment stopping tolerance")
    run.add_argument("--max-iter", type=int, default=5000)

    p = argparse.ArgumentParser(prog="kppfront", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("region", parents=[common], help="existence verdict and asymptotic regimes (JSON)")
    s.add_argument("--sweep", help="h0:h1:n,c0:c1:m grid; emits a CSV table instead")
    s.set_defaults(func=cmd_region)

    s = sub.add_parser("roots", parents=[common], help="characteristic roots (JSON)")
    s.set_defaults(func=cmd_roots)

    s = sub.add_parser("curves", help="critical curves as CSV")
    s.add_argument("--n", type=int, default=141, help="number of uniform h samples on [0, 0.7]")
    s.set_defaults(func=cmd_curves)

    s = sub.add_parser("solve", parents=[common, run], help="compute a front")
    s.add_argument("--emit-iterates", type=int, default=0, metavar="K",
                   help="also write the first K iterates (the start included)")
    s.add_argument("--out-dir", default="kppfront_out")
    s.add_argument("--sweep", help="h0:h1:n,c0:c1:m grid solved in parallel")
    s.add_argument("--jobs", type=int, default=None, help="worker processes for --sweep")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("validate", parents=[run], help="exact-solution benchmark (JSON)")
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_validate)
    return p


def _setup_logging():
    level = os.environ.get("WAVEFRONT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BadInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except WavefrontError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
