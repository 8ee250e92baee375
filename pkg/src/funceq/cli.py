"""Command line: ``funceq {check,solve,verify,orbit,corpus} ...``

Exit codes:
  0  success
  1  I/O, parse or usage error
  2  hypotheses failed
  3  node budget exhausted before an epsilon-net formed
  4  conflicting derivations
  5  boundary mismatch (verify)
  6  residual on the boundary set above threshold (verify)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .dynsys import IncompleteNetError, RangeViolation, density_certificate, make_system, orbit_expand
from .exprdsl import Z_VARS, EvalError, ExprError, parse, vectorize
from .hypotheses import run_all
from .problem import Problem, TabulatedFunction
from .problemfile import ProblemFileError, corpus_names, corpus_text, load
from .solver import SolveOptions, solve
from .verify import (
    GAMMA_SMALL,
    boundary_mismatch,
    compare_closed_form,
    residual_on_gamma,
    residual_on_square,
)

EXIT_OK, EXIT_IO, EXIT_HYPOTHESES, EXIT_NO_NET, EXIT_CONFLICTS, EXIT_BOUNDARY, EXIT_RESIDUAL = range(7)
STATUS_EXIT = {"solved": EXIT_OK, "hypotheses-failed": EXIT_HYPOTHESES, "no-net": EXIT_NO_NET, "conflicts": EXIT_CONFLICTS}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    epsilon: float
    grid_n: int
    max_nodes: int
    delta_dup: float
    tol_val: float
    out: Path
    fmt: str

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            epsilon=self.epsilon, grid_n=self.grid_n, max_nodes=self.max_nodes,
            delta_dup=self.delta_dup, tol_val=self.tol_val,
        )


def load_problem(path: str, args: argparse.Namespace | None = None) -> tuple[Problem, RunConfig, str | None]:
    """Read a problem file; flags override file options, defaults fill the rest."""
    pf = load(path)
    p = pf.problem
    opts = dict(pf.options)
    if args is not None:
        for key in ("epsilon", "grid_n", "max_nodes", "delta_dup", "tol_val"):
            v = getattr(args, key, None)
            if v is not None:
                opts[key] = v
    eps = opts.get("epsilon", 1e-3 * p.interval.diam)
    cfg = RunConfig(
        epsilon=eps,
        grid_n=opts.get("grid_n", 1000),
        max_nodes=opts.get("max_nodes", 200_000),
        delta_dup=opts.get("delta_dup", eps * 1e-6),
        tol_val=opts.get("tol_val", 1e-7 * p.value_scale),
        out=Path(getattr(args, "out", None) or "."),
        fmt=getattr(args, "format", None) or "text",
    )
    if not cfg.epsilon > cfg.delta_dup > 0:
        raise UsageError("epsilon > delta_dup > 0 required")
    if cfg.grid_n < 1:
        raise UsageError("grid_n >= 1 required")
    return p, cfg, pf.closed_form


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _flatten(d, prefix=""):
    if isinstance(d, dict):
        for k, v in d.items():
            yield from _flatten(v, f"{prefix}{k}.")
    elif isinstance(d, list) and d and isinstance(d[0], dict):
        for i, v in enumerate(d):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], d


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


def dump_json(d: dict) -> str:
    return json.dumps(d, indent=2, sort_keys=True, default=_jsonable) + "\n"


def render(d: dict, fmt: str) -> str:
    if fmt == "json":
        return dump_json(d)
    rows = list(_flatten(d))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        w.writerows(rows)
        return buf.getvalue()
    width = max((len(k) for k, _ in rows), default=0)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _stem(problem: Problem, path: str) -> str:
    return problem.name or Path(path).stem


def _metadata() -> dict:
    return {"tool": "funceq", "version": __version__}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _closed_form_function(g):
    gv = vectorize(g)

    def f(z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(gv(z=z), z.shape)

    return f


def cmd_check(args) -> int:
    problem, cfg, _ = load_problem(args.path, args)
    hyp = run_all(problem, grid_n=args.hyp_grid_n, epsilon=cfg.epsilon)
    d = {"problem": problem.describe(), "hypotheses": hyp.to_dict(), "failures": hyp.failures()}
    sys.stdout.write(render(d, cfg.fmt))
    return EXIT_OK if hyp.ok else EXIT_HYPOTHESES


def cmd_solve(args) -> int:
    problem, cfg, closed_form = load_problem(args.path, args)
    report = solve(problem, cfg.solve_options())
    d = report.to_dict()
    if closed_form is not None and report.solution is not None:
        err, where = compare_closed_form(report.solution, parse(closed_form, Z_VARS))
        d["closed_form"] = {"expr": closed_form, "sup_err": err, "argmax": where}
    d["metadata"] = _metadata()
    stem = _stem(problem, args.path)
    if report.solution is not None:
        _write(cfg.out / f"{stem}.solution.csv", report.solution.to_csv())
    _write(cfg.out / f"{stem}.report.json", dump_json(d))
    summary = {k: d[k] for k in ("status", "sample_count", "achieved_gap", "max_conflict", "overdetermined", "messages")}
    for k in ("residual_gamma", "residual_square", "closed_form"):
        if d.get(k) is not None:
            summary[k] = d[k]
    sys.stdout.write(render(summary, cfg.fmt))
    return STATUS_EXIT[report.status]


def cmd_verify(args) -> int:
    problem, cfg, _ = load_problem(args.path, args)
    if args.solution is None and args.closed_form is None:
        raise UsageError("verify needs --solution PATH and/or --closed-form EXPR")
    g = parse(args.closed_form, Z_VARS) if args.closed_form is not None else None
    if args.solution is not None:
        f = TabulatedFunction.from_csv(Path(args.solution).read_text(encoding="utf-8"))
        if f.grid[0] != problem.a or f.grid[-1] != problem.b:
            raise UsageError("solution grid does not span [a, b]")
    else:
        # evaluate the closed form exactly instead of through a grid interpolant
        f = _closed_form_function(g)
    n = args.residual_grid_n
    gamma = residual_on_gamma(f, problem, n)
    square = residual_on_square(f, problem, n)
    ma, mb = boundary_mismatch(f, problem)
    threshold = args.threshold if args.threshold is not None else GAMMA_SMALL * problem.value_scale
    d = {
        "gamma": gamma.to_dict(),
        "square": square.to_dict(),
        "boundary": {"mismatch_a": ma, "mismatch_b": mb, "ok": max(ma, mb) <= cfg.tol_val},
        "threshold": threshold,
    }
    if g is not None and args.solution is not None:
        err, where = compare_closed_form(f, g)
        d["closed_form"] = {"expr": args.closed_form, "sup_err": err, "argmax": where}
    sys.stdout.write(render(d, cfg.fmt))
    if max(ma, mb) > cfg.tol_val:
        return EXIT_BOUNDARY
    return EXIT_OK if gamma.sup <= threshold else EXIT_RESIDUAL


def cmd_orbit(args) -> int:
    problem, cfg, _ = load_problem(args.path, args)
    seed = problem.a if args.seed is None else args.seed
    if not problem.interval.contains(seed):
        raise UsageError(f"seed {seed!r} lies outside [{problem.a}, {problem.b}]")
    sys_ = make_system(problem.F, problem.interval)
    code = EXIT_OK
    try:
        table = orbit_expand(sys_, seed, cfg.epsilon, cfg.max_nodes, cfg.delta_dup)
    except IncompleteNetError as exc:
        table = exc.table
        code = EXIT_NO_NET
    cert = density_certificate(sys_, cfg.epsilon, table.achieved_gap)
    stem = _stem(problem, args.path)
    _write(cfg.out / f"{stem}.orbit.csv", table.to_csv())
    d = {"seed": seed, "nodes": len(table.nodes), "certificate": cert.to_dict(), "complete": code == EXIT_OK}
    _write(cfg.out / f"{stem}.certificate.json", dump_json(d))
    sys.stdout.write(render(d, cfg.fmt))
    return code


def cmd_corpus(args) -> int:
    if args.name is None:
        sys.stdout.write("".join(n + "\n" for n in corpus_names()))
        return EXIT_OK
    try:
        text = corpus_text(args.name)
    except FileNotFoundError:
        raise UsageError(f"no bundled problem named {args.name!r}") from None
    if args.out:
        _write(Path(args.out) / (Path(args.name).stem + ".prob"), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="funceq",
        description="Solve f(F(x,y)) = H(f(x), f(y), x, y) on [a, b] from f(a) = A and f(b) = B.",
        epilog="exit codes: 0 ok, 1 I/O or parse, 2 hypotheses, 3 no eps-net, 4 conflicts, 5 boundary mismatch, 6 residual above threshold",
    )
    ap.add_argument("--version", action="version", version=f"funceq {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("path", help="problem file")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--grid-n", dest="grid_n", type=int)
        p.add_argument("--max-nodes", dest="max_nodes", type=int)
        p.add_argument("--delta-dup", dest="delta_dup", type=float)
        p.add_argument("--tol-val", dest="tol_val", type=float)
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--format", choices=("json", "csv", "text"), default="text")

    p = sub.add_parser("check", help="grid-check the hypotheses on F")
    common(p)
    p.add_argument("--hyp-grid-n", dest="hyp_grid_n", type=int, default=400)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("solve", help="propagate boundary data and tabulate the solution")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="residuals of a tabulated or closed-form solution")
    common(p)
    p.add_argument("--solution", help="solution CSV with header z,f")
    p.add_argument("--closed-form", dest="closed_form", help="expression in z")
    p.add_argument("--threshold", type=float, help="gamma residual threshold (default 1e-6 * value scale)")
    p.add_argument("--residual-grid-n", dest="residual_grid_n", type=int, default=200)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("orbit", help="dump the orbit of a seed and its density certificate")
    common(p)
    p.add_argument("--seed", type=float)
    p.set_defaults(func=cmd_orbit)

    p = sub.add_parser("corpus", help="list or print the bundled problems")
    p.add_argument("name", nargs="?")
    p.add_argument("--out")
    p.set_defaults(func=cmd_corpus)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ProblemFileError, UsageError, ExprError, ValueError) as exc:
        print(f"funceq: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EvalError, RangeViolation) as exc:
        print(f"funceq: error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESES


if __name__ == "__main__":
    raise SystemExit(main())
