"""Orbit propagation solver.

Boundary values are carried along the orbit of the endpoints by

    f(delta1(z)) = H(f(a), f(z), a, z)
    f(delta2(z)) = H(f(z), f(b), z, b)

until the sample points form an epsilon-net; the samples are then
interpolated onto a uniform grid. Two derivations of (nearly) the same point
with different values are logged as conflicts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynsys import (
    DensityCertificate,
    IncompleteNetError,
    RangeViolation,
    density_certificate,
    expand,
    make_system,
)
from .exprdsl import EvalError, evaluate, vectorize
from .hypotheses import HypothesisReport, run_all
from .problem import Problem, TabulatedFunction

__all__ = [
    "Problem",
    "TabulatedFunction",
    "Sample",
    "SampleTable",
    "SolveOptions",
    "SolveReport",
    "PropagationError",
    "propagate",
    "reconstruct",
    "solve",
]

log = logging.getLogger(__name__)

IDENTITY_BUDGET = 1e-12


class PropagationError(RuntimeError):
    def __init__(self, message: str, word: str | None = None):
        self.word = word
        super().__init__(message if word is None else f"{message} (derivation word {word!r})")


@dataclass(frozen=True)
class Sample:
    point: float
    value: float
    word: str
    seed: float

    @property
    def depth(self) -> int:
        return len(self.word)


@dataclass(frozen=True)
class Conflict:
    point: float
    incumbent: float
    challenger: float
    diff: float


@dataclass
class SampleTable:
    points: np.ndarray
    values: np.ndarray
    words: list[str]
    seeds: np.ndarray
    parents: np.ndarray  # index into this table, -1 for seeds
    delta_dup: float
    conflicts: list[Conflict]
    gap: float
    complete: bool
    identity_defect: float = 0.0
    identity_budget_exceeded: bool = False

    def __len__(self) -> int:
        return self.points.size

    def __getitem__(self, i: int) -> Sample:
        return Sample(float(self.points[i]), float(self.values[i]), self.words[i], float(self.seeds[i]))

    @property
    def max_conflict(self) -> float:
        return max((c.diff for c in self.conflicts), default=0.0)


@dataclass(frozen=True)
class SolveOptions:
    epsilon: float | None = None  # default 1e-3 * (b - a)
    grid_n: int = 1000
    max_nodes: int = 200_000
    delta_dup: float | None = None  # default epsilon * 1e-6
    tol_val: float | None = None  # default 1e-7 * max(1, |A|, |B|)
    order: tuple[int, int] = (1, 2)
    seeds: str = "ab"
    hypothesis_grid_n: int = 400
    residual_grid_n: int = 200

    def resolved(self, problem: Problem) -> "SolveOptions":
        eps = 1e-3 * problem.interval.diam if self.epsilon is None else self.epsilon
        dup = eps * 1e-6 if self.delta_dup is None else self.delta_dup
        tol = 1e-7 * problem.value_scale if self.tol_val is None else self.tol_val
        out = replace(self, epsilon=eps, delta_dup=dup, tol_val=tol)
        if not out.epsilon > out.delta_dup > 0:
            raise ValueError("need epsilon > delta_dup > 0")
        if out.grid_n < 1:
            raise ValueError("grid_n must be at least 1")
        if sorted(out.order) != [1, 2] or sorted(out.seeds) != ["a", "b"]:
            raise ValueError("order must be a permutation of (1, 2) and seeds of 'ab'")
        return out


def propagate(
    problem: Problem,
    epsilon: float,
    max_nodes: int,
    delta_dup: float,
    tol_val: float,
    *,
    order: tuple[int, int] = (1, 2),
    seeds: str = "ab",
    audit: bool = True,
) -> SampleTable:
    """Spread the boundary data over the orbit of {a, b}.

    The net may be incomplete (``complete`` False) when ``max_nodes`` runs
    out; this is reported in the table rather than raised.
    """
    sys = make_system(problem.F, problem.interval)
    H = vectorize(problem.H)
    a, b, A, B = problem.a, problem.b, problem.A, problem.B

    def via1(z, fz):
        return H(u=A, v=fz, x=a, y=z)

    def via2(z, fz):
        return H(u=fz, v=B, x=z, y=b)

    seed_pts = {"a": (a, A), "b": (b, B)}
    pts = [seed_pts[s][0] for s in seeds]
    vals = [seed_pts[s][1] for s in seeds]
    try:
        ex = expand(
            sys.maps(), problem.interval, pts, epsilon, max_nodes, delta_dup,
            seed_values=vals, child_values=(via1, via2), tol_val=tol_val, order=order,
        )
    except EvalError as exc:
        raise PropagationError(f"evaluation failed during propagation: {exc}") from None

    o = ex.sorted_order()
    inverse = np.empty_like(o)
    inverse[o] = np.arange(o.size)
    parents = np.where(ex.parents[o] >= 0, inverse[np.maximum(ex.parents[o], 0)], -1)
    words = [ex.words[i] for i in o]
    origin = ex.points.copy()
    for i in range(origin.size):  # parents precede children in insertion order
        if ex.parents[i] >= 0:
            origin[i] = origin[ex.parents[i]]

    table = SampleTable(
        points=ex.points[o],
        values=ex.values[o],
        words=words,
        seeds=origin[o],
        parents=parents,
        delta_dup=delta_dup,
        conflicts=[Conflict(*c) for c in ex.conflicts],
        gap=ex.gap,
        complete=ex.complete,
    )
    if audit:
        _audit_identities(problem, table)
    return table


def _audit_identities(problem: Problem, table: SampleTable) -> None:
    """Re-derive every non-seed sample from its parent with the scalar evaluator."""
    a, b, A, B = problem.a, problem.b, problem.A, problem.B
    worst = 0.0
    exceeded = False
    for k in range(len(table)):
        p = table.parents[k]
        if p < 0:
            continue
        z, fz = float(table.points[p]), float(table.values[p])
        word = table.words[k]
        try:
            if word[-1] == "1":
                expect = evaluate(problem.H, {"u": A, "v": fz, "x": a, "y": z})
            else:
                expect = evaluate(problem.H, {"u": fz, "v": B, "x": z, "y": b})
        except EvalError as exc:
            raise PropagationError(f"evaluation failed: {exc}", word) from None
        defect = abs(float(table.values[k]) - expect)
        worst = max(worst, defect)
        if defect > IDENTITY_BUDGET * len(word) * max(1.0, abs(expect)):
            exceeded = True
    table.identity_defect = worst
    table.identity_budget_exceeded = exceeded
    if exceeded:
        log.warning("propagation identity defect %.3g exceeds the rounding budget", worst)


def reconstruct(samples: SampleTable, grid_n: int, interval=None) -> TabulatedFunction:
    """Piecewise-linear interpolation of the samples onto ``grid_n + 1`` uniform points."""
    if grid_n < 1:
        raise ValueError("grid_n must be at least 1")
    p, v = samples.points, samples.values
    a = float(p[0]) if interval is None else interval.a
    b = float(p[-1]) if interval is None else interval.b
    if p[0] != a or p[-1] != b:
        raise ValueError("samples must contain both endpoints")
    grid = np.linspace(a, b, grid_n + 1)
    values = np.interp(grid, p, v)
    # pass through samples that sit on grid points
    pos = np.clip(np.searchsorted(p, grid), 1, p.size - 1)
    near = np.where(np.abs(grid - p[pos - 1]) <= np.abs(grid - p[pos]), pos - 1, pos)
    hit = np.abs(grid - p[near]) <= samples.delta_dup
    values[hit] = v[near[hit]]
    values[0], values[-1] = v[0], v[-1]
    return TabulatedFunction(grid, values)


@dataclass
class SolveReport:
    problem: Problem
    options: SolveOptions
    status: str  # solved | no-net | conflicts | hypotheses-failed
    hypotheses: HypothesisReport
    certificate: DensityCertificate | None = None
    samples: SampleTable | None = None
    solution: TabulatedFunction | None = None
    residual_gamma: object | None = None  # verify.ResidualReport
    residual_square: object | None = None
    overdetermined: bool = False
    messages: list[str] = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return 0 if self.samples is None else len(self.samples)

    @property
    def max_conflict(self) -> float:
        return 0.0 if self.samples is None else self.samples.max_conflict

    def to_dict(self) -> dict:
        s = self.samples
        return {
            "status": self.status,
            "problem": self.problem.describe(),
            "options": {
                "epsilon": self.options.epsilon,
                "grid_n": self.options.grid_n,
                "max_nodes": self.options.max_nodes,
                "delta_dup": self.options.delta_dup,
                "tol_val": self.options.tol_val,
                "order": list(self.options.order),
            },
            "hypotheses": self.hypotheses.to_dict(),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "sample_count": self.sample_count,
            "achieved_gap": None if s is None else s.gap,
            "max_conflict": self.max_conflict,
            "conflicts": [] if s is None else [
                {"point": c.point, "incumbent": c.incumbent, "challenger": c.challenger, "diff": c.diff}
                for c in s.conflicts[:100]
            ],
            "identity_defect": None if s is None else s.identity_defect,
            "identity_budget_exceeded": None if s is None else s.identity_budget_exceeded,
            "residual_gamma": None if self.residual_gamma is None else self.residual_gamma.to_dict(),
            "residual_square": None if self.residual_square is None else self.residual_square.to_dict(),
            "overdetermined": self.overdetermined,
            "messages": list(self.messages),
        }


def solve(problem: Problem, options: SolveOptions | None = None) -> SolveReport:
    """Hypotheses, propagation, reconstruction and residual scans, in that order."""
    from . import verify

    opts = (options or SolveOptions()).resolved(problem)
    hyp = run_all(problem, grid_n=opts.hypothesis_grid_n, epsilon=opts.epsilon)
    report = SolveReport(problem, opts, "hypotheses-failed", hyp)
    if not hyp.ok:
        report.messages.extend(hyp.failures())
        return report

    try:
        table = propagate(
            problem, opts.epsilon, opts.max_nodes, opts.delta_dup, opts.tol_val,
            order=opts.order, seeds=opts.seeds,
        )
    except (PropagationError, RangeViolation, EvalError) as exc:
        report.status = "hypotheses-failed"
        report.messages.append(str(exc))
        return report
    report.samples = table
    sys = make_system(problem.F, problem.interval)
    report.certificate = density_certificate(sys, opts.epsilon, table.gap, grid_n=opts.hypothesis_grid_n)

    if not table.complete:
        report.status = "no-net"
        report.messages.append(str(IncompleteNetError("node budget exhausted", table.gap)))
        return report
    if table.conflicts:
        report.status = "conflicts"
        report.messages.append(
            f"{len(table.conflicts)} conflicting derivation(s), max |diff| {table.max_conflict:.6g}"
        )
        return report

    f = reconstruct(table, opts.grid_n, problem.interval)
    report.solution = f
    try:
        report.residual_gamma = verify.residual_on_gamma(f, problem, opts.residual_grid_n, samples=table)
        report.residual_square = verify.residual_on_square(f, problem, opts.residual_grid_n, samples=table)
    except EvalError as exc:
        report.messages.append(f"residual scan failed: {exc}")
    else:
        report.overdetermined = verify.is_overdetermined(
            report.residual_gamma, report.residual_square, problem.value_scale
        )
        if report.overdetermined:
            report.messages.append(verify.OVERDETERMINED_FLAG)
    if table.identity_budget_exceeded:
        report.messages.append(f"identity defect {table.identity_defect:.3g} exceeds heuristic rounding budget")
    report.status = "solved"
    return report
