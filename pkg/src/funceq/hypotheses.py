"""Grid checks of the standing assumptions on F.

Required for solving: F maps I x I into I, both boundary slices are strict
contractions, the slices reach the endpoints (``F(a, x0) = a`` and
``F(y0, b) = b``), and the two slice images cover I. Internality of F is
checked too but only as a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .dynsys import (
    DynSystem,
    Interval,
    contraction_modulus,
    image_hull,
    slice_maps,
)
from .exprdsl import EvalError, Expr, vectorize

if TYPE_CHECKING:
    from .solver import Problem

MAPS_INTO_TOL = 1e-12
CONTRACTION_MARGIN = 1e-6
TRISECTION_ROUNDS = 60


def _scan_square(F: Expr, I: Interval, grid_n: int):
    t = I.grid(grid_n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    try:
        Z = vectorize(F)(x=X, y=Y)
    except EvalError as exc:
        if exc.index is not None:
            i, j = np.unravel_index(exc.index, X.shape)
            raise type(exc)(f"{exc} at (x, y) = ({X[i, j]!r}, {Y[i, j]!r})", exc.index) from None
        raise
    return X, Y, Z


def check_maps_into(F: Expr, I: Interval, grid_n: int) -> tuple[bool, float]:
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    _, _, Z = _scan_square(F, I, grid_n)
    worst = float(max(0.0, np.max(Z - I.b), np.max(I.a - Z)))
    return worst <= MAPS_INTO_TOL, worst


def check_internality(F: Expr, I: Interval, grid_n: int) -> tuple[bool, float]:
    """Strict ``min(x,y) < F(x,y) < max(x,y)`` off the diagonal.

    ``worst`` is the largest amount by which F reaches or crosses either
    bound; an equality case (F touching min or max) fails with worst 0.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    X, Y, Z = _scan_square(F, I, grid_n)
    off = X != Y
    lo = np.minimum(X, Y)[off]
    hi = np.maximum(X, Y)[off]
    z = Z[off]
    violation = np.maximum(lo - z, z - hi)
    ok = bool(np.all(violation < 0))
    worst = float(max(0.0, np.max(violation)))
    return ok, worst


@dataclass(frozen=True)
class SliceContraction:
    c1: float
    c2: float
    ok: bool

    @property
    def marginal(self) -> bool:
        # estimate sits in the band [1 - margin, 1): neither clearly contracting nor clearly not
        return not self.ok and max(self.c1, self.c2) < 1.0


def check_slice_contraction(sys: DynSystem, epsilon: float, grid_n: int) -> SliceContraction:
    c1 = contraction_modulus(sys.delta1, sys.interval, epsilon, grid_n)
    c2 = contraction_modulus(sys.delta2, sys.interval, epsilon, grid_n)
    return SliceContraction(c1, c2, max(c1, c2) <= 1 - CONTRACTION_MARGIN)


def _refine_min(g, lo: float, hi: float, grid_n: int) -> float:
    """Grid argmin of ``g`` on [lo, hi], then trisection of the bracketing cell."""
    t = np.linspace(lo, hi, grid_n + 1)
    vals = np.asarray(g(t), dtype=float)
    k = int(np.argmin(vals))
    best_t, best_v = float(t[k]), float(vals[k])
    left, right = float(t[max(k - 1, 0)]), float(t[min(k + 1, grid_n)])
    for _ in range(TRISECTION_ROUNDS):
        m1 = left + (right - left) / 3
        m2 = right - (right - left) / 3
        g1, g2 = (float(v) for v in g(np.array([m1, m2])))
        if g1 < best_v:
            best_t, best_v = m1, g1
        if g2 < best_v:
            best_t, best_v = m2, g2
        if g1 <= g2:
            right = m2
        else:
            left = m1
    return best_t


@dataclass(frozen=True)
class Witnesses:
    x0: float
    r1: float
    y0: float
    r2: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.r1 <= self.tol and self.r2 <= self.tol


def find_witnesses(sys: DynSystem, grid_n: int, tol: float) -> Witnesses:
    """Approximate x0 with F(a, x0) = a and y0 with F(y0, b) = b."""
    if grid_n < 2 or tol <= 0:
        raise ValueError("need grid_n >= 2 and tol > 0")
    I = sys.interval
    g1 = lambda t: np.abs(sys.delta1(t) - I.a)
    g2 = lambda t: np.abs(I.b - sys.delta2(t))
    x0 = _refine_min(g1, I.a, I.b, grid_n)
    y0 = _refine_min(g2, I.a, I.b, grid_n)
    r1 = float(g1(np.array([x0]))[0])
    r2 = float(g2(np.array([y0]))[0])
    return Witnesses(x0, r1, y0, r2, tol)


def check_cover(sys: DynSystem, grid_n: int) -> tuple[bool, float]:
    """Total length of I left uncovered by the two slice-image hulls."""
    I = sys.interval
    hulls = sorted(image_hull(m, I, grid_n) for m in sys.maps())
    uncovered = 0.0
    reach = I.a
    for lo, hi in hulls:
        lo, hi = max(lo, I.a), min(hi, I.b)
        if lo > reach:
            uncovered += lo - reach
        reach = max(reach, hi)
    uncovered += max(0.0, I.b - reach)
    return uncovered <= I.diam * 1e-9, uncovered


@dataclass
class HypothesisReport:
    maps_into_ok: bool
    maps_into_worst: float
    internality_ok: bool | None
    internality_worst: float | None
    slice_contraction: SliceContraction | None
    witnesses: Witnesses | None
    cover_ok: bool | None
    cover_gap: float | None
    grid_n: int
    epsilon: float
    errors: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def preconditions_violated(self) -> bool:
        return not self.maps_into_ok

    @property
    def ok(self) -> bool:
        """All conditions required by the solver hold."""
        return (
            self.maps_into_ok
            and not self.errors
            and self.slice_contraction is not None
            and self.slice_contraction.ok
            and self.witnesses is not None
            and self.witnesses.ok
            and bool(self.cover_ok)
        )

    def failures(self) -> list[str]:
        out = []
        if not self.maps_into_ok:
            out.append(f"maps-into: F leaves I by {self.maps_into_worst:.6g}")
        sc = self.slice_contraction
        if sc is not None and not sc.ok:
            kind = "marginal contraction" if sc.marginal else "slice contraction"
            out.append(f"{kind}: c1={sc.c1:.12g}, c2={sc.c2:.12g}")
        w = self.witnesses
        if w is not None and not w.ok:
            out.append(f"witnesses: r1={w.r1:.6g}, r2={w.r2:.6g} exceed {w.tol:.3g}")
        if self.cover_ok is False:
            out.append(f"cover: uncovered length {self.cover_gap:.6g}")
        out.extend(self.errors)
        return out

    def to_dict(self) -> dict:
        sc, w = self.slice_contraction, self.witnesses
        return {
            "maps_into": {"ok": self.maps_into_ok, "worst": self.maps_into_worst},
            "internality": {"ok": self.internality_ok, "worst": self.internality_worst},
            "slice_contraction": None if sc is None else {"c1": sc.c1, "c2": sc.c2, "ok": sc.ok},
            "witnesses": None if w is None else {"x0": w.x0, "r1": w.r1, "y0": w.y0, "r2": w.r2},
            "cover": {"ok": self.cover_ok, "gap": self.cover_gap},
            "grid_n": self.grid_n,
            "epsilon": self.epsilon,
            "preconditions_violated": self.preconditions_violated,
            "ok": self.ok,
            "errors": list(self.errors),
            "diagnostics": list(self.diagnostics),
        }


def run_all(problem: "Problem", *, grid_n: int = 400, epsilon: float | None = None, tol: float | None = None) -> HypothesisReport:
    """Run every check on ``problem.F``; evaluation errors are collected, not raised.

    ``epsilon`` is the pair-distance floor of the contraction estimate
    (default ``1e-3 * (b - a)``); ``tol`` the witness residual threshold
    (default ``1e-9 * (b - a)``).
    """
    I = problem.interval
    eps = 1e-3 * I.diam if epsilon is None else min(epsilon, I.diam)
    tol = 1e-9 * I.diam if tol is None else tol
    errors: list[str] = []
    diagnostics: list[str] = []

    try:
        maps_ok, maps_worst = check_maps_into(problem.F, I, grid_n)
    except EvalError as exc:
        return HypothesisReport(False, float("inf"), None, None, None, None, None, None, grid_n, eps, [f"maps-into: {exc}"])

    try:
        int_ok, int_worst = check_internality(problem.F, I, grid_n)
    except EvalError as exc:
        int_ok, int_worst = None, None
        diagnostics.append(f"internality: {exc}")

    # the slice system is built without the range gate so a maps-into
    # failure still yields the remaining diagnostics
    d1, d2 = slice_maps(problem.F, I)
    sys = DynSystem(I, d1, d2, problem.F)
    sc = w = None
    cov_ok = cov_gap = None
    try:
        sc = check_slice_contraction(sys, eps, grid_n)
        w = find_witnesses(sys, grid_n, tol)
        cov_ok, cov_gap = check_cover(sys, grid_n)
    except EvalError as exc:
        errors.append(f"slices: {exc}")
    return HypothesisReport(maps_ok, maps_worst, int_ok, int_worst, sc, w, cov_ok, cov_gap, grid_n, eps, errors, diagnostics)
