"""Residual scans on the boundary set and on the full square, closed-form comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exprdsl import EvalError, Expr, vectorize
from .problem import Problem, TabulatedFunction

OVERDETERMINED_FLAG = "overdetermined instance: gamma-solvable, square-unsolvable"
GAMMA_SMALL = 1e-6
RATIO_MIN = 1e3
SQUARE_LARGE = 1e-3


@dataclass(frozen=True)
class ResidualReport:
    domain: str  # "gamma" | "square"
    grid_n: int
    sup: float
    mean: float
    argmax: tuple[float, float]
    sup_at_samples: float | None = None

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "grid_n": self.grid_n,
            "sup": self.sup,
            "mean": self.mean,
            "argmax": list(self.argmax),
            "sup_at_samples": self.sup_at_samples,
        }


def _residuals(f, problem: Problem, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Fv, Hv = vectorize(problem.F), vectorize(problem.H)
    try:
        lhs = f(Fv(x=X, y=Y))
        rhs = Hv(u=f(X), v=f(Y), x=X, y=Y)
    except EvalError as exc:
        if exc.index is not None:
            i = exc.index
            raise type(exc)(f"{exc} at (x, y) = ({X.flat[i]!r}, {Y.flat[i]!r})", i) from None
        raise
    return np.abs(lhs - rhs)


def _gamma_points(problem: Problem, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = problem.a, problem.b
    X = np.concatenate([np.full(t.size, a), t])
    Y = np.concatenate([t, np.full(t.size, b)])
    return X, Y


def _report(domain, grid_n, r, X, Y, at_samples) -> ResidualReport:
    k = int(np.argmax(r))
    return ResidualReport(domain, grid_n, float(r.flat[k]), float(np.mean(r)),
                          (float(X.flat[k]), float(Y.flat[k])), at_samples)


def _sample_interpolant(samples):
    p, v = samples.points, samples.values
    return lambda z: np.interp(z, p, v)


def _sample_axis(samples, grid_n: int) -> np.ndarray:
    n = len(samples)
    idx = np.unique(np.linspace(0, n - 1, min(n, grid_n + 1)).round().astype(int))
    return samples.points[idx]


def residual_on_gamma(f: TabulatedFunction, problem: Problem, grid_n: int, *, samples=None) -> ResidualReport:
    """sup of |f(F(x,y)) - H(f(x), f(y), x, y)| over {a} x T and T x {b}, T a uniform grid.

    With ``samples`` the residual is also measured at sample points with f
    interpolated from the samples themselves (``sup_at_samples``), which
    removes the grid interpolation error.
    """
    X, Y = _gamma_points(problem, problem.interval.grid(grid_n))
    r = _residuals(f, problem, X, Y)
    at = None
    if samples is not None:
        Xs, Ys = _gamma_points(problem, samples.points)
        at = float(np.max(_residuals(_sample_interpolant(samples), problem, Xs, Ys)))
    return _report("gamma", grid_n, r, X, Y, at)


def residual_on_square(f: TabulatedFunction, problem: Problem, grid_n: int, *, samples=None, block: int = 256) -> ResidualReport:
    """Same residual over the full (grid_n + 1)^2 grid; Gamma's grid points are a subset."""
    t = problem.interval.grid(grid_n)
    sup, total, arg = -1.0, 0.0, (t[0], t[0])
    for lo in range(0, t.size, block):
        X, Y = np.meshgrid(t[lo : lo + block], t, indexing="ij")
        r = _residuals(f, problem, X, Y)
        k = int(np.argmax(r))
        if r.flat[k] > sup:
            sup, arg = float(r.flat[k]), (float(X.flat[k]), float(Y.flat[k]))
        total += float(np.sum(r))
    at = None
    if samples is not None:
        s = _sample_axis(samples, grid_n)
        Xs, Ys = np.meshgrid(s, s, indexing="ij")
        at = float(np.max(_residuals(_sample_interpolant(samples), problem, Xs, Ys)))
    return ResidualReport("square", grid_n, sup, total / t.size**2, arg, at)


def is_overdetermined(gamma: ResidualReport, square: ResidualReport, value_scale: float = 1.0) -> bool:
    """Gamma residual small while the square residual is large, both absolutely and relatively."""
    if gamma.sup > GAMMA_SMALL * value_scale:
        return False
    if square.sup < SQUARE_LARGE * value_scale:
        return False
    return gamma.sup == 0 or square.sup / gamma.sup >= RATIO_MIN


def boundary_mismatch(f: TabulatedFunction, problem: Problem) -> tuple[float, float]:
    return abs(float(f(problem.a)) - problem.A), abs(float(f(problem.b)) - problem.B)


def compare_closed_form(f: TabulatedFunction, g: Expr) -> tuple[float, float]:
    """sup over f's grid of |f(z) - g(z)| and where it is attained."""
    gv = vectorize(g)(z=f.grid)
    err = np.abs(f.values - gv)
    k = int(np.argmax(err))
    return float(err[k]), float(f.grid[k])


def cross_validate(problem: Problem, options=None) -> float:
    """Solve with map-1-first and map-2-first frontier orders; sup grid difference.

    Raises ValueError when either run cannot produce a solution.
    """
    from dataclasses import replace

    from .solver import SolveOptions, solve

    opts = options or SolveOptions()
    first = solve(problem, replace(opts, order=(1, 2)))
    second = solve(problem, replace(opts, order=(2, 1)))
    for rep in (first, second):
        if rep.solution is None:
            raise ValueError(f"cannot cross-validate: run ended with status {rep.status}")
    return float(np.max(np.abs(first.solution.values - second.solution.values)))
