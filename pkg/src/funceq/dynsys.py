"""Orbit machinery for the two-map system (I, delta1, delta2).

``delta1(t) = F(a, t)`` and ``delta2(t) = F(t, b)`` are the boundary slices of F.
When both are strict contractions and their images cover I, every orbit is
dense, so breadth-first expansion of an orbit eventually yields an
epsilon-net of I.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exprdsl import Expr, EvalError, vectorize

Map = Callable[[np.ndarray], np.ndarray]

TOL_BOX = 1e-12
RANGE_CHECK_N = 10_000


class RangeViolation(ValueError):
    """F does not map the boundary slices of I x I into I."""


class NotContractingError(ValueError):
    pass


class IncompleteNetError(RuntimeError):
    """Node budget ran out before the orbit formed an epsilon-net."""

    def __init__(self, message: str, achieved_gap: float, table=None):
        self.achieved_gap = achieved_gap
        self.table = table
        super().__init__(f"{message}; achieved gap {achieved_gap:.6g}")


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("interval endpoints must be finite")
        if not self.a < self.b:
            raise ValueError(f"a < b required, got a={self.a!r}, b={self.b!r}")

    @property
    def diam(self) -> float:
        return self.b - self.a

    def grid(self, n: int) -> np.ndarray:
        """Uniform grid of ``n + 1`` points with exact endpoints."""
        return np.linspace(self.a, self.b, n + 1)

    def contains(self, t: float, tol: float = 0.0) -> bool:
        return self.a - tol <= t <= self.b + tol


@dataclass(frozen=True)
class DynSystem:
    interval: Interval
    delta1: Map
    delta2: Map
    F: Expr | None = None

    def maps(self) -> tuple[Map, Map]:
        return self.delta1, self.delta2


def slice_maps(F: Expr, interval: Interval) -> tuple[Map, Map]:
    f = vectorize(F)
    a, b = interval.a, interval.b

    def delta1(t):
        return f(x=a, y=t)

    def delta2(t):
        return f(x=t, y=b)

    return delta1, delta2


def make_system(F: Expr, interval: Interval, *, tol_box: float = TOL_BOX) -> DynSystem:
    """Build the slice system of F, rejecting F whose slices leave I."""
    delta1, delta2 = slice_maps(F, interval)
    t = interval.grid(RANGE_CHECK_N)
    for name, g in (("delta1", delta1), ("delta2", delta2)):
        try:
            vals = g(t)
        except EvalError as exc:
            where = "" if exc.index is None else f" at t={t[exc.index]!r}"
            raise type(exc)(f"{name}{where}: {exc}", exc.index) from None
        over = np.maximum(vals - interval.b, interval.a - vals)
        k = int(np.argmax(over))
        if over[k] > tol_box:
            raise RangeViolation(
                f"{name}({t[k]!r}) = {vals[k]!r} lies outside [{interval.a}, {interval.b}]"
            )
    return DynSystem(interval, delta1, delta2, F)


def contraction_modulus(
    fmap: Map, interval: Interval, epsilon: float, grid_n: int, *, block: int = 512
) -> float:
    """Largest difference quotient of ``fmap`` over grid pairs at distance >= epsilon.

    A grid estimate, hence a lower bound, of the true modulus.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    if epsilon > interval.diam:
        raise ValueError(f"no admissible pair: epsilon {epsilon} exceeds diam {interval.diam}")
    x = interval.grid(grid_n)
    y = np.asarray(fmap(x), dtype=float)
    best = 0.0
    for lo in range(0, x.size, block):
        xi = x[lo : lo + block, None]
        yi = y[lo : lo + block, None]
        dx = x[None, :] - xi
        ok = dx >= epsilon
        if not np.any(ok):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.abs(y[None, :] - yi) / dx
        best = max(best, float(np.max(q, where=ok, initial=0.0)))
    return best


def mixing_depth(c_eps: float, diam: float, epsilon: float) -> int:
    """Smallest n >= 0 with ``c_eps**n * diam < epsilon``."""
    if not 0 < c_eps < 1:
        raise NotContractingError(f"modulus {c_eps!r} is not in (0, 1)")
    if diam <= 0 or epsilon <= 0:
        raise ValueError("diam and epsilon must be positive")
    n = 0
    while not c_eps**n * diam < epsilon:
        n += 1
    return n


def epsilon_net_check(points: Sequence[float], interval: Interval, epsilon: float) -> tuple[bool, float]:
    """Largest gap between sorted ``points`` including both boundary gaps."""
    p = np.asarray(points, dtype=float)
    gap = _largest_gap(p, interval)
    return bool(gap <= epsilon), gap


def _largest_gap(sorted_points: np.ndarray, interval: Interval) -> float:
    if sorted_points.size == 0:
        return interval.diam
    gaps = [sorted_points[0] - interval.a, interval.b - sorted_points[-1]]
    if sorted_points.size > 1:
        gaps.append(float(np.max(np.diff(sorted_points))))
    return float(max(gaps))


def image_hull(fmap: Map, interval: Interval, grid_n: int) -> tuple[float, float]:
    """(min, max) of ``fmap`` over a uniform grid on ``interval``."""
    if grid_n < 2:
        raise ValueError("grid_n must be at least 2")
    y = np.asarray(fmap(interval.grid(grid_n)), dtype=float)
    return float(np.min(y)), float(np.max(y))


# ---------------------------------------------------------------------------
# Orbit expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitNode:
    point: float
    word: str  # over "12", maps applied left to right starting from the seed

    @property
    def depth(self) -> int:
        return len(self.word)


@dataclass
class Expansion:
    """Raw result of a breadth-first expansion, in insertion order."""

    points: np.ndarray
    words: list[str]
    parents: np.ndarray
    values: np.ndarray | None
    conflicts: list[tuple[float, float, float, float]]
    gap: float
    complete: bool
    levels: int

    def sorted_order(self) -> np.ndarray:
        return np.argsort(self.points, kind="stable")


@dataclass(frozen=True)
class OrbitTable:
    seed: float
    nodes: tuple[OrbitNode, ...]
    delta_dup: float
    achieved_gap: float = field(default=float("nan"), compare=False)

    @property
    def points(self) -> np.ndarray:
        return np.array([n.point for n in self.nodes])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["point", "depth", "word"])
        for n in self.nodes:
            w.writerow([format_real(n.point), n.depth, n.word])
        return buf.getvalue()


def format_real(v: float) -> str:
    return f"{v:.17g}"


def expand(
    maps: tuple[Map, Map],
    interval: Interval,
    seeds: Sequence[float],
    epsilon: float,
    max_nodes: int,
    delta_dup: float,
    *,
    seed_values: Sequence[float] | None = None,
    child_values: tuple[Callable, Callable] | None = None,
    tol_val: float = 0.0,
    order: tuple[int, int] = (1, 2),
    tol_box: float = TOL_BOX,
) -> Expansion:
    """Breadth-first expansion of the orbit of ``seeds`` under two maps.

    Level m holds the images of level m-1's new points, taken in the order
    ``order`` (all children under the first map, then all under the second)
    and, within a map, by ascending parent point. A child within
    ``delta_dup`` of an existing point is dropped; when values are carried
    its value is compared with the incumbent and differences above
    ``tol_val`` are logged as conflicts. Expansion stops as soon as the
    largest gap is <= epsilon, possibly partway through a level, or when
    ``max_nodes`` points exist.
    """
    if not epsilon > delta_dup > 0:
        raise ValueError("need epsilon > delta_dup > 0")
    carry = child_values is not None
    pts = [float(s) for s in seeds]
    for s in pts:
        if not interval.contains(s):
            raise ValueError(f"seed {s!r} lies outside [{interval.a}, {interval.b}]")
    words = ["" for _ in pts]
    parents = [-1 for _ in pts]
    vals = [float(v) for v in seed_values] if carry else []
    conflicts: list[tuple[float, float, float, float]] = []

    # dedupe the seeds themselves, first one wins
    keep: list[int] = []
    for i, s in enumerate(pts):
        if all(abs(s - pts[j]) > delta_dup for j in keep):
            keep.append(i)
    pts = [pts[i] for i in keep]
    words = [words[i] for i in keep]
    parents = [parents[i] for i in keep]
    if carry:
        vals = [vals[i] for i in keep]

    all_pts = np.array(pts)
    all_vals = np.array(vals) if carry else None
    sorted_idx = np.argsort(all_pts, kind="stable")
    sorted_pts = all_pts[sorted_idx]
    gap = _largest_gap(sorted_pts, interval)
    frontier = sorted_idx.copy()
    levels = 0
    budget_hit = all_pts.size >= max_nodes

    while gap > epsilon and frontier.size and not budget_hit:
        levels += 1
        fz = all_pts[frontier]
        c_pt, c_val, c_par, c_map = [], [], [], []
        for which in order:
            fmap = maps[which - 1]
            cp = np.asarray(fmap(fz), dtype=float)
            if cp.shape != fz.shape:
                cp = np.broadcast_to(cp, fz.shape).copy()
            c_pt.append(cp)
            c_par.append(frontier)
            c_map.append(np.full(frontier.size, which))
            if carry:
                c_val.append(np.asarray(child_values[which - 1](fz, all_vals[frontier]), dtype=float))
        cand = np.concatenate(c_pt)
        par = np.concatenate(c_par)
        cmap = np.concatenate(c_map)
        cval = np.concatenate(c_val) if carry else None

        out = (cand < interval.a - tol_box) | (cand > interval.b + tol_box)
        if np.any(out):
            k = int(np.flatnonzero(out)[0])
            raise RangeViolation(
                f"orbit point {cand[k]!r} (word {words[par[k]] + str(cmap[k])}) left the interval"
            )
        cand = np.clip(cand, interval.a, interval.b)

        accepted, dup_of = _dedupe(cand, sorted_pts, delta_dup)
        # dup_of >= 0: index into sorted_pts; dup_of <= -2: -(k+2) with k a candidate index
        room = max_nodes - all_pts.size
        n_take = accepted.size
        stop_at = cand.size  # candidates with index < stop_at are processed

        full_gap = _largest_gap(np.sort(np.concatenate([sorted_pts, cand[accepted]])), interval)
        if full_gap <= epsilon or accepted.size > room:
            lo, hi = 0, min(accepted.size, room)
            if _prefix_gap(sorted_pts, cand, accepted, hi, interval) <= epsilon:
                while lo < hi:
                    mid = (lo + hi) // 2
                    if _prefix_gap(sorted_pts, cand, accepted, mid, interval) <= epsilon:
                        hi = mid
                    else:
                        lo = mid + 1
                n_take = lo
            else:
                n_take = hi
                budget_hit = True
            if n_take < accepted.size:
                stop_at = int(accepted[n_take])
        take = accepted[:n_take]

        if carry:
            dups = np.flatnonzero(dup_of[:stop_at] != -1)
            for k in dups:
                ref = int(dup_of[k])
                if ref >= 0:
                    incumbent = all_vals[sorted_idx[ref]]
                    where = sorted_pts[ref]
                else:
                    incumbent = cval[-ref - 2]
                    where = cand[-ref - 2]
                diff = abs(cval[k] - incumbent)
                if diff > tol_val:
                    conflicts.append((float(where), float(incumbent), float(cval[k]), float(diff)))

        new_ids = np.arange(all_pts.size, all_pts.size + take.size)
        all_pts = np.concatenate([all_pts, cand[take]])
        if carry:
            all_vals = np.concatenate([all_vals, cval[take]])
        for k in take:
            words.append(words[par[k]] + str(cmap[k]))
            parents.append(int(par[k]))
        sorted_idx = np.argsort(all_pts, kind="stable")
        sorted_pts = all_pts[sorted_idx]
        gap = _largest_gap(sorted_pts, interval)
        frontier = new_ids[np.argsort(cand[take], kind="stable")]
        if all_pts.size >= max_nodes:
            budget_hit = True

    return Expansion(
        points=all_pts,
        words=words,
        parents=np.array(parents),
        values=all_vals,
        conflicts=conflicts,
        gap=gap,
        complete=gap <= epsilon,
        levels=levels,
    )


def _prefix_gap(sorted_pts, cand, accepted, m, interval) -> float:
    return _largest_gap(np.sort(np.concatenate([sorted_pts, cand[accepted[:m]]])), interval)


def _dedupe(cand: np.ndarray, sorted_pts: np.ndarray, delta_dup: float) -> tuple[np.ndarray, np.ndarray]:
    """Split candidates into accepted ones and duplicates.

    Returns ``(accepted, dup_of)``: ``accepted`` lists candidate indices in
    priority (index) order; ``dup_of[k]`` is -1 for accepted candidates, the
    position in ``sorted_pts`` of the existing point a duplicate matched, or
    ``-(j + 2)`` if it matched accepted candidate ``j``.
    """
    n = cand.size
    dup_of = np.full(n, -1, dtype=np.int64)
    pos = np.searchsorted(sorted_pts, cand)
    left = np.clip(pos - 1, 0, sorted_pts.size - 1)
    right = np.clip(pos, 0, sorted_pts.size - 1)
    dl = np.abs(cand - sorted_pts[left])
    dr = np.abs(cand - sorted_pts[right])
    nearest = np.where(dl <= dr, left, right)
    near_existing = np.minimum(dl, dr) <= delta_dup
    dup_of[near_existing] = nearest[near_existing]

    free = np.flatnonzero(~near_existing)
    if free.size:
        o = free[np.argsort(cand[free], kind="stable")]
        close = np.diff(cand[o]) <= delta_dup
        # clusters of mutually chained candidates; singletons need no work
        starts = np.flatnonzero(np.concatenate([[True], ~close]))
        ends = np.concatenate([starts[1:], [o.size]])
        for s, e in zip(starts, ends):
            if e - s == 1:
                continue
            members = sorted(int(k) for k in o[s:e])
            kept: list[int] = []
            for k in members:
                hit = next((j for j in kept if abs(cand[k] - cand[j]) <= delta_dup), None)
                if hit is None:
                    kept.append(k)
                else:
                    dup_of[k] = -(hit + 2)
    accepted = np.flatnonzero(dup_of == -1)
    return accepted, dup_of


def orbit_expand(
    sys: DynSystem,
    seed: float,
    epsilon: float,
    max_nodes: int,
    delta_dup: float | None = None,
    *,
    order: tuple[int, int] = (1, 2),
) -> OrbitTable:
    """Expand the orbit of ``seed`` until it is an epsilon-net of the interval.

    Raises :class:`IncompleteNetError` (carrying the partial table) when the
    node budget runs out first.
    """
    if delta_dup is None:
        delta_dup = epsilon * 1e-6
    ex = expand(sys.maps(), sys.interval, [seed], epsilon, max_nodes, delta_dup, order=order)
    table = table_from_expansion(ex, seed, delta_dup)
    if not ex.complete:
        raise IncompleteNetError("orbit did not reach an epsilon-net", ex.gap, table)
    return table


def table_from_expansion(ex: Expansion, seed: float, delta_dup: float) -> OrbitTable:
    nodes = tuple(OrbitNode(float(ex.points[i]), ex.words[i]) for i in ex.sorted_order())
    return OrbitTable(seed, nodes, delta_dup, ex.gap)


@dataclass(frozen=True)
class DensityCertificate:
    epsilon: float
    c1: float
    c2: float
    c_eps: float
    depth_bound: int | None
    achieved_gap: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "c1": self.c1,
            "c2": self.c2,
            "c_eps": self.c_eps,
            "depth_bound": self.depth_bound,
            "achieved_gap": self.achieved_gap,
        }


def density_certificate(sys: DynSystem, epsilon: float, achieved_gap: float, grid_n: int = 1000) -> DensityCertificate:
    """Estimated moduli at scale epsilon plus the depth after which all words shrink I below epsilon."""
    diam = sys.interval.diam
    scale = min(epsilon, diam)
    c1 = contraction_modulus(sys.delta1, sys.interval, scale, grid_n)
    c2 = contraction_modulus(sys.delta2, sys.interval, scale, grid_n)
    c = max(c1, c2)
    try:
        n = mixing_depth(c, diam, epsilon)
    except NotContractingError:
        n = None
    return DensityCertificate(epsilon, c1, c2, c, n, achieved_gap)
