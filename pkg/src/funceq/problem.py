"""Problem instances and tabulated solutions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dynsys import Interval, format_real
from .exprdsl import F_VARS, H_VARS, Expr, parse, to_text, variables_of


@dataclass(frozen=True)
class Problem:
    """``f(F(x, y)) = H(f(x), f(y), x, y)`` on [a, b] with ``f(a) = A``, ``f(b) = B``."""

    interval: Interval
    F: Expr
    H: Expr
    A: float
    B: float
    name: str = ""

    def __post_init__(self):
        extra = variables_of(self.F) - F_VARS
        if extra:
            raise ValueError(f"F uses undeclared variable(s) {sorted(extra)}")
        extra = variables_of(self.H) - H_VARS
        if extra:
            raise ValueError(f"H uses undeclared variable(s) {sorted(extra)}")

    @classmethod
    def from_text(cls, F: str, H: str, a: float, b: float, A: float, B: float, name: str = "") -> "Problem":
        return cls(Interval(float(a), float(b)), parse(F, F_VARS), parse(H, H_VARS), float(A), float(B), name)

    @property
    def a(self) -> float:
        return self.interval.a

    @property
    def b(self) -> float:
        return self.interval.b

    @property
    def value_scale(self) -> float:
        return max(1.0, abs(self.A), abs(self.B))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "F": to_text(self.F),
            "H": to_text(self.H),
            "a": self.a,
            "b": self.b,
            "A": self.A,
            "B": self.B,
        }


@dataclass(frozen=True)
class TabulatedFunction:
    """Values on a uniform grid, extended by piecewise-linear interpolation."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.grid.shape != self.values.shape or self.grid.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @property
    def interval(self) -> Interval:
        return Interval(float(self.grid[0]), float(self.grid[-1]))

    def __call__(self, z):
        return np.interp(z, self.grid, self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["z", "f"])
        for z, v in zip(self.grid, self.values):
            w.writerow([format_real(z), format_real(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TabulatedFunction":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["z", "f"]:
            raise ValueError("solution CSV must start with header 'z,f'")
        zs, fs = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                zs.append(float(row[0]))
                fs.append(float(row[1]))
            except ValueError:
                raise ValueError(f"line {lineno}: not a number") from None
        return cls(np.array(zs), np.array(fs))
