"""Numerical solver and certifier for functional equations on an interval.

Solves ``f(F(x, y)) = H(f(x), f(y), x, y)`` with ``f(a) = A`` and ``f(b) = B``
by propagating the boundary data along the dense orbit of the endpoints under
the slice maps ``t -> F(a, t)`` and ``t -> F(t, b)``.
"""

__version__ = "0.1.0"
