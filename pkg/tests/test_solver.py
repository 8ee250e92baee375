from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funceq.dynsys import Interval
from funceq.problem import Problem, TabulatedFunction
from funceq.solver import SampleTable, SolveOptions, propagate, reconstruct, solve


def table_from(points, values, delta_dup=1e-12):
    p = np.asarray(points, dtype=float)
    return SampleTable(p, np.asarray(values, dtype=float), [""] * p.size, p.copy(),
                       np.full(p.size, -1), delta_dup, [], 0.0, True)


# -- propagate ----------------------------------------------------------------


def test_propagate_first_children(corpus):
    t = propagate(corpus("jensen"), 0.5, 100, 1e-9, 1e-9)
    assert t[int(np.searchsorted(t.points, 0.5))].value == 0.5
    t = propagate(corpus("jensen"), 0.25, 100, 1e-9, 1e-9)
    k = int(np.searchsorted(t.points, 0.25))
    assert t.points[k] == 0.25 and t.values[k] == 0.25


def test_propagate_jensen_dyadics(corpus):
    t = propagate(corpus("jensen"), 2**-4, 1000, 2**-30, 1e-12)
    # hand enumeration: words of length <= 4 from {0, 1} give every j/16
    assert [Fraction(p) for p in t.points] == [Fraction(j, 16) for j in range(17)]
    np.testing.assert_array_equal(t.values, t.points)
    assert t.conflicts == [] and t.complete
    assert t.identity_defect == 0.0


def test_propagate_perturbed_hand_values(corpus):
    t = propagate(corpus("perturbed"), 0.25, 100, 1e-9, 1e-7)
    by_point = dict(zip(t.points, t.values))
    # child2 of (0, 0): (1/2, 0/2 + 0/2 + 0*1) = (0.5, 0)
    assert by_point[0.5] == 0.0
    # child2 of (0.5, 0): (3/4, 0/2 + 0/2 + 0.5*1) = (0.75, 0.5)
    assert by_point[0.75] == 0.5
    # child1 of (0.5, 0): (1/4, 0/2 + 0/2 + 0*0.5) = (0.25, 0)
    assert by_point[0.25] == 0.0


def test_propagate_perturbed_conflicts_at_b(corpus):
    # at (b, b) the restricted equation reads f(1) = f(1)/2 + f(1)/2 + 1
    t = propagate(corpus("perturbed"), 0.25, 100, 1e-9, 1e-7)
    assert len(t.conflicts) == 1
    c = t.conflicts[0]
    assert (c.point, c.incumbent, c.challenger, c.diff) == (1.0, 0.0, 1.0, 1.0)


def test_propagate_endpoints_exact(corpus):
    t = propagate(corpus("weighted-jensen"), 1e-2, 10_000, 1e-9, 1e-7)
    assert t.points[0] == 0.0 and t.values[0] == 2.0
    assert t.points[-1] == 1.0 and t.values[-1] == 5.0


def test_propagate_budget(corpus):
    t = propagate(corpus("jensen"), 1e-3, 10, 1e-9, 1e-7)
    assert not t.complete and len(t) == 10 and t.gap > 1e-3


def test_propagate_seed_words(corpus):
    t = propagate(corpus("jensen"), 0.1, 100, 1e-9, 1e-7)
    assert t[0].word == "" and t[len(t) - 1].word == ""
    for k in range(len(t)):
        s = t[k]
        if s.word:
            assert t.words[t.parents[k]] == s.word[:-1]


# -- reconstruct --------------------------------------------------------------


def test_reconstruct_linear():
    f = reconstruct(table_from([0, 1], [0, 1]), 2)
    np.testing.assert_array_equal(f.values, [0, 0.5, 1])


def test_reconstruct_identity_on_dyadics():
    p = np.arange(1025) / 1024
    f = reconstruct(table_from(p, p), 1000)
    np.testing.assert_allclose(f.values, f.grid, rtol=0, atol=2e-16)
    f = reconstruct(table_from(p, p), 64)
    np.testing.assert_array_equal(f.values, f.grid)


def test_reconstruct_interpolation_error_bound():
    # f(z) = z^2, f'' = 2: error <= 2 * g^2 / 8
    rng = np.random.default_rng(7)
    p = np.unique(np.concatenate([[0, 1], rng.uniform(0, 1, 300)]))
    g = np.max(np.diff(p))
    f = reconstruct(table_from(p, p**2), 1000)
    err = np.max(np.abs(f.values - f.grid**2))
    assert 0 < err <= 2 * g**2 / 8


def test_reconstruct_passes_through_near_samples():
    p = np.array([0.0, 0.5 + 1e-13, 1.0])
    v = np.array([0.0, 7.0, 1.0])
    f = reconstruct(table_from(p, v, delta_dup=1e-12), 2)
    assert f.values[1] == 7.0


def test_reconstruct_requires_endpoints():
    with pytest.raises(ValueError):
        reconstruct(table_from([0.1, 1.0], [0, 1]), 4, Interval(0.0, 1.0))


# -- solve --------------------------------------------------------------------


def test_solve_jensen(corpus):
    rep = solve(corpus("jensen"), SolveOptions(epsilon=1e-3, grid_n=1000))
    assert rep.status == "solved"
    assert np.max(np.abs(rep.solution.values - rep.solution.grid)) <= 1e-9
    assert rep.solution.grid.size == 1001


def test_solve_weighted_jensen(corpus):
    rep = solve(corpus("weighted-jensen"))
    assert rep.status == "solved"
    z = rep.solution.grid
    assert np.max(np.abs(rep.solution.values - (2 + 3 * z))) <= 1e-8


def test_solve_min_slice(corpus):
    rep = solve(corpus("min-slice"))
    assert rep.status == "hypotheses-failed" and rep.solution is None


def test_solve_no_net(corpus):
    assert solve(corpus("jensen"), SolveOptions(max_nodes=10)).status == "no-net"


def test_solve_conflicts(corpus):
    rep = solve(corpus("perturbed"))
    assert rep.status == "conflicts" and rep.max_conflict == 1.0


def test_solve_endpoint_exactness(corpus):
    for name in ("jensen", "weighted-jensen", "logmean", "quadratic"):
        p = corpus(name)
        f = solve(p, SolveOptions(epsilon=1e-2 * p.interval.diam)).solution
        assert f.values[0] == p.A and f.values[-1] == p.B


def test_solve_seed_order_independence(corpus):
    for name in ("logmean", "quadratic"):
        p = corpus(name)
        r1 = solve(p, SolveOptions(seeds="ab"))
        r2 = solve(p, SolveOptions(seeds="ba"))
        assert np.max(np.abs(r1.solution.values - r2.solution.values)) <= r1.options.tol_val


def test_solve_deterministic(corpus):
    p = corpus("logmean")
    d1, d2 = solve(p).to_dict(), solve(p).to_dict()
    assert d1 == d2


def test_solve_quadratic_monotone_improvement(corpus):
    p = corpus("quadratic")
    errs = []
    for eps in (1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256):
        f = solve(p, SolveOptions(epsilon=eps, grid_n=1000)).solution
        errs.append(np.max(np.abs(f.values - f.grid**2)))
    assert all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))
    # piecewise-linear interpolation of z^2 at dyadic gap g errs by g^2/4 at most
    assert errs[-1] <= (1 / 256) ** 2 / 4


@settings(max_examples=15, deadline=None)
@given(
    alpha=st.floats(0.3, 0.7),
    A=st.floats(-100, 100),
    B=st.floats(-100, 100),
    a=st.floats(-3, 3),
    width=st.floats(0.5, 4),
)
def test_affine_recovery_property(alpha, A, B, a, width):
    beta = 1 - alpha
    p = Problem.from_text(f"{alpha!r}*x + {beta!r}*y", f"{alpha!r}*u + {beta!r}*v", a, a + width, A, B)
    eps = 1e-2 * width
    rep = solve(p, SolveOptions(epsilon=eps, grid_n=200))
    assert rep.status == "solved"
    z = rep.solution.grid
    exact = A + (B - A) * (z - a) / width
    bound = 10 * eps * abs(B - A) / width
    assert np.max(np.abs(rep.solution.values - exact)) <= max(bound, 1e-9 * p.value_scale)


def test_report_json_shape(corpus):
    d = solve(corpus("jensen")).to_dict()
    assert d["status"] == "solved"
    for key in ("hypotheses", "certificate", "sample_count", "max_conflict", "residual_gamma", "residual_square"):
        assert key in d
    assert d["certificate"]["depth_bound"] == 10


def test_tabulated_function_csv_round_trip():
    z = np.linspace(0, 1, 11)
    f = TabulatedFunction(z, np.sin(z) / 3)
    g = TabulatedFunction.from_csv(f.to_csv())
    np.testing.assert_array_equal(f.grid, g.grid)
    np.testing.assert_array_equal(f.values, g.values)
