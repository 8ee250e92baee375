import json

import numpy as np
import pytest

from funceq import cli
from funceq.problem import TabulatedFunction
from funceq.problemfile import ProblemFileError, corpus_names, dumps, load_corpus, loads

JENSEN_TEXT = """[problem]
name = jensen-half
F = 0.5*x + 0.5*y
H = 0.5*u + 0.5*v
a = 0.0
b = 1.0
A = 0.0
B = 1.0
"""


@pytest.fixture
def probs(tmp_path):
    d = tmp_path / "probs"
    for name in corpus_names():
        assert cli.main(["corpus", name, "--out", str(d)]) == 0
    return d


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# -- load_problem -------------------------------------------------------------


def test_load_problem_bit_exact_example(tmp_path):
    path = tmp_path / "jensen.prob"
    path.write_text(JENSEN_TEXT, encoding="utf-8")
    p, cfg, closed = cli.load_problem(str(path))
    assert (p.a, p.b, p.A, p.B, p.name) == (0.0, 1.0, 0.0, 1.0, "jensen-half")
    assert closed is None
    assert cfg.epsilon == 1e-3 and cfg.grid_n == 1000 and cfg.max_nodes == 200_000
    assert cfg.delta_dup == 1e-9 and cfg.tol_val == 1e-7


def test_load_problem_missing_key_names_key_and_file(tmp_path):
    path = tmp_path / "noH.prob"
    path.write_text(JENSEN_TEXT.replace("H = 0.5*u + 0.5*v\n", ""), encoding="utf-8")
    with pytest.raises(ProblemFileError) as err:
        cli.load_problem(str(path))
    assert "'H'" in str(err.value) or '"H"' in str(err.value)
    assert "noH.prob" in str(err.value)


def test_load_problem_rejects_reversed_interval(tmp_path):
    path = tmp_path / "rev.prob"
    path.write_text(JENSEN_TEXT.replace("a = 0.0", "a = 1").replace("b = 1.0", "b = 0"), encoding="utf-8")
    with pytest.raises(ProblemFileError, match="a < b required"):
        cli.load_problem(str(path))


def test_load_problem_bad_number_has_line(tmp_path):
    path = tmp_path / "bad.prob"
    path.write_text(JENSEN_TEXT.replace("A = 0.0", "A = zero"), encoding="utf-8")
    with pytest.raises(ProblemFileError) as err:
        cli.load_problem(str(path))
    assert err.value.line == 7


def test_flags_override_file_options(tmp_path, probs):
    args = cli.build_parser().parse_args(["solve", str(probs / "jensen.prob"), "--epsilon", "0.01", "--grid-n", "50"])
    _, cfg, _ = cli.load_problem(args.path, args)
    assert cfg.epsilon == 0.01 and cfg.grid_n == 50 and cfg.delta_dup == 0.01 * 1e-6


def test_invalid_run_config(capsys, probs):
    code, _, err = run(capsys, "solve", probs / "jensen.prob", "--epsilon", "1e-3", "--delta-dup", "1e-2")
    assert code == 1 and "delta_dup" in err


@pytest.mark.parametrize("name", ["jensen", "weighted-jensen", "logmean", "perturbed", "min-slice", "quadratic", "perturbed-gamma"])
def test_corpus_round_trip(name):
    pf = load_corpus(name)
    again = loads(dumps(pf))
    assert again == pf


# -- check --------------------------------------------------------------------


def test_check_exit_codes(capsys, probs, tmp_path):
    assert run(capsys, "check", probs / "jensen.prob")[0] == 0
    code, out, _ = run(capsys, "check", probs / "min-slice.prob", "--format", "json")
    assert code == 2
    assert json.loads(out)["hypotheses"]["slice_contraction"]["ok"] is False
    code, _, err = run(capsys, "check", tmp_path / "nope.prob")
    assert code == 1 and "nope.prob" in err


def test_check_range_violation_is_hypothesis_failure(capsys, tmp_path):
    path = tmp_path / "sum.prob"
    path.write_text(JENSEN_TEXT.replace("F = 0.5*x + 0.5*y", "F = x + y"), encoding="utf-8")
    assert run(capsys, "check", path)[0] == 2


# -- solve --------------------------------------------------------------------


def test_solve_jensen_writes_outputs(capsys, probs, tmp_path):
    out = tmp_path / "out"
    code, _, _ = run(capsys, "solve", probs / "jensen.prob", "--out", out)
    assert code == 0
    lines = (out / "jensen-half.solution.csv").read_text().splitlines()
    assert lines[0] == "z,f" and len(lines) == 1 + 1001
    f = TabulatedFunction.from_csv((out / "jensen-half.solution.csv").read_text())
    assert np.max(np.abs(f.values - f.grid)) <= 1e-9
    report = json.loads((out / "jensen-half.report.json").read_text())
    assert report["status"] == "solved"
    assert report["closed_form"]["sup_err"] <= 1e-9


def test_solve_exit_codes(capsys, probs, tmp_path):
    assert run(capsys, "solve", probs / "min-slice.prob", "--out", tmp_path)[0] == 2
    assert run(capsys, "solve", probs / "jensen.prob", "--max-nodes", "10", "--out", tmp_path)[0] == 3
    # x*y at (b, b) forces f(1) = f(1) + 1, so propagation finds a conflict
    assert run(capsys, "solve", probs / "perturbed.prob", "--out", tmp_path)[0] == 4


def test_solve_overdetermined_flag_in_report(capsys, probs, tmp_path):
    code, _, _ = run(capsys, "solve", probs / "perturbed-gamma.prob", "--out", tmp_path)
    assert code == 0
    report = json.loads((tmp_path / "perturbed-gamma.report.json").read_text())
    assert report["overdetermined"] is True
    assert report["residual_square"]["sup"] >= 0.1


def test_solve_byte_identical(capsys, probs, tmp_path):
    for d in ("r1", "r2"):
        assert run(capsys, "solve", probs / "logmean.prob", "--out", tmp_path / d)[0] == 0
    for suffix in ("solution.csv", "report.json"):
        a = (tmp_path / "r1" / f"logmean.{suffix}").read_bytes()
        b = (tmp_path / "r2" / f"logmean.{suffix}").read_bytes()
        assert a == b


def test_solve_output_formats(capsys, probs, tmp_path):
    _, out, _ = run(capsys, "solve", probs / "jensen.prob", "--out", tmp_path, "--format", "json")
    assert json.loads(out)["status"] == "solved"
    _, out, _ = run(capsys, "solve", probs / "jensen.prob", "--out", tmp_path, "--format", "csv")
    assert out.startswith("key,value\n") and "\nstatus,solved\n" in out


# -- verify -------------------------------------------------------------------


def test_verify_solution_against_closed_form(capsys, probs, tmp_path):
    run(capsys, "solve", probs / "jensen.prob", "--out", tmp_path)
    code, out, _ = run(capsys, "verify", probs / "jensen.prob", "--solution",
                       tmp_path / "jensen-half.solution.csv", "--closed-form", "z", "--format", "json")
    d = json.loads(out)
    assert code == 0 and d["closed_form"]["sup_err"] <= 1e-9
    assert d["gamma"]["sup"] <= d["square"]["sup"] + 1e-15


def test_verify_constant_zero_is_boundary_mismatch(capsys, probs, tmp_path):
    sol = tmp_path / "zero.csv"
    z = np.linspace(0, 1, 11)
    sol.write_text(TabulatedFunction(z, np.zeros_like(z)).to_csv())
    code, out, _ = run(capsys, "verify", probs / "jensen.prob", "--solution", sol, "--format", "json")
    assert code == 5 and json.loads(out)["boundary"]["mismatch_b"] == 1.0


def test_verify_malformed_csv(capsys, probs, tmp_path):
    sol = tmp_path / "bad.csv"
    sol.write_text("z,f\n0,0\n0.5,oops\n1,1\n")
    code, _, err = run(capsys, "verify", probs / "jensen.prob", "--solution", sol)
    assert code == 1 and "line 3" in err


def test_verify_closed_form_is_exact(capsys, probs):
    for name, g in (("quadratic", "z^2"), ("logmean", "z"), ("weighted-jensen", "2 + 3*z")):
        code, out, _ = run(capsys, "verify", probs / f"{name}.prob", "--closed-form", g, "--format", "json")
        d = json.loads(out)
        assert code == 0
        assert d["gamma"]["sup"] <= 1e-12 and d["square"]["sup"] <= 1e-12


def test_verify_residual_threshold(capsys, probs):
    # f = 0 on the perturbed problem: the x*y term is the whole residual
    code, out, _ = run(capsys, "verify", probs / "perturbed.prob", "--closed-form", "0", "--format", "json")
    assert code == 6 and json.loads(out)["gamma"]["sup"] == 1.0
    code, _, _ = run(capsys, "verify", probs / "perturbed.prob", "--closed-form", "0", "--threshold", "2")
    assert code == 0


def test_verify_needs_a_candidate(capsys, probs):
    assert run(capsys, "verify", probs / "jensen.prob")[0] == 1


# -- orbit --------------------------------------------------------------------


def test_orbit_dyadics(capsys, probs, tmp_path):
    code, _, _ = run(capsys, "orbit", probs / "jensen.prob", "--seed", 0, "--epsilon", 1 / 16, "--out", tmp_path)
    assert code == 0
    lines = (tmp_path / "jensen-half.orbit.csv").read_text().splitlines()
    assert lines[0] == "point,depth,word"
    assert [float(r.split(",")[0]) for r in lines[1:]] == [j / 16 for j in range(16)]
    cert = json.loads((tmp_path / "jensen-half.certificate.json").read_text())
    assert cert["certificate"]["achieved_gap"] == 1 / 16 and cert["complete"]


def test_orbit_seed_outside(capsys, probs, tmp_path):
    code, _, err = run(capsys, "orbit", probs / "jensen.prob", "--seed", 1.5, "--out", tmp_path)
    assert code == 1 and "outside" in err


def test_orbit_large_epsilon_single_row(capsys, probs, tmp_path):
    code, _, _ = run(capsys, "orbit", probs / "jensen.prob", "--seed", 0.3, "--epsilon", 2, "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "jensen-half.orbit.csv").read_text() == "point,depth,word\n0.29999999999999999,0,\n"


def test_orbit_budget(capsys, probs, tmp_path):
    code, _, _ = run(capsys, "orbit", probs / "jensen.prob", "--max-nodes", 5, "--out", tmp_path)
    assert code == 3
    assert len((tmp_path / "jensen-half.orbit.csv").read_text().splitlines()) == 6


# -- corpus -------------------------------------------------------------------


def test_corpus_listing(capsys):
    code, out, _ = run(capsys, "corpus")
    assert code == 0
    assert {f"{n}.prob" for n in ("jensen", "weighted-jensen", "logmean", "perturbed", "min-slice")} <= set(out.split())


def test_corpus_unknown(capsys):
    assert run(capsys, "corpus", "nope")[0] == 1
