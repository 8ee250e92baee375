"""Line-oriented problem files.

::

    [problem]
    name = jensen-half
    F = 0.5*x + 0.5*y
    H = 0.5*u + 0.5*v
    a = 0.0
    b = 1.0
    A = 0.0
    B = 1.0

    [options]          # optional
    epsilon = 1e-3

    [oracle]           # optional
    closed_form = z

Keys are case sensitive (``a`` and ``A`` differ). ``#`` starts a comment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dynsys import Interval
from .exprdsl import F_VARS, H_VARS, Z_VARS, ExprError, parse, to_text
from .problem import Problem

REQUIRED = ("name", "F", "H", "a", "b", "A", "B")
OPTION_TYPES = {"epsilon": float, "grid_n": int, "max_nodes": int, "delta_dup": float, "tol_val": float}
SECTIONS = ("problem", "options", "oracle")


class ProblemFileError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path, self.line = path, line
        where = path or "<problem>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass
class ProblemFile:
    problem: Problem
    options: dict = field(default_factory=dict)
    closed_form: str | None = None


def _parse_sections(text: str, path: str | None) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ProblemFileError(f"malformed section header {raw.strip()!r}", path, lineno)
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ProblemFileError(f"unknown section [{current}]", path, lineno)
            if current in sections:
                raise ProblemFileError(f"duplicate section [{current}]", path, lineno)
            sections[current] = {}
            continue
        if current is None:
            raise ProblemFileError("key outside of any section", path, lineno)
        key, sep, value = line.partition("=")
        if not sep:
            raise ProblemFileError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key = key.strip()
        if key in sections[current]:
            raise ProblemFileError(f"duplicate key {key!r}", path, lineno)
        sections[current][key] = (value.strip(), lineno)
    return sections


def _number(value: str, key: str, lineno: int, path: str | None, kind=float):
    try:
        out = kind(value)
    except ValueError:
        raise ProblemFileError(f"invalid number for {key!r}: {value!r}", path, lineno) from None
    if not math.isfinite(out):
        raise ProblemFileError(f"{key!r} must be finite", path, lineno)
    return out


def loads(text: str, path: str | None = None) -> ProblemFile:
    sections = _parse_sections(text, path)
    if "problem" not in sections:
        raise ProblemFileError("missing [problem] section", path)
    sec = sections["problem"]
    for key in REQUIRED:
        if key not in sec:
            raise ProblemFileError(f"missing key {key!r}", path)
    unknown = set(sec) - set(REQUIRED)
    if unknown:
        key = sorted(unknown)[0]
        raise ProblemFileError(f"unknown key {key!r}", path, sec[key][1])
    nums = {k: _number(sec[k][0], k, sec[k][1], path) for k in ("a", "b", "A", "B")}
    try:
        interval = Interval(nums["a"], nums["b"])
    except ValueError:
        raise ProblemFileError("a < b required", path, sec["b"][1]) from None
    exprs = {}
    for key, variables in (("F", F_VARS), ("H", H_VARS)):
        src, lineno = sec[key]
        try:
            exprs[key] = parse(src, variables)
        except ExprError as exc:
            raise ProblemFileError(f"in {key}: {exc}", path, lineno) from None
    problem = Problem(interval, exprs["F"], exprs["H"], nums["A"], nums["B"], sec["name"][0])

    options = {}
    for key, (value, lineno) in sections.get("options", {}).items():
        if key not in OPTION_TYPES:
            raise ProblemFileError(f"unknown option {key!r}", path, lineno)
        options[key] = _number(value, key, lineno, path, OPTION_TYPES[key])

    closed_form = None
    oracle = sections.get("oracle", {})
    for key, (value, lineno) in oracle.items():
        if key != "closed_form":
            raise ProblemFileError(f"unknown oracle key {key!r}", path, lineno)
        try:
            parse(value, Z_VARS)
        except ExprError as exc:
            raise ProblemFileError(f"in closed_form: {exc}", path, lineno) from None
        closed_form = value
    return ProblemFile(problem, options, closed_form)


def load(path: str | Path) -> ProblemFile:
    p = Path(path)
    return loads(p.read_text(encoding="utf-8"), str(p))


def dumps(pf: ProblemFile) -> str:
    p = pf.problem
    lines = [
        "[problem]",
        f"name = {p.name}",
        f"F = {to_text(p.F)}",
        f"H = {to_text(p.H)}",
        f"a = {p.a!r}",
        f"b = {p.b!r}",
        f"A = {p.A!r}",
        f"B = {p.B!r}",
    ]
    if pf.options:
        lines += ["", "[options]"] + [f"{k} = {v!r}" for k, v in pf.options.items()]
    if pf.closed_form is not None:
        lines += ["", "[oracle]", f"closed_form = {pf.closed_form}"]
    return "\n".join(lines) + "\n"


def corpus_names() -> list[str]:
    root = resources.files("funceq") / "corpus"
    return sorted(e.name for e in root.iterdir() if e.name.endswith(".prob"))


def corpus_text(name: str) -> str:
    if not name.endswith(".prob"):
        name += ".prob"
    return (resources.files("funceq") / "corpus" / name).read_text(encoding="utf-8")


def load_corpus(name: str) -> ProblemFile:
    return loads(corpus_text(name), f"corpus:{name}")
