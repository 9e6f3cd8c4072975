from dataclasses import replace

import pytest

from secwit.fixtures import WITNESS_KINDS, load_fixture
from secwit.secir import parse_program
from secwit.optimizer import builtin_witness
from secwit.smt import (
    SkolemError, SmtError, emit_base_query, emit_inductive_query, emit_queries, find_solver, run_solver,
)

SOLVER = find_solver()
needs_solver = pytest.mark.skipif(SOLVER is None, reason="no SMT-LIB solver found")


@pytest.fixture(scope="module")
def folding():
    return load_fixture("constant_folding")


def _queries(fx, w=None, **kw):
    w = w or fx.witness
    args = (fx.automata(), fx.checked_source, fx.target, 2, w, fx.model)
    return emit_base_query(*args, **kw), emit_inductive_query(*args, **kw)


def test_output_is_deterministic(folding):
    assert _queries(folding) == _queries(folding)


def test_header_and_sorts(folding):
    base, ind = _queries(folding, case="folding", logic="ALL")
    lines = base.splitlines()
    assert lines[0] == "; base query for folding: unsat means the obligation holds"
    assert lines[1] == "(set-logic ALL)"
    assert "(declare-datatypes ((Loc 0)) (((loc_L1) (loc_L2) (loc_L3) (loc_L4) (loc_End) (loc_Done))))" in lines
    assert "(declare-sort AState 0)" in lines
    assert lines[-1] == "(check-sat)"
    assert "; Skolems: sigmaS := sigmaT, pS := pT, sPrime := tPrime" in ind.splitlines()


def test_values_are_range_constrained(folding):
    base, _ = _queries(folding)
    lines = base.splitlines()
    for cell in ("t1_x", "t2_z", "s1_y"):
        assert f"(assert (and (<= 0 {cell}) (< {cell} 4)))" in lines
    assert "(assert (= t1_loc loc_L1))" in lines


@pytest.mark.parametrize("skolem,msg", [
    ({}, "missing Skolem for sigmaS"),
    ({"sigmaS": "sigmaT", "pS": "qS", "sPrime": "tPrime"}, r"pS := qS is not supported \(choose from pT\)"),
    ({"sigmaS": "sigmaT", "pS": "pT", "sPrime": "sPrime"}, "references the existential sPrime"),
])
def test_skolem_errors(folding, skolem, msg):
    with pytest.raises(SkolemError, match=msg):
        _queries(folding, replace(folding.witness, skolem=skolem))


@pytest.mark.parametrize("name", [n for n in WITNESS_KINDS if n != "constant_folding"])
def test_witnesses_without_skolems_are_refused(name):
    with pytest.raises(SkolemError, match="missing Skolem"):
        _queries(load_fixture(name))


def test_emit_queries_writes_two_files(folding, tmp_path):
    paths = emit_queries(folding.automata(), folding.source, folding.target, 2, folding.witness,
                         folding.model, str(tmp_path), "folding")
    assert [p.rsplit("/", 1)[1] for p in paths] == ["folding.base.smt2", "folding.ind.smt2"]
    assert open(paths[0]).read() == _queries(folding, case="folding")[0]


def test_domain_mismatch(folding):
    other = parse_program("program o domain 2\nvar x, y, z\nL1: x := input(secret)\n")
    with pytest.raises(SmtError, match="share the value domain"):
        emit_base_query(folding.automata(), other, folding.target, 2, folding.witness, folding.model)


@needs_solver
@pytest.mark.parametrize("R,expected", [
    (None, ("unsat", "unsat")),
    ("qT = qS && t = s", ("unsat", "sat")),
    ("true", ("unsat", "sat")),
    ("false", ("sat", "unsat")),
])
def test_solver_verdicts(folding, R, expected):
    w = folding.witness if R is None else folding.witness.with_R(R)
    base, ind = _queries(folding, w)
    assert (run_solver(base, SOLVER), run_solver(ind, SOLVER)) == expected


@needs_solver
def test_identity_transformation_is_unsat():
    p = parse_program("program i domain 2\nvar x\nL1: x := input(secret)\nL2: output(public, x)\nL3: x := x + 1\n")
    fx = load_fixture("constant_folding")
    w, _ = builtin_witness("constant_folding", p, p)
    a = fx.automata()
    for q in (emit_base_query(a, p, p, 2, w, fx.model), emit_inductive_query(a, p, p, 2, w, fx.model)):
        assert run_solver(q, SOLVER) == "unsat"


def test_solver_lookup(monkeypatch):
    monkeypatch.delenv("SECWIT_SMT_SOLVER", raising=False)
    monkeypatch.setenv("PATH", "")
    assert find_solver() is None
    with pytest.raises(FileNotFoundError, match="no SMT solver"):
        run_solver("(check-sat)")
    monkeypatch.setenv("SECWIT_SMT_SOLVER", "/nonexistent/solver --flag")
    assert find_solver() == ["/nonexistent/solver", "--flag"]
