import pytest
from hypothesis import given, settings, strategies as st

from randgen import random_program, rng
from secwit.fixtures import FOLDING, PEELING, load_fixture
from secwit.secir import (
    Config, Event, SecIRError, attack_model, binop, enumerate_lassos, format_program, initial_config,
    parse_program, step, trace_of, with_domain,
)


def test_folding_roundtrip_is_canonical():
    p = parse_program(FOLDING)
    text = format_program(p)
    assert text == ("program folding domain 4\nvar x\nvar y\nvar z\nL1: x := input(secret)\n"
                    "L2: y := 42\nL3: z := y - 41\nL4: x := x * (z - 1)\n")
    assert parse_program(text) == p


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_programs_roundtrip(seed):
    p = random_program(rng(seed), n=5)
    assert parse_program(format_program(p)) == p


@pytest.mark.parametrize("op,expected", [
    ("+", 1), ("-", 1), ("*", 2), ("/", 1), ("%", 1),
    ("<", 0), ("==", 0), ("!=", 1), ("&&", 1), ("||", 1),
])
def test_binop_is_modular(op, expected):
    assert binop(op, 3, 2, 4) == expected


def test_division_by_zero_is_zero():
    assert binop("/", 3, 0, 4) == 0
    assert binop("%", 3, 0, 4) == 0


def test_constants_wrap_modulo_domain():
    # y := 42 and z := y - 41 at D=4 give y=2 and z=1, as the folding witness assumes
    words = [str(trace_of(x)) for x in enumerate_lassos(parse_program(FOLDING), attack_model("io+final_memory"))]
    assert words == [f"in(secret,{v}) eps eps eps fin(x=0,y=2,z=1) (bot)^w" for v in range(4)]


def test_input_step_branches_over_domain():
    p = parse_program(FOLDING)
    c = initial_config(p)
    assert c == Config("L1", (0, 0, 0))
    succ = step(p, attack_model("io"), c)
    assert [e for e, _ in succ] == [Event("input", "secret", v) for v in range(4)]
    assert [c2 for _, c2 in succ] == [Config("L2", (v, 0, 0)) for v in range(4)]


@pytest.mark.parametrize("spec,flags", [
    ("io", (True, False, False, False)),
    ("io+mem", (True, True, False, False)),
    ("io+branch", (True, False, True, False)),
    ("io+final_memory", (True, False, False, True)),
    ("ct", (True, True, True, False)),
])
def test_attack_models(spec, flags):
    m = attack_model(spec)
    assert (m.io, m.mem_access_indices, m.branch_conditions, m.final_memory) == flags


def test_mem_model_exposes_indices():
    fx = load_fixture("common_branch_factorization")
    words = {str(trace_of(x)) for x in enumerate_lassos(fx.source, attack_model("io+mem"))}
    assert any("mem(arr,1)" in w for w in words)
    plain = {str(trace_of(x)) for x in enumerate_lassos(fx.source, attack_model("io"))}
    assert not any("mem(" in w for w in plain)


def test_lasso_stats_report_saturation():
    stats = {}
    lassos = enumerate_lassos(parse_program(PEELING), attack_model("io"), stats=stats)
    assert len(lassos) == 2
    assert stats == {"truncated": 0, "dropped": 0}
    loop = parse_program("program l domain 2\nvar x\nL1: x := x + 1\nL2: output(public, x)\nL3: goto L1\n")
    stats = {}
    enumerate_lassos(loop, attack_model("io"), stem_max=2, loop_max=2, stats=stats)
    assert stats["truncated"] + stats["dropped"] > 0


def test_with_domain_changes_value_range():
    p = with_domain(parse_program(FOLDING), 2)
    assert p.domain == 2
    assert len(step(p, attack_model("io"), initial_config(p))) == 2


@pytest.mark.parametrize("text,msg", [
    ("program a domain 2\nvar x\nL1: x := y\n", "line 3, col 1: undeclared variable 'y'"),
    ("program a domain 2\nvar x\nL1: goto L9\n", "line 3, col 1: undefined label 'L9'"),
    ("program a\n", "line 1, col 10: expected 'domain', found None"),
    ("program a domain 2\nvar x\nL1: goto End\nL2: x := 1\n", "unreachable label 'L2'"),
])
def test_parse_errors_carry_positions(text, msg):
    with pytest.raises(SecIRError, match=msg):
        parse_program(text)
