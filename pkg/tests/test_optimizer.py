import pytest

from secwit.fixtures import DEAD_STORE, FOLDING, PEELING, SWITCHING, WITNESS_KINDS, load_fixture
from secwit.optimizer import (
    TransformError, apply_transform, builtin_witness, constant_facts, switch_instructions,
)
from secwit.props import Property, negated_constant_time
from secwit.refinement import check_refinement
from secwit.secir import attack_model, enumerate_lassos, format_program, parse_program, trace_of, with_domain
from secwit.traceops import compress, project

IO = attack_model("io")


def test_folding_target():
    fx = load_fixture("constant_folding")
    assert format_program(fx.target).splitlines()[-2:] == ["L3: z := 1", "L4: x := 0"]
    assert fx.notes == "folded L3, L4"


def test_factorization_target():
    fx = load_fixture("common_branch_factorization")
    lines = format_program(fx.target).splitlines()
    assert "L3: a := arr[0]" in lines
    assert "L4: if (j < n) goto L5 else goto L8" in lines
    assert "L7: a := arr[0]" not in lines
    assert "Delta(" in str(fx.witness.R)


def test_dead_branch_target():
    fx = load_fixture("dead_branch_elimination")
    assert format_program(fx.target) == (
        "program dead_branch domain 2\nvar x\nL1: x := input(secret)\nL2: output(secret, x)\n")


def test_spilling_uses_registers_and_sigma():
    fx = load_fixture("register_spilling")
    text = format_program(fx.target)
    assert "array spill[4]" in text and "L3_1: spill[0] := RegA" in text
    assert fx.witness.sigma["S"][("RegA", "L4")] == "t0"


def test_peeling_first_iteration():
    fx = load_fixture("loop_peeling")
    assert fx.target.labels[2] == "P_L4"
    assert fx.witness.stutter.side == "target"


def test_flattening_keeps_first_alternative():
    fx = load_fixture("expression_flattening")
    assert "{ t0 := a + n; t1 := t0 + b; t2 := c + n; t3 := t2 + 1; x := t1 * t3; n := n + 2 }" \
        in format_program(fx.target)
    assert fx.witness.universal_only


def test_dead_store_has_no_witness():
    fx = load_fixture("dead_store_elimination")
    assert fx.witness is None
    assert format_program(fx.target).endswith("L3: skip\n")


@pytest.mark.parametrize("kind,src,site,msg", [
    ("switch_instructions", SWITCHING, "L5", "L6: expected Assign or AStore or Skip"),
    ("dead_branch_elimination", FOLDING, "L2", "L2: expected Branch"),
    ("loop_peeling", FOLDING, "L1", "L1: expected Branch"),
    ("register_spilling", PEELING, None, "only modelled for straight-line code"),
    ("dead_store_elimination", DEAD_STORE, "L2", "L2: expected Assign"),
    ("common_branch_factorization", FOLDING, "L1", "L1: expected Branch"),
    ("nope", FOLDING, None, "unknown transformation 'nope'"),
    ("constant_folding", FOLDING, "L9", "'L9' is not a label of folding"),
])
def test_refusals(kind, src, site, msg):
    with pytest.raises(TransformError, match=msg):
        apply_transform(kind, parse_program(src), site, IO)


def test_switching_refuses_dependent_instructions():
    p = parse_program("program s domain 2\nvar x, y\nL1: x := 1\nL2: y := x\n")
    with pytest.raises(TransformError, match="not independent"):
        switch_instructions(p, "L1", IO)


def test_switching_observable_modes():
    m = attack_model("io+mem")
    p = parse_program(SWITCHING)
    with pytest.raises(TransformError, match="becomes harder"):
        switch_instructions(p, "L4", m, "plain")
    with pytest.raises(TransformError, match="at most one observation"):
        switch_instructions(p, "L4", m, "block")
    r = switch_instructions(p, "L4", m, "synchronized")
    assert "sync(tgt)" in str(r.witness.R)
    prop = Property("ct", ("forall", "forall"), [negated_constant_time()], m, 2)
    assert check_refinement(prop.checked_automata(), p, r.target, m, 2, r.witness).status == "valid"


def test_block_mode_with_one_silent_instruction():
    m = attack_model("io+mem")
    p = parse_program("program s domain 2\nvar j\narray a[2]\nL1: j := 1\nL2: a[0] := 1\nL3: output(public, j)\n")
    r = switch_instructions(p, "L1", m, "block")
    assert format_program(r.target).splitlines()[-2] == "L1: { a[0] := 1; j := 1 }"
    prop = Property("ct", ("forall", "forall"), [negated_constant_time()], m, 2)
    assert check_refinement(prop.checked_automata(), r.source, r.target, m, 2, r.witness).status == "valid"


def test_constant_facts_of_folding():
    facts, edges = constant_facts(parse_program(FOLDING))
    assert facts["L3"] == {"y": 2, "z": 0}
    assert facts["L4"] == {"y": 2, "z": 1}
    assert facts["End"] == {"x": 0, "y": 2, "z": 1}  # x * (z - 1) is 0 whatever x was
    assert ("L4", "End") in edges


def test_builtin_witness_template_mismatch():
    fx = load_fixture("constant_folding")
    w, b = builtin_witness("constant_folding", fx.source, fx.target)
    assert str(w.R) == str(fx.witness.R) and b is not None
    with pytest.raises(TransformError, match="template mismatch"):
        builtin_witness("constant_folding", fx.source, with_domain(fx.target, 2))
    w, b = builtin_witness("expression_flattening", load_fixture("expression_flattening").source,
                           load_fixture("expression_flattening").target, site="L3", model=IO)
    assert b is None


def test_identity_folding_is_state_equality():
    p = parse_program("program i domain 2\nvar x\nL1: x := input(secret)\nL2: output(public, x)\n")
    w, _ = builtin_witness("constant_folding", p, p)
    assert str(w.R) == "qT = qS && t = s"


def _io_traces(p, m):
    out = set()
    for x in enumerate_lassos(p, m):
        w = compress(trace_of(x))
        out.add(project(w, lambda e: e.kind in ("input", "output")))
    return out


@pytest.mark.parametrize("name", [n for n in WITNESS_KINDS if n != "expression_flattening"])
def test_io_traces_preserved(name):
    fx = load_fixture(name)
    src = fx.checked_source
    assert _io_traces(fx.target, IO) == _io_traces(src, IO)


def test_flattening_refines_io_traces():
    fx = load_fixture("expression_flattening")
    assert _io_traces(fx.target, IO) <= _io_traces(fx.source, IO)
