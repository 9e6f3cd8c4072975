import pytest

from secwit.automaton import accepts, find_accepting_lasso, product
from secwit.fixtures import load_fixture
from secwit.props import (
    Property, final_memory_equal, format_property, negated_constant_time, negated_noninterference,
    output_equal, parse_property, property_automaton,
)
from secwit.secir import Event, attack_model, br, fin, inp, out
from secwit.traceops import UPWord, zip_words

BOT = Event("bot", None, None)


def bundle(a, b):
    return zip_words([UPWord(a, (BOT,)), UPWord(b, (BOT,))])


def run_states(aut, word, n):
    """Deterministic run of ``aut`` over the first ``n`` letters."""
    q = aut.initial
    for i in range(n):
        (q,) = aut.successors(q, word[i])
    return q


def test_constant_time_identical_leakage_rejected():
    a = negated_constant_time("true")
    assert not accepts(a, bundle((inp("public", 0), br(1), br(0)), (inp("public", 0), br(1), br(0))))


def test_constant_time_branch_difference_accepted():
    a = negated_constant_time("true")
    assert accepts(a, bundle((inp("public", 0), br(1)), (inp("public", 0), br(0))))


def test_constant_time_false_precondition_is_empty():
    a = negated_constant_time("false")
    w = bundle((inp("public", 0), br(1)), (inp("public", 0), br(0)))
    assert not accepts(a, w)
    assert run_states(a, w, 3) == "S"


def test_noninterference_low_mismatch_goes_to_sink():
    a = negated_noninterference()
    w = bundle((inp("public", 0), out("public", 1)), (inp("public", 1), out("public", 0)))
    assert run_states(a, w, 1) == "S"
    assert not accepts(a, w)


def test_noninterference_output_difference_accepted():
    a = negated_noninterference()
    w = bundle((inp("public", 0), inp("secret", 0), out("public", 0)),
               (inp("public", 0), inp("secret", 1), out("public", 1)))
    assert accepts(a, w)
    assert run_states(a, w, 3) == "F"


def test_noninterference_identical_rejected():
    a = negated_noninterference()
    t = (inp("public", 1), out("public", 0))
    assert not accepts(a, bundle(t, t))


def test_noninterference_final_memory_difference_accepted():
    a = negated_noninterference()
    assert accepts(a, bundle((fin((("x", 0),)),), (fin((("x", 1),)),)))


def test_final_memory_equal_on_selected_vars():
    a = final_memory_equal(("x",))
    same_x = bundle((fin((("x", 1), ("y", 0))),), (fin((("x", 1), ("y", 1))),))
    assert not accepts(a, same_x)
    assert accepts(final_memory_equal(), same_x)
    assert accepts(a, bundle((fin((("x", 0),)),), (fin((("x", 1),)),)))


@pytest.mark.parametrize("which", ["source", "target"])
def test_folding_products_are_empty(which):
    fx = load_fixture("constant_folding")
    (a,) = fx.automata()
    assert find_accepting_lasso(product(a, getattr(fx, which), fx.model)) is None


def test_output_equal():
    a = output_equal()
    assert accepts(a, bundle((out("public", 0),), (out("public", 1),)))
    assert not accepts(a, bundle((out("public", 0),), (out("public", 0),)))


def test_property_automaton_lookup():
    assert property_automaton("output_equal").name == "neg_out"
    with pytest.raises(ValueError, match="unknown property"):
        property_automaton("nope")


def test_property_roundtrip(tmp_path):
    a = negated_noninterference()
    (tmp_path / "neg_ni.aut").write_text(
        "automaton neg_ni tracks 2\nstate I initial\nstate F accepting\ntrans I -> F when true\n")
    p = Property("p", ("forall", "exists"), [a], attack_model("io+final_memory", ["x"]), 3, ("neg_ni.aut",))
    text = format_property(p)
    assert text == ("property p\nprefix forall exists\nattack io+final_memory vars x\n"
                    "automaton neg_ni.aut\nbuffer 3\n")
    q = parse_property(text, str(tmp_path))
    assert (q.prefix, q.buffer_bound, q.attack.exposed_vars, q.universal) == (
        ("forall", "exists"), 3, ("x",), False)


@pytest.mark.parametrize("text,msg", [
    ("property p\nprefix forall maybe\n", "line 2: prefix"),
    ("property p\nprefix forall forall\nattack io\n", "at least one 'automaton'"),
    ("property p\nfoo\n", "unknown declaration"),
])
def test_property_errors(text, msg):
    with pytest.raises(ValueError, match=msg):
        parse_property(text)


def test_prefix_arity_checked():
    with pytest.raises(ValueError, match="2 tracks"):
        Property("p", ("forall",), [output_equal()], attack_model("io"))
