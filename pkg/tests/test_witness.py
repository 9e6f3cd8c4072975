import pytest

from secwit.fixtures import WITNESS_KINDS, load_fixture
from secwit.secir import Config
from secwit.witness import WitnessError, format_witness, parse_formula, parse_witness


@pytest.mark.parametrize("name", WITNESS_KINDS)
def test_fixture_witness_roundtrip(name):
    text = format_witness(load_fixture(name).witness)
    assert format_witness(parse_witness(text)) == text


def test_folding_witness_text():
    assert format_witness(load_fixture("constant_folding").witness) == """\
witness for constant_folding {
  pairs L = {(Done, Done), (End, End), (L1, L1), (L2, L2), (L3, L3), (L4, L4)};
  R: qT = qS && t = s && alltracks((tgt.loc = L3 -> tgt.alpha(y) = 2) && (tgt.loc = L4 -> tgt.alpha(z) = 1));
  I: inputs;
  bisim: L(src.loc, tgt.loc) && src.alpha = tgt.alpha && (tgt.loc = L3 -> tgt.alpha(y) = 2) && (tgt.loc = L4 -> tgt.alpha(z) = 1);
  skolem sigmaS := sigmaT;
  skolem pS := pT;
  skolem sPrime := tPrime;
}
"""


@pytest.mark.parametrize("text,msg", [
    ("witness for p { R: qT = ; }", "expected a term, found ';'"),
    ("witness for p { }", "witness has no R clause"),
    ("witness for p { R: true; skolem foo := x; }", "unknown Skolem target 'foo'"),
    ("witness for p { R: true; I: inputs(nobody); }", "unknown input set"),
    ("witness for p { R: frob(1); }", "R: unknown relation 'frob'"),
    ("witness for p { R: sigma(Q); }", "unknown sigma table 'Q'"),
    ("witness for p { R: true; bisim: L(src.loc, tgt.loc); }", "bisim: unknown relation 'L'"),
    ("witness for p { R: true; } extra", "text after closing brace"),
])
def test_witness_errors(text, msg):
    with pytest.raises(WitnessError, match=msg):
        parse_witness(text)


def _c(loc, *vals):
    return Config(loc, tuple(vals))


def test_folding_relation_evaluation():
    fx = load_fixture("constant_folding")
    w, a = fx.witness, fx.automata()[0]
    q = a.initial
    good = (q, (_c("L3", 1, 2, 0), _c("L3", 0, 2, 0)))
    bad_fact = (q, (_c("L3", 1, 1, 0), _c("L3", 0, 1, 0)))
    other = (q, (_c("L3", 1, 2, 0), _c("L3", 1, 2, 0)))
    assert w.holds(good, good, fx.target, fx.source, a)
    assert not w.holds(bad_fact, bad_fact, fx.target, fx.source, a)
    assert not w.holds(good, other, fx.target, fx.source, a)


def test_with_r_replaces_only_the_relation():
    w = load_fixture("constant_folding").witness
    weak = w.with_R("qT = qS && t = s")
    assert str(weak.R) == "qT = qS && t = s"
    assert weak.skolem == w.skolem and weak.pairs == w.pairs


@pytest.mark.parametrize("text", [
    "qT = qS && alltracks(src.loc = tgt.loc)",
    "tracksum(tgt.loc in {L3_1, L5_1} ? 1 : 0)",
    "src.alpha(k < 1) != 0",
])
def test_formula_printing_is_stable(text):
    assert str(parse_formula(str(parse_formula(text)))) == str(parse_formula(text))
