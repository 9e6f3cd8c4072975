import pytest
from hypothesis import given, settings, strategies as st

from randgen import random_automaton, rng
from secwit.automaton import (
    AutomatonError, BufferOverflow, ConfigError, LassoLTS, ProductSystem, accepts, buffering,
    find_accepting_lasso, format_automaton, parse_automaton, parse_guard, product,
)
from secwit.fixtures import load_fixture
from secwit.props import negated_noninterference
from secwit.secir import Event, attack_model, inp, out
from secwit.traceops import UPWord, zip_words

EPS = Event("eps", None, None)
BOT = Event("bot", None, None)


@pytest.mark.parametrize("text", [
    "kind(1)=input && !(val(2)=1 || eq(1,2))",
    "agree(1,2,low)",
    "fineq(1,2,x,y)",
    "val(1)!=val(2)",
    "true",
    "tag(1)!=fin",
])
def test_guard_roundtrip(text):
    assert str(parse_guard(text, 2)) == text


@pytest.mark.parametrize("text,msg", [
    ("kind(3)=input", "track 3 out of range 1..2"),
    ("kind(1)=foo", "kind must be one of"),
    ("agree(1,2,zzz)", "unknown event class 'zzz'"),
    ("kind(1)=input &&", "expected token"),
    ("zap(1)", "guards must be boolean"),
])
def test_guard_errors(text, msg):
    with pytest.raises(AutomatonError, match=msg):
        parse_guard(text, 2)


@pytest.mark.parametrize("text,msg", [
    ("automaton a tracks 1\nstate q\n", "exactly one initial state"),
    ("automaton a tracks 1\nstate q initial\ntrans q -> r when true\n", "unknown state"),
    ("state q\n", "line 1: missing"),
    ("automaton a tracks 0\n", "tracks must be >= 1"),
])
def test_automaton_errors(text, msg):
    with pytest.raises(AutomatonError, match=msg):
        parse_automaton(text)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_automaton_roundtrip(seed):
    r = rng(seed)
    a = random_automaton(r, r.randint(1, 2))
    text = format_automaton(a)
    assert format_automaton(parse_automaton(text)) == text


def test_guard_classes():
    g = parse_guard("agree(1,2,inputs)", 2)
    assert g((inp("public", 0), inp("public", 0)))
    assert g((out("public", 0), EPS))
    assert not g((inp("public", 0), inp("public", 1)))
    assert not g((inp("public", 0), EPS))


def test_buffering_matches_compressed_run():
    a = negated_noninterference()
    b = buffering(a, 2)
    t1 = UPWord((inp("public", 0), EPS, out("public", 0)), (BOT,))
    t2 = UPWord((inp("public", 0), out("public", 0), EPS), (BOT,))
    assert not accepts(b, zip_words([t1, t2]))
    assert accepts(a, zip_words([t1, t2]))  # lockstep reads eps against an output
    t3 = UPWord((inp("public", 0), out("public", 1)), (BOT,))
    assert accepts(b, zip_words([t1, t3]))


def test_buffer_overflow_is_raised():
    b = buffering(negated_noninterference(), 1)
    slow = UPWord((), (EPS, EPS, EPS, out("public", 0)))
    fast = UPWord((), (out("public", 0),))
    with pytest.raises(BufferOverflow):
        accepts(b, zip_words([slow, fast]))


def test_unbuffered_product_refuses_silent_programs():
    fx = load_fixture("loop_peeling")
    with pytest.raises(ConfigError, match="silent steps"):
        product(negated_noninterference(), fx.source, fx.model)
    with pytest.raises(ConfigError, match="arity"):
        product(negated_noninterference(), fx.source, fx.model, k=1)


def test_accepting_lasso_reads_a_violation():
    fx = load_fixture("dead_store_elimination")
    a = fx.automata()[1]
    lasso = find_accepting_lasso(product(a, fx.target, fx.model))
    assert lasso is not None
    ps = ProductSystem(a, [LassoLTS(w) for w in (UPWord(*_track(lasso, i)) for i in range(2))])
    assert find_accepting_lasso(ps) is not None
    assert find_accepting_lasso(product(a, fx.source, fx.model)) is None


def _track(lasso, i):
    return tuple(v[i] for _, v, _ in lasso.stem), tuple(v[i] for _, v, _ in lasso.loop)


def test_product_membership_of_own_lasso():
    fx = load_fixture("dead_store_elimination")
    a = fx.automata()[1]
    ps = product(a, fx.target, fx.model)
    lasso = find_accepting_lasso(ps)
    assert ps.member(lasso.word)
    assert not product(a, fx.source, fx.model).member(lasso.word)
