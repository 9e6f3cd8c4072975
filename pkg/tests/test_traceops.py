import pytest
from hypothesis import given, strategies as st

from secwit.secir import Event
from secwit.traceops import SilentDivergence, UPWord, agree_on, compress, project, unzip, zip_words

EPS = Event("eps", None, None)
OUT1 = Event("output", "public", 1)
IN0 = Event("input", "secret", 0)

letters = st.sampled_from("abc")
stems = st.lists(letters, max_size=4).map(tuple)
loops = st.lists(letters, min_size=1, max_size=4).map(tuple)


def test_canonical_form():
    w = UPWord("abab", "abab")
    assert (w.stem, w.loop) == ((), ("a", "b"))
    assert str(UPWord("cb", "ab")) == "c (b a)^w"


@given(stems, loops, st.integers(0, 3), st.integers(1, 3))
def test_presentation_invariance(stem, loop, shift, reps):
    w = UPWord(stem, loop)
    i = shift % len(loop)
    assert UPWord(stem + loop[:i], loop[i:] + loop[:i]) == w
    assert UPWord(stem, loop * reps) == w
    assert UPWord(stem, loop).prefix(12) == (stem + loop * 12)[:12]


@given(st.lists(st.tuples(stems, loops), min_size=1, max_size=3))
def test_zip_unzip_roundtrip(parts):
    words = [UPWord(s, l) for s, l in parts]
    assert unzip(zip_words(words)) == words


def test_zip_aligns_loops():
    z = zip_words([UPWord("a", "b"), UPWord((), "cd")])
    assert str(z) == "('a', 'c') (('b', 'd') ('b', 'c'))^w"


def test_compress_and_silent_divergence():
    assert compress(UPWord((EPS, OUT1, EPS), (OUT1, EPS))) == UPWord((), (OUT1,))
    with pytest.raises(SilentDivergence):
        compress(UPWord((OUT1,), (EPS,)))


def test_project_finite_and_infinite():
    outs = lambda e: e.kind == "output"
    assert project(UPWord((OUT1, EPS), (EPS,)), outs) == (OUT1,)
    assert project(UPWord((IN0,), (OUT1, EPS)), outs) == UPWord((), (OUT1,))


def test_agree_on():
    ins = lambda e: e.kind == "input"
    assert agree_on(EPS, OUT1, ins)
    assert agree_on(IN0, IN0, ins)
    assert not agree_on(IN0, Event("input", "secret", 1), ins)
    assert not agree_on(IN0, OUT1, ins)
