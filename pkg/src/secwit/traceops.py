"""Operators on ultimately periodic words ``stem . loop^omega``.

Letters are arbitrary hashable values: single events for traces and tuples
of events for bundles.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lcm


class SilentDivergence(ValueError):
    """The loop of a word consists only of eps symbols."""


def _primitive_root(loop):
    n = len(loop)
    for d in range(1, n + 1):
        if n % d == 0 and loop[:d] * (n // d) == loop:
            return loop[:d]
    return loop


@dataclass(frozen=True, init=False)
class UPWord:
    """Canonical ultimately periodic word: shortest loop, then shortest stem."""

    stem: tuple
    loop: tuple

    def __init__(self, stem, loop):
        stem, loop = tuple(stem), tuple(loop)
        if not loop:
            raise ValueError("loop must be non-empty")
        loop = _primitive_root(loop)
        # roll the loop back into the stem while the last stem letter matches
        while stem and stem[-1] == loop[-1]:
            stem = stem[:-1]
            loop = (loop[-1],) + loop[:-1]
        object.__setattr__(self, "stem", stem)
        object.__setattr__(self, "loop", loop)

    def __getitem__(self, i):
        if i < len(self.stem):
            return self.stem[i]
        return self.loop[(i - len(self.stem)) % len(self.loop)]

    def prefix(self, n):
        return tuple(self[i] for i in range(n))

    def __str__(self):
        st = " ".join(map(str, self.stem))
        lp = " ".join(map(str, self.loop))
        return f"{st} ({lp})^w" if st else f"({lp})^w"


def agree_on(a, b, gamma):
    """Both outside ``gamma``, or both inside and equal."""
    ina, inb = gamma(a), gamma(b)
    if not ina and not inb:
        return True
    return ina and inb and a == b


def project(u, gamma):
    """Subsequence of ``gamma`` letters; a tuple when only finitely many remain."""
    stem = tuple(x for x in u.stem if gamma(x))
    loop = tuple(x for x in u.loop if gamma(x))
    if not loop:
        return stem
    return UPWord(stem, loop)


def _not_eps(e):
    return getattr(e, "kind", None) != "eps"


def compress(u):
    """Drop every eps symbol."""
    w = project(u, _not_eps)
    if not isinstance(w, UPWord):
        raise SilentDivergence("silent divergence: loop has only eps symbols")
    return w


def align(words):
    """Stem length and loop length at which all ``words`` can be read in lockstep."""
    s = max(len(w.stem) for w in words)
    n = 1
    for w in words:
        n = lcm(n, len(w.loop))
    return s, n


def zip_words(words):
    words = list(words)
    if not words:
        raise ValueError("zip of an empty bundle")
    s, n = align(words)
    stem = tuple(tuple(w[i] for w in words) for i in range(s))
    loop = tuple(tuple(w[i] for w in words) for i in range(s, s + n))
    return UPWord(stem, loop)


def unzip(u):
    k = len(u.stem[0] if u.stem else u.loop[0])
    return [UPWord(tuple(v[i] for v in u.stem), tuple(v[i] for v in u.loop)) for i in range(k)]


def same_word(a, b):
    """Equality of finite words or UP words (UP words are canonical)."""
    return a == b
