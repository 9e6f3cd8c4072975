"""Bundle Büchi automata, the buffering construction, and program products.

Guards are small predicate trees over a k-vector of events. A buffered
automaton lets tracks emit at different rates: each track appends its
non-eps symbols to a private buffer and the base automaton only moves once
every buffer holds a symbol.
"""

from __future__ import annotations

import itertools
import re
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .secir import BudgetExceeded, Inconclusive, initial_config


class ConfigError(ValueError):
    """Automaton and program cannot be combined as requested."""


class AutomatonError(ValueError):
    pass


class BufferOverflow(Inconclusive):
    reason = "buffer-bound-exceeded"


# ------------------------------------------------------------------ guards

GAMMAS = {
    "inputs": lambda e: e.kind == "input",
    "outputs": lambda e: e.kind == "output",
    "low": lambda e: e.kind == "input" and e.chan == "public",
    "lowout": lambda e: (e.kind == "output" and e.chan == "public")
    or (e.kind == "ext" and e.payload[0] == "fin"),
    "obs": lambda e: e.kind != "eps",
    "ext": lambda e: e.kind == "ext",
}

KINDS = ("eps", "input", "output", "ext", "bot")
TAGS = ("mem", "br", "fin")


def event_value(e):
    """Scalar payload used by ``val(i)``: the I/O value, branch bit or first index."""
    if e.kind in ("input", "output"):
        return e.payload
    if e.kind == "ext":
        tag, data = e.payload
        if tag == "br":
            return data
        if tag == "mem" and data:
            return data[0][1]
    return None


class Guard:
    def tracks(self):
        return set()


@dataclass(frozen=True)
class GConst(Guard):
    value: bool

    def __call__(self, vec):
        return self.value

    def __str__(self):
        return "true" if self.value else "false"


@dataclass(frozen=True)
class GNot(Guard):
    arg: Guard

    def __call__(self, vec):
        return not self.arg(vec)

    def tracks(self):
        return self.arg.tracks()

    def __str__(self):
        return f"!{_paren(self.arg)}"


@dataclass(frozen=True)
class GAnd(Guard):
    args: tuple

    def __call__(self, vec):
        return all(g(vec) for g in self.args)

    def tracks(self):
        return set().union(*(g.tracks() for g in self.args))

    def __str__(self):
        return " && ".join(_paren(g) for g in self.args)


@dataclass(frozen=True)
class GOr(Guard):
    args: tuple

    def __call__(self, vec):
        return any(g(vec) for g in self.args)

    def tracks(self):
        return set().union(*(g.tracks() for g in self.args))

    def __str__(self):
        return " || ".join(_paren(g) for g in self.args)


def _paren(g):
    return f"({g})" if isinstance(g, (GAnd, GOr)) else str(g)


@dataclass(frozen=True)
class GAtom(Guard):
    """``op`` is one of kind, chan, tag, val, valeq, eq, fineq, agree; indices are 1-based."""

    op: str
    i: int
    arg: object = None
    negate: bool = False

    def __call__(self, vec):
        e = vec[self.i - 1]
        op = self.op
        if op == "kind":
            r = e.kind == self.arg
        elif op == "chan":
            r = e.chan == self.arg
        elif op == "tag":
            r = e.kind == "ext" and e.payload[0] == self.arg
        elif op == "val":
            r = event_value(e) == self.arg
        elif op == "valeq":
            a = event_value(e)
            r = a is not None and a == event_value(vec[self.arg - 1])
        elif op == "eq":
            r = e == vec[self.arg - 1]
        elif op == "fineq":
            j, names = self.arg
            r = _fin_part(e, names) == _fin_part(vec[j - 1], names)
        else:
            j, gamma = self.arg
            f = GAMMAS[gamma]
            b = vec[j - 1]
            ina, inb = f(e), f(b)
            r = (not ina and not inb) or (ina and inb and e == b)
        return r != self.negate

    def tracks(self):
        t = {self.i}
        if self.op in ("valeq", "eq"):
            t.add(self.arg)
        elif self.op in ("agree", "fineq"):
            t.add(self.arg[0])
        return t

    def __str__(self):
        i = self.i
        rel = "!=" if self.negate else "="
        if self.op in ("kind", "chan", "tag", "val"):
            return f"{self.op}({i}){rel}{self.arg}"
        if self.op == "valeq":
            return f"val({i}){rel}val({self.arg})"
        if self.op == "eq":
            s = f"eq({i},{self.arg})"
        elif self.op == "fineq":
            s = f"fineq({i},{self.arg[0]},{','.join(self.arg[1])})"
        else:
            s = f"agree({i},{self.arg[0]},{self.arg[1]})"
        return f"!{s}" if self.negate else s


TRUE = GConst(True)
FALSE = GConst(False)

_GTOK = re.compile(r"\s*(\d+|[A-Za-z_][A-Za-z0-9_]*|&&|\|\||!=|[!()=,])")


def _gtokens(text):
    toks, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _GTOK.match(text, pos)
        if not m:
            raise AutomatonError(f"bad guard syntax near {text[pos:]!r}")
        toks.append(m.group(1))
        pos = m.end()
    return toks


def parse_guard(text, k=None):
    toks = _gtokens(text)
    pos = [0]

    def peek():
        return toks[pos[0]] if pos[0] < len(toks) else None

    def take(want=None):
        t = peek()
        if t is None or (want is not None and t != want):
            raise AutomatonError(f"guard {text!r}: expected {want or 'token'}, found {t!r}")
        pos[0] += 1
        return t

    def track():
        t = take()
        if not t.isdigit():
            raise AutomatonError(f"guard {text!r}: track index expected, found {t!r}")
        i = int(t)
        if i < 1 or (k is not None and i > k):
            raise AutomatonError(f"guard {text!r}: track {i} out of range 1..{k}")
        return i

    def disj():
        args = [conj()]
        while peek() == "||":
            take()
            args.append(conj())
        return args[0] if len(args) == 1 else GOr(tuple(args))

    def conj():
        args = [unary()]
        while peek() == "&&":
            take()
            args.append(unary())
        return args[0] if len(args) == 1 else GAnd(tuple(args))

    def unary():
        t = peek()
        if t == "!":
            take()
            return GNot(unary())
        if t == "(":
            take()
            g = disj()
            take(")")
            return g
        return atom()

    def atom():
        t = take()
        if t in ("true", "false"):
            return GConst(t == "true")
        if t in ("kind", "chan", "tag", "val"):
            take("(")
            i = track()
            take(")")
            rel = take()
            if rel not in ("=", "!="):
                raise AutomatonError(f"guard {text!r}: expected = or != after {t}({i})")
            neg = rel == "!="
            v = take()
            if t == "val" and v == "val":
                take("(")
                j = track()
                take(")")
                return GAtom("valeq", i, j, neg)
            if t == "val":
                if not v.isdigit():
                    raise AutomatonError(f"guard {text!r}: val compares with a number or val(j)")
                return GAtom("val", i, int(v), neg)
            allowed = {"kind": KINDS, "chan": ("secret", "public"), "tag": TAGS}[t]
            if v not in allowed:
                raise AutomatonError(f"guard {text!r}: {t} must be one of {', '.join(allowed)}")
            return GAtom(t, i, v, neg)
        if t == "eq":
            take("(")
            i = track()
            take(",")
            j = track()
            take(")")
            return GAtom("eq", i, j)
        if t == "fineq":
            take("(")
            i = track()
            take(",")
            j = track()
            names = []
            while peek() == ",":
                take(",")
                names.append(take())
            take(")")
            if not names:
                raise AutomatonError(f"guard {text!r}: fineq needs at least one variable")
            return GAtom("fineq", i, (j, tuple(names)))
        if t == "agree":
            take("(")
            i = track()
            take(",")
            j = track()
            take(",")
            gname = take()
            if gname not in GAMMAS:
                raise AutomatonError(f"guard {text!r}: unknown event class {gname!r}")
            take(")")
            return GAtom("agree", i, (j, gname))
        raise AutomatonError(f"guard {text!r}: unexpected {t!r} (guards must be boolean)")

    g = disj()
    if peek() is not None:
        raise AutomatonError(f"guard {text!r}: trailing {peek()!r}")
    return g


def _fin_part(e, names):
    """Exposed values of ``names`` in a final-memory event, ``None`` for other events."""
    if e.kind != "ext" or e.payload[0] != "fin":
        return None
    pairs = dict(e.payload[1])
    return tuple(pairs.get(n) for n in names)


# --------------------------------------------------------------- automata


@dataclass(eq=False)
class BundleAutomaton:
    name: str
    k: int
    states: tuple
    initial: str
    accepting: frozenset
    transitions: tuple  # (src, guard, dst)
    _cache: dict = field(default_factory=dict, repr=False)

    buffered = False

    def __post_init__(self):
        self.states = tuple(self.states)
        self.accepting = frozenset(self.accepting)
        self.transitions = tuple(self.transitions)
        known = set(self.states)
        if len(known) != len(self.states):
            raise AutomatonError("duplicate state names")
        if self.initial not in known:
            raise AutomatonError(f"unknown initial state {self.initial!r}")
        if not self.accepting <= known:
            raise AutomatonError(f"unknown accepting state(s) {sorted(self.accepting - known)}")
        self._out = {q: [] for q in self.states}
        for src, g, dst in self.transitions:
            if src not in known or dst not in known:
                raise AutomatonError(f"transition {src} -> {dst} names an unknown state")
            bad = [i for i in g.tracks() if i > self.k]
            if bad:
                raise AutomatonError(f"guard {g} uses track {bad[0]} but automaton has {self.k}")
            self._out[src].append((g, dst))

    def successors(self, q, vec):
        key = (q, vec)
        hit = self._cache.get(key)
        if hit is None:
            hit = tuple(dict.fromkeys(dst for g, dst in self._out[q] if g(vec)))
            self._cache[key] = hit
        return hit

    def moves(self, q, vec):
        return self.successors(q, vec), False

    def is_accepting(self, q):
        return q in self.accepting

    @staticmethod
    def core(q):
        return q

    @staticmethod
    def base_state(q):
        return q


def parse_automaton(text):
    name = k = None
    states, initial, accepting, trans = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "automaton":
                if len(parts) != 4 or parts[2] != "tracks":
                    raise AutomatonError("expected 'automaton <name> tracks <k>'")
                name, k = parts[1], int(parts[3])
                if k < 1:
                    raise AutomatonError("tracks must be >= 1")
            elif name is None:
                raise AutomatonError("missing 'automaton <name> tracks <k>' header")
            elif parts[0] == "state":
                q = parts[1]
                for flag in parts[2:]:
                    if flag == "initial":
                        initial.append(q)
                    elif flag == "accepting":
                        accepting.append(q)
                    else:
                        raise AutomatonError(f"unknown state flag {flag!r}")
                states.append(q)
            elif parts[0] == "trans":
                m = re.match(r"trans\s+(\S+)\s*->\s*(\S+)\s+when\s+(.+)$", line)
                if not m:
                    raise AutomatonError("expected 'trans <q> -> <q2> when <guard>'")
                trans.append((m.group(1), parse_guard(m.group(3), k), m.group(2)))
            else:
                raise AutomatonError(f"unknown declaration {parts[0]!r}")
        except AutomatonError as e:
            raise AutomatonError(f"line {lineno}: {e}") from None
    if name is None:
        raise AutomatonError("empty automaton text")
    if len(initial) != 1:
        raise AutomatonError(f"exactly one initial state required, found {len(initial)}")
    return BundleAutomaton(name, k, tuple(states), initial[0], frozenset(accepting), tuple(trans))


def format_automaton(a):
    lines = [f"automaton {a.name} tracks {a.k}"]
    for q in a.states:
        flags = (" initial" if q == a.initial else "") + (" accepting" if q in a.accepting else "")
        lines.append(f"state {q}{flags}")
    for src, g, dst in a.transitions:
        lines.append(f"trans {src} -> {dst} when {g}")
    return "\n".join(lines) + "\n"


class BState(NamedTuple):
    q: str
    bufs: tuple
    bit: int


@dataclass(eq=False)
class BufferedAutomaton:
    """Buffering construction over ``base``; buffers hold at most ``b_max`` symbols."""

    base: BundleAutomaton
    b_max: int = 4
    _cache: dict = field(default_factory=dict, repr=False)

    buffered = True

    def __post_init__(self):
        if self.b_max < 1:
            raise ValueError("buffer bound must be >= 1")
        self.k = self.base.k
        self.name = self.base.name
        self.initial = BState(self.base.initial, ((),) * self.k, 0)

    def moves(self, st, vec):
        key = (st, vec)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        bufs = tuple(b + (e,) if e.kind != "eps" else b for b, e in zip(st.bufs, vec))
        if any(not b for b in bufs):
            out = (BState(st.q, bufs, 0),)
            over = any(len(b) > self.b_max for b in bufs)
        else:
            sigma = tuple(b[0] for b in bufs)
            rest = tuple(b[1:] for b in bufs)
            over = any(len(b) > self.b_max for b in rest)
            out = tuple(BState(q2, rest, 1) for q2 in self.base.successors(st.q, sigma))
        hit = ((), True) if over else (out, False)
        self._cache[key] = hit
        return hit

    def successors(self, st, vec):
        out, over = self.moves(st, vec)
        if over:
            raise BufferOverflow(f"a buffer exceeded the bound {self.b_max}", buffer_bound=self.b_max)
        return out

    def is_accepting(self, st):
        return st.bit == 1 and st.q in self.base.accepting

    @staticmethod
    def core(st):
        return (st.q, st.bufs)

    @staticmethod
    def base_state(st):
        return st.q


def buffering(a, b_max=4):
    return BufferedAutomaton(a, b_max)


# -------------------------------------------------------------- exploration


@dataclass
class Graph:
    """Explicitly explored successor graph; node 0 is the (virtual) root."""

    nodes: list
    index: dict
    adj: list  # per node: list of (label, dst)
    overflow: bool = False

    def csr(self):
        return kernels.to_csr(len(self.nodes), [[d for _, d in out] for out in self.adj])

    def label(self, a, b):
        for lab, d in self.adj[a]:
            if d == b:
                return lab
        raise KeyError((a, b))


def explore(roots, succ, budget=200_000):
    """Breadth-first exploration; ``succ(node)`` returns ``(list of (label, node), overflow)``.

    Node 0 is a virtual root linked to every root. Raises
    :class:`BudgetExceeded` past ``budget`` nodes.
    """
    nodes = [None]
    index = {}
    adj = [[]]
    overflow = False
    todo = deque()
    for r in roots:
        if r not in index:
            index[r] = len(nodes)
            nodes.append(r)
            adj.append([])
            todo.append(r)
        adj[0].append((None, index[r]))
    while todo:
        n = todo.popleft()
        out, over = succ(n)
        overflow = overflow or over
        row = adj[index[n]]
        for lab, m in out:
            j = index.get(m)
            if j is None:
                if len(nodes) > budget:
                    raise BudgetExceeded(f"explored more than {budget} states", budget_states=budget)
                j = index[m] = len(nodes)
                nodes.append(m)
                adj.append([])
                todo.append(m)
            row.append((lab, j))
    return Graph(nodes, index, adj, overflow)


def accepting_cycle(graph, accepting):
    """``(stem, loop)`` node-index paths of an accepting lasso, or ``None``."""
    indptr, indices = graph.csr()
    mask = np.zeros(len(graph.nodes), dtype=np.bool_)
    for i in range(1, len(graph.nodes)):
        mask[i] = bool(accepting(graph.nodes[i]))
    seed = kernels.nested_dfs(indptr, indices, mask, 0)
    if seed < 0:
        return None
    stem = kernels.shortest_path(indptr, indices, 0, int(seed))
    loop = kernels.shortest_cycle(indptr, indices, int(seed))
    return stem[1:], loop


def run_accepts(initials, step, accepting, word, budget=200_000):
    """Büchi acceptance of a UP word by a (possibly infinite-state) step function.

    ``step(state, letter)`` returns ``(successors, overflow)``. Any overflow
    makes the answer unknown, reported as :class:`BufferOverflow`.
    """
    n = len(word.stem) + len(word.loop)
    s0 = len(word.stem)

    def succ(node):
        st, pos = node
        nxt = pos + 1 if pos + 1 < n else s0
        outs, over = step(st, word[pos])
        return [(None, (q, nxt)) for q in outs], over

    g = explore([(q, 0) for q in initials], succ, budget)
    if g.overflow:
        raise BufferOverflow("buffer bound exceeded while reading the word")
    return accepting_cycle(g, lambda node: accepting(node[0])) is not None


def accepts(a, w, budget=200_000):
    """Does automaton ``a`` (plain or buffered) accept the UP word ``w`` of k-vectors?"""
    return run_accepts([a.initial], a.moves, a.is_accepting, w, budget)


# ----------------------------------------------------------------- products


class ProgramLTS:
    def __init__(self, program, model):
        self.program = program
        self.model = model
        self.initial = initial_config(program)

    def step(self, c):
        return self.program.step(self.model, c)


class LassoLTS:
    """A single UP event word seen as a deterministic transition system."""

    def __init__(self, word):
        self.word = word
        self.n = len(word.stem) + len(word.loop)
        self.initial = 0

    def step(self, i):
        nxt = i + 1 if i + 1 < self.n else len(self.word.stem)
        return ((self.word[i], nxt),)


class ProductSystem:
    """``A x P1 x .. x Pk``; states are ``(automaton state, (c1, .., ck))``."""

    def __init__(self, automaton, tracks):
        if len(tracks) != automaton.k:
            raise ConfigError(f"automaton has {automaton.k} tracks, got {len(tracks)} programs")
        self.automaton = automaton
        self.tracks = tuple(tracks)
        self.k = len(tracks)
        self.initial = (automaton.initial, tuple(t.initial for t in tracks))
        self._cache = {}

    def moves(self, state):
        """``(list of (event vector, successor), overflow)``."""
        hit = self._cache.get(state)
        if hit is not None:
            return hit
        q, cs = state
        out = []
        overflow = False
        steps = [tr.step(c) for tr, c in zip(self.tracks, cs)]
        for combo in itertools.product(*steps):
            vec = tuple(e for e, _ in combo)
            nxt = tuple(c for _, c in combo)
            qs, over = self.automaton.moves(q, vec)
            overflow = overflow or over
            out.extend((vec, (q2, nxt)) for q2 in qs)
        hit = (out, overflow)
        self._cache[state] = hit
        return hit

    def successors(self, state):
        out, over = self.moves(state)
        if over:
            raise BufferOverflow("a buffer exceeded its bound")
        return out

    def is_accepting(self, state):
        return self.automaton.is_accepting(state[0])

    def explore(self, budget=200_000):
        return explore([self.initial], self.moves, budget)

    def member(self, word, budget=200_000):
        """Is the UP word of event vectors in the product language?"""

        def step(state, letter):
            out, over = self.moves(state)
            return [s for v, s in out if v == letter], over

        return run_accepts([self.initial], step, self.is_accepting, word, budget)


def product(a, p, m, k=None):
    """Product of ``a`` with ``k`` copies of program ``p`` under attack model ``m``."""
    k = a.k if k is None else k
    if k != a.k:
        raise ConfigError(f"automaton arity {a.k} does not match k={k}")
    if not getattr(a, "buffered", False) and p.has_silent_steps(m):
        raise ConfigError(f"program {p.name} has silent steps under {m.name}; use a buffered automaton")
    return ProductSystem(a, [ProgramLTS(p, m)] * k)


@dataclass(frozen=True)
class ProductLasso:
    stem: tuple  # ((state, vec, state'), ...)
    loop: tuple

    @property
    def word(self):
        from .traceops import UPWord

        return UPWord(tuple(v for _, v, _ in self.stem), tuple(v for _, v, _ in self.loop))


def find_accepting_lasso(ps, budget=200_000):
    """Accepting lasso of the product, ``None`` if the language is empty.

    An empty result after a buffer overflow is not trusted and raises
    :class:`BufferOverflow` instead.
    """
    g = ps.explore(budget)
    res = accepting_cycle(g, ps.is_accepting)
    if res is None:
        if g.overflow:
            raise BufferOverflow("no accepting lasso found but a buffer overflowed", states=len(g.nodes) - 1)
        return None
    stem_ix, loop_ix = res

    def edges(path):
        return tuple((g.nodes[a], g.label(a, b), g.nodes[b]) for a, b in zip(path, path[1:]))

    return ProductLasso(edges(stem_ix), edges(loop_ix))


def is_trace(p, m, word, budget=200_000):
    """Is the UP event word the trace of some execution of ``p``?"""

    def step(c, letter):
        return [c2 for e, c2 in p.step(m, c) if e == letter], False

    return run_accepts([initial_config(p)], step, lambda c: True, word, budget)
