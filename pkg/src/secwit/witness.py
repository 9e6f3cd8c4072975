"""Witness files: refinement relations, bisimulations, ranks and Skolem hints.

A formula is evaluated over an :class:`Env` holding the automaton states
``qT``/``qS`` and the per-track configurations of target and source. Inside
``alltracks(...)`` and ``tracksum(...)`` the names ``tgt``/``src`` (or ``t``/``s``)
denote the current track; outside they denote the whole tuple.

Program-level expressions (``tgt.alpha(a[j - 1])``, ``src.alpha[x := e]``) use
SecIR syntax and modular semantics; all other arithmetic is over plain ints.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from typing import Optional

from .secir import (
    EPS, BOT, Event, SecIRError, _Parser, br, inp, mem, out, Var, Idx,
)


class WitnessError(ValueError):
    pass


# ------------------------------------------------------------------ values


@dataclass(frozen=True)
class ConfRef:
    prog: object
    config: object

    @property
    def loc(self):
        return self.config.loc

    @property
    def alpha(self):
        return AlphaVal(self.prog, self.config.vals)


@dataclass(frozen=True)
class AlphaVal:
    prog: object
    vals: tuple

    def get(self, name):
        return self.vals[self.prog.index[name]]

    def names(self, which):
        out = []
        for n in which:
            if n in self.prog.array_len:
                out.extend(f"{n}[{i}]" for i in range(self.prog.array_len[n]))
            else:
                out.append(n)
        return out


@dataclass(frozen=True)
class AutVal:
    aut: object
    state: object


def _eq(a, b):
    if isinstance(a, bool) or isinstance(b, bool):
        if isinstance(a, bool) and isinstance(b, bool):
            return a == b
        raise WitnessError(f"cannot compare {_tn(a)} with {_tn(b)}")
    if isinstance(a, int) and isinstance(b, int):
        return a == b
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    if isinstance(a, AutVal) and isinstance(b, AutVal):
        return a.aut.core(a.state) == b.aut.core(b.state)
    if isinstance(a, AutVal) and isinstance(b, str):
        return a.aut.base_state(a.state) == b
    if isinstance(a, str) and isinstance(b, AutVal):
        return _eq(b, a)
    if isinstance(a, ConfRef) and isinstance(b, ConfRef):
        return a.loc == b.loc and _eq(a.alpha, b.alpha)
    if isinstance(a, AlphaVal) and isinstance(b, AlphaVal):
        if a.prog.cells != b.prog.cells:
            raise WitnessError("alpha equality between programs with different variables; use eqon")
        return a.vals == b.vals
    if isinstance(a, tuple) and isinstance(b, tuple) and len(a) == len(b):
        return all(_eq(x, y) for x, y in zip(a, b))
    raise WitnessError(f"cannot compare {_tn(a)} with {_tn(b)}")


def _tn(v):
    if isinstance(v, bool):
        return "boolean"
    if isinstance(v, int):
        return "integer"
    if isinstance(v, str):
        return f"constant {v}"
    return type(v).__name__


# -------------------------------------------------------------------- env


class Env:
    """Evaluation environment; ``track`` is the current track inside alltracks."""

    __slots__ = ("qT", "qS", "tcs", "scs", "tprog", "sprog", "aut", "w", "track")

    def __init__(self, qT, qS, tcs, scs, tprog, sprog, aut=None, w=None, track=None):
        self.qT, self.qS = qT, qS
        self.tcs, self.scs = tcs, scs
        self.tprog, self.sprog = tprog, sprog
        self.aut = aut
        self.w = w
        self.track = track

    @property
    def k(self):
        return len(self.tcs)

    def at(self, track):
        return Env(self.qT, self.qS, self.tcs, self.scs, self.tprog, self.sprog, self.aut, self.w, track)

    def side(self, name, i=None):
        cs, prog = (self.tcs, self.tprog) if name == "tgt" else (self.scs, self.sprog)
        if i is None:
            i = self.track
        if i is None:
            return tuple(ConfRef(prog, c) for c in cs)
        if not 0 <= i < len(cs):
            raise WitnessError(f"{name}({i + 1}) out of range for k={len(cs)}")
        return ConfRef(prog, cs[i])


# ------------------------------------------------------------------ nodes


class Node:
    src = ""

    def __str__(self):
        return self.src


@dataclass(eq=False)
class Num(Node):
    value: int

    def eval(self, env):
        return self.value


@dataclass(eq=False)
class Bool(Node):
    value: bool

    def eval(self, env):
        return self.value


@dataclass(eq=False)
class Sym(Node):
    name: str

    def eval(self, env):
        return self.name


@dataclass(eq=False)
class AutRef(Node):
    which: str  # qT | qS

    def eval(self, env):
        st = env.qT if self.which == "qT" else env.qS
        if st is None:
            raise WitnessError(f"{self.which} is not available in a single-track formula")
        return AutVal(env.aut, st)


@dataclass(eq=False)
class SideRef(Node):
    side: str  # tgt | src
    index: Optional[int] = None  # 1-based

    def eval(self, env):
        return env.side(self.side, None if self.index is None else self.index - 1)


@dataclass(eq=False)
class Attr(Node):
    base: Node
    attr: str  # loc | alpha

    def eval(self, env):
        v = self.base.eval(env)
        if isinstance(v, tuple):
            return tuple(getattr(c, self.attr) for c in v)
        if not isinstance(v, ConfRef):
            raise WitnessError(f".{self.attr} applied to {_tn(v)}")
        return getattr(v, self.attr)


@dataclass(eq=False)
class AlphaAt(Node):
    base: Node  # evaluates to AlphaVal
    expr: object  # SecIR expression

    def eval(self, env):
        a = self.base.eval(env)
        if not isinstance(a, AlphaVal):
            raise WitnessError(f"alpha(...) needs a single track, got {_tn(a)} (use alltracks)")
        try:
            return a.prog.eval(self.expr, a.vals)
        except KeyError as e:
            raise WitnessError(f"{a.prog.name} has no variable {e.args[0]!r}") from None


@dataclass(eq=False)
class Subst(Node):
    base: Node
    updates: tuple  # ((lhs, rhs), ...) SecIR

    def eval(self, env):
        a = self.base.eval(env)
        if not isinstance(a, AlphaVal):
            raise WitnessError("substitution needs a single-track alpha")
        p = a.prog
        vals = list(a.vals)
        for lhs, rhs in self.updates:
            cur = tuple(vals)
            try:
                v = p.eval(rhs, cur)
                if isinstance(lhs, Var):
                    vals[p.index[lhs.name]] = v
                else:
                    i = p.eval(lhs.index, cur) % p.array_len[lhs.array]
                    vals[p.array_base[lhs.array] + i] = v
            except KeyError as e:
                raise WitnessError(f"{p.name} has no variable {e.args[0]!r}") from None
        return AlphaVal(p, tuple(vals))


_ARITH = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: 0 if b == 0 else a // b,
    "%": lambda a, b: 0 if b == 0 else a % b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _int(v, what):
    if isinstance(v, bool) or not isinstance(v, int):
        raise WitnessError(f"{what} expects integers, got {_tn(v)}")
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    raise WitnessError(f"expected a boolean, got {_tn(v)}")


@dataclass(eq=False)
class BinOp(Node):
    op: str
    left: Node
    right: Node

    def eval(self, env):
        op = self.op
        if op == "&&":
            return _bool(self.left.eval(env)) and _bool(self.right.eval(env))
        if op == "||":
            return _bool(self.left.eval(env)) or _bool(self.right.eval(env))
        if op == "->":
            return (not _bool(self.left.eval(env))) or _bool(self.right.eval(env))
        a, b = self.left.eval(env), self.right.eval(env)
        if op in ("=", "=="):
            return _eq(a, b)
        if op == "!=":
            return not _eq(a, b)
        return _ARITH[op](_int(a, op), _int(b, op))


@dataclass(eq=False)
class Not(Node):
    arg: Node

    def eval(self, env):
        return not _bool(self.arg.eval(env))


@dataclass(eq=False)
class Neg(Node):
    arg: Node

    def eval(self, env):
        return -_int(self.arg.eval(env), "-")


@dataclass(eq=False)
class Ite(Node):
    test: Node
    then: Node
    other: Node

    def eval(self, env):
        return self.then.eval(env) if _bool(self.test.eval(env)) else self.other.eval(env)


@dataclass(eq=False)
class InSet(Node):
    arg: Node
    names: frozenset

    def eval(self, env):
        v = self.arg.eval(env)
        if isinstance(v, AutVal):
            v = v.aut.base_state(v.state)
        if not isinstance(v, str):
            raise WitnessError(f"'in' expects a location or state, got {_tn(v)}")
        return v in self.names


@dataclass(eq=False)
class AllTracks(Node):
    body: Node

    def eval(self, env):
        return all(_bool(self.body.eval(env.at(i))) for i in range(env.k))


@dataclass(eq=False)
class TrackSum(Node):
    body: Node

    def eval(self, env):
        total = 0
        for i in range(env.k):
            v = self.body.eval(env.at(i))
            total += int(v) if isinstance(v, bool) else _int(v, "tracksum")
        return total


@dataclass(eq=False)
class DeltaAtom(Node):
    src_q: Node
    vec: tuple  # events, or (event,) with all_=True
    dst_q: Node
    all_: bool = False

    def eval(self, env):
        a, b = self.src_q.eval(env), self.dst_q.eval(env)
        if not (isinstance(a, AutVal) and isinstance(b, AutVal)):
            raise WitnessError("Delta expects automaton states")
        vec = self.vec * env.k if self.all_ else self.vec
        if len(vec) != env.k:
            raise WitnessError(f"Delta symbol vector has {len(vec)} entries, k={env.k}")
        succ, _ = a.aut.moves(a.state, vec)
        cb = a.aut.core(b.state)
        return any(a.aut.core(s) == cb for s in succ)


@dataclass(eq=False)
class FinAtom(Node):
    q: Node

    def eval(self, env):
        a = self.q.eval(env)
        if not isinstance(a, AutVal):
            raise WitnessError("Fin expects an automaton state")
        return a.aut.is_accepting(a.state)


@dataclass(eq=False)
class EqOn(Node):
    names: tuple
    left: Node
    right: Node

    def eval(self, env):
        a, b = self.left.eval(env), self.right.eval(env)
        if not (isinstance(a, AlphaVal) and isinstance(b, AlphaVal)):
            raise WitnessError("eqon compares two single-track alphas")
        try:
            return all(a.get(n) == b.get(n) for n in a.names(self.names))
        except KeyError as e:
            raise WitnessError(f"eqon: unknown name {e.args[0]!r}") from None


@dataclass(eq=False)
class Sync(Node):
    side: str

    def eval(self, env):
        cs = env.tcs if self.side == "tgt" else env.scs
        return all(c.loc == cs[0].loc for c in cs)


@dataclass(eq=False)
class Call(Node):
    """``L(src.loc, tgt.loc)`` (declared pair set) or ``sigma(S)`` (declared sigma table)."""

    name: str
    args: tuple

    def eval(self, env):
        w = env.w
        if w is not None and self.name in w.pairs:
            if len(self.args) != 2:
                raise WitnessError(f"pair set {self.name} takes two arguments")
            a, b = (x.eval(env) for x in self.args)
            return (a, b) in w.pairs[self.name]
        if self.name == "sigma" and len(self.args) == 1 and isinstance(self.args[0], Sym):
            table = w.sigma.get(self.args[0].name) if w is not None else None
            if table is None:
                raise WitnessError(f"unknown sigma table {self.args[0].name!r}")
            if env.track is None:
                return all(self.eval(env.at(i)) for i in range(env.k))
            t, s = env.side("tgt"), env.side("src")
            for (reg, loc), var in table.items():
                if loc == t.loc and t.alpha.get(reg) != s.alpha.get(var):
                    return False
            return True
        raise WitnessError(f"unknown relation {self.name!r}")


# ---------------------------------------------------------------- parsing

_WTOK = re.compile(
    r"(\s+|//[^\n]*|#[^\n]*)|(\d+)|([A-Za-z_][A-Za-z0-9_]*)"
    r"|(->|:=|==|!=|<=|>=|&&|\|\||[-+*/%<>!?:()\[\]{};,=.])"
)

_SIDE = {"t": "tgt", "tgt": "tgt", "s": "src", "src": "src"}
_CMP = ("=", "==", "!=", "<", "<=", ">", ">=")


def _wtokens(text):
    toks, pos = [], 0
    while pos < len(text):
        m = _WTOK.match(text, pos)
        if not m:
            raise WitnessError(f"offset {pos}: unexpected character {text[pos]!r}")
        if m.group(1) is None:
            if m.group(2) is not None:
                toks.append(("num", int(m.group(2)), pos, m.end()))
            elif m.group(3) is not None:
                toks.append(("name", m.group(3), pos, m.end()))
            else:
                toks.append(("op", m.group(4), pos, m.end()))
        pos = m.end()
    return toks


class _WParser:
    def __init__(self, text):
        self.text = text
        self.toks = _wtokens(text)
        self.i = 0

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", None, len(self.text), len(self.text))

    def err(self, msg):
        off = self.peek()[2]
        line = self.text.count("\n", 0, off) + 1
        return WitnessError(f"line {line}: {msg}")

    def take(self, value=None, kind=None):
        t = self.peek()
        if (value is not None and t[1] != value) or (kind is not None and t[0] != kind) or t[0] == "eof":
            raise self.err(f"expected {value or kind!r}, found {t[1]!r}")
        self.i += 1
        return t

    def at(self, value):
        t = self.peek()
        return t[0] in ("op", "name") and t[1] == value

    def accept(self, value):
        if self.at(value):
            self.i += 1
            return True
        return False

    def _mark(self, node, start):
        end = self.toks[self.i - 1][3]
        node.src = " ".join(self.text[self.toks[start][2]:end].split())
        return node

    # formulas
    def formula(self):
        start = self.i
        test = self.implies()
        if self.accept("?"):
            a = self.formula()
            self.take(":")
            b = self.formula()
            return self._mark(Ite(test, a, b), start)
        return test

    def implies(self):
        start = self.i
        left = self.disj()
        if self.accept("->"):
            return self._mark(BinOp("->", left, self.implies()), start)
        return left

    def disj(self):
        start = self.i
        left = self.conj()
        while self.accept("||"):
            left = self._mark(BinOp("||", left, self.conj()), start)
        return left

    def conj(self):
        start = self.i
        left = self.cmp()
        while self.accept("&&"):
            left = self._mark(BinOp("&&", left, self.cmp()), start)
        return left

    def cmp(self):
        start = self.i
        left = self.sum()
        t = self.peek()
        if t[0] == "op" and t[1] in _CMP:
            self.i += 1
            return self._mark(BinOp(t[1], left, self.sum()), start)
        if self.accept("in"):
            return self._mark(InSet(left, frozenset(self.name_set())), start)
        return left

    def sum(self):
        start = self.i
        left = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in ("+", "-") and self.peek(1)[1] != ">":
            op = self.take()[1]
            left = self._mark(BinOp(op, left, self.term()), start)
        return left

    def term(self):
        start = self.i
        left = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/", "%"):
            op = self.take()[1]
            left = self._mark(BinOp(op, left, self.unary()), start)
        return left

    def unary(self):
        start = self.i
        if self.accept("!"):
            return self._mark(Not(self.unary()), start)
        if self.at("-"):
            self.i += 1
            return self._mark(Neg(self.unary()), start)
        return self.postfix()

    def postfix(self):
        start = self.i
        node = self.primary()
        while True:
            if self.at(".") and self.peek(1)[1] in ("loc", "alpha"):
                self.i += 1
                attr = self.take()[1]
                node = self._mark(Attr(node, attr), start)
                if attr == "alpha" and self.at("("):
                    self.i += 1
                    node = self._mark(AlphaAt(node, self.secir_until(")")), start)
                    self.take(")")
            elif self.at("[") and isinstance(node, (Attr, Subst)) and (
                isinstance(node, Subst) or node.attr == "alpha"
            ):
                self.i += 1
                ups = [self.update()]
                self.take("]")
                while self.at("["):
                    self.i += 1
                    ups.append(self.update())
                    self.take("]")
                if isinstance(node, Subst):
                    node = Subst(node.base, node.updates + tuple(ups))
                else:
                    node = Subst(node, tuple(ups))
                node = self._mark(node, start)
            else:
                return node

    def update(self):
        lhs = self.secir_until(":=")
        if not isinstance(lhs, (Var, Idx)):
            raise self.err("substitution target must be a variable or array cell")
        self.take(":=")
        return lhs, self.secir_until("]")

    def secir_until(self, stop):
        """Parse a SecIR expression from the tokens up to the balanced ``stop``."""
        depth, j = 0, self.i
        while True:
            t = self.peek(j - self.i)
            if t[0] == "eof":
                raise self.err(f"unterminated expression, expected {stop!r}")
            if depth == 0 and t[1] == stop and t[0] == "op":
                break
            if t[1] in ("(", "["):
                depth += 1
            elif t[1] in (")", "]"):
                depth -= 1
            j += 1
        sub = [(k if k != "op" else "op", v, s + 1) for k, v, s, _ in self.toks[self.i:j]]
        if not sub:
            raise self.err("empty program expression")
        p = _Parser(sub, None)
        try:
            e = p.expr()
            p.done()
        except SecIRError as e2:
            raise self.err(f"in program expression: {e2}") from None
        self.i = j
        return e

    def name_set(self):
        self.take("{")
        names = [self.take(kind="name")[1]]
        while self.accept(","):
            names.append(self.take(kind="name")[1])
        self.take("}")
        return names

    def event(self):
        t = self.take(kind="name")[1]
        if t == "eps":
            return EPS
        if t == "bot":
            return BOT
        self.take("(")
        if t in ("in", "out"):
            ch = self.take(kind="name")[1]
            self.take(",")
            v = self.take(kind="num")[1]
            self.take(")")
            return inp(ch, v) if t == "in" else out(ch, v)
        if t == "mem":
            acc = []
            while True:
                arr = self.take(kind="name")[1]
                self.take(",")
                acc.append((arr, self.take(kind="num")[1]))
                if not self.accept(";"):
                    break
            self.take(")")
            return mem(*acc)
        if t == "br":
            v = self.take(kind="num")[1]
            self.take(")")
            return br(v)
        raise self.err(f"unknown event literal {t!r}")

    def primary(self):
        start = self.i
        t = self.peek()
        if t[0] == "num":
            self.i += 1
            return self._mark(Num(t[1]), start)
        if self.accept("("):
            e = self.formula()
            self.take(")")
            return e
        if t[0] != "name":
            raise self.err(f"expected a term, found {t[1]!r}")
        name = t[1]
        self.i += 1
        if name in ("true", "false"):
            node = Bool(name == "true")
        elif name in ("qT", "qS"):
            node = AutRef(name)
        elif name in ("alltracks", "tracksum"):
            self.take("(")
            body = self.formula()
            self.take(")")
            node = AllTracks(body) if name == "alltracks" else TrackSum(body)
        elif name == "Delta":
            self.take("(")
            q1 = self.formula()
            self.take(",")
            if self.accept("all"):
                self.take("(")
                vec, all_ = (self.event(),), True
                self.take(")")
            else:
                self.take("(")
                vec, all_ = [self.event()], False
                while self.accept(","):
                    vec.append(self.event())
                vec = tuple(vec)
                self.take(")")
            self.take(",")
            q2 = self.formula()
            self.take(")")
            node = DeltaAtom(q1, vec, q2, all_)
        elif name == "Fin":
            self.take("(")
            node = FinAtom(self.formula())
            self.take(")")
        elif name == "eqon":
            self.take("(")
            names = tuple(self.name_set())
            self.take(",")
            a = self.formula()
            self.take(",")
            b = self.formula()
            self.take(")")
            node = EqOn(names, a, b)
        elif name == "sync":
            self.take("(")
            side = _SIDE.get(self.take(kind="name")[1])
            if side is None:
                raise self.err("sync expects tgt or src")
            self.take(")")
            node = Sync(side)
        elif name in _SIDE:
            idx = None
            if self.at("(") and self.peek(1)[0] == "num" and self.peek(2)[1] == ")":
                self.i += 1
                idx = self.take()[1]
                self.i += 1
                if idx < 1:
                    raise self.err("track indices start at 1")
            node = SideRef(_SIDE[name], idx)
        elif self.at("("):
            self.i += 1
            args = [self.formula()]
            while self.accept(","):
                args.append(self.formula())
            self.take(")")
            node = Call(name, tuple(args))
        else:
            node = Sym(name)
        return self._mark(node, start)


def parse_formula(text):
    p = _WParser(text)
    f = p.formula()
    if p.peek()[0] != "eof":
        raise p.err(f"unexpected {p.peek()[1]!r} after formula")
    return f


# ---------------------------------------------------------------- witness


@dataclass(frozen=True)
class Stutter:
    side: str  # source | target | both
    rank: Node
    bound: int = 8

    def allows(self, side):
        return self.side in (side, "both")


@dataclass
class Witness:
    prop: str
    R: Node
    inputs: str = "inputs"
    stutter: Optional[Stutter] = None
    bisim: Optional[Node] = None
    pairs: dict = field(default_factory=dict)
    sigma: dict = field(default_factory=dict)
    skolem: dict = field(default_factory=dict)
    universal_only: bool = False

    def input_pred(self):
        return input_predicate(self.inputs)

    def env(self, X, Y, tprog, sprog, aut):
        return Env(X[0], Y[0], X[1], Y[1], tprog, sprog, aut, self)

    def holds(self, X, Y, tprog, sprog, aut):
        return _bool(self.R.eval(self.env(X, Y, tprog, sprog, aut)))

    def rank(self, X, Y, tprog, sprog, aut):
        if self.stutter is None:
            return 0
        v = self.stutter.rank.eval(self.env(X, Y, tprog, sprog, aut))
        return int(v) if isinstance(v, bool) else _int(v, "rank")

    def bisim_holds(self, t, s, tprog, sprog):
        env = Env(None, None, (t,), (s,), tprog, sprog, None, self, 0)
        return _bool(self.bisim.eval(env))

    def with_R(self, text):
        from dataclasses import replace

        return replace(self, R=parse_formula(text))

    def with_bisim(self, text):
        from dataclasses import replace

        return replace(self, bisim=parse_formula(text))


def input_predicate(spec="inputs"):
    if spec == "inputs":
        return lambda e: e.kind == "input"
    m = re.fullmatch(r"inputs\((secret|public)\)", spec.replace(" ", ""))
    if not m:
        raise WitnessError(f"unknown input set {spec!r}")
    ch = m.group(1)
    return lambda e: e.kind == "input" and e.chan == ch


SKOLEM_NAMES = ("sigmaS", "pS", "sPrime")


def parse_witness(text):
    p = _WParser(text)
    p.take("witness")
    p.take("for")
    prop = p.take(kind="name")[1]
    p.take("{")
    w = dict(prop=prop, pairs={}, sigma={}, skolem={})
    while not p.accept("}"):
        head = p.take(kind="name")[1]
        if head in ("R", "bisim"):
            p.take(":")
            w[head] = p.formula()
        elif head == "I":
            p.take(":")
            name = p.take(kind="name")[1]
            if p.accept("("):
                name += "(" + p.take(kind="name")[1] + ")"
                p.take(")")
            input_predicate(name)
            w["inputs"] = name
        elif head == "stutter":
            p.take(":")
            side = p.take(kind="name")[1]
            if side not in ("source", "target", "both"):
                raise p.err("stutter side must be source, target or both")
            p.take(",")
            p.take("rank")
            rank = p.formula()
            bound = 8
            if p.accept(","):
                p.take("bound")
                bound = p.take(kind="num")[1]
            w["stutter"] = Stutter(side, rank, bound)
        elif head == "pairs":
            name = p.take(kind="name")[1]
            p.take("=")
            p.take("{")
            pairs = set()
            while not p.accept("}"):
                p.take("(")
                a = p.take(kind="name")[1]
                p.take(",")
                b = p.take(kind="name")[1]
                p.take(")")
                pairs.add((a, b))
                p.accept(",")
            w["pairs"][name] = frozenset(pairs)
        elif head == "sigma":
            name = p.take(kind="name")[1]
            p.take("=")
            p.take("{")
            table = {}
            while not p.accept("}"):
                p.take("(")
                reg = p.take(kind="name")[1]
                if p.accept("["):
                    reg += f"[{p.take(kind='num')[1]}]"
                    p.take("]")
                p.take(",")
                loc = p.take(kind="name")[1]
                p.take(")")
                p.take(":")
                table[(reg, loc)] = p.take(kind="name")[1]
                p.accept(",")
            w["sigma"][name] = table
        elif head == "skolem":
            name = p.take(kind="name")[1]
            if name not in SKOLEM_NAMES:
                raise p.err(f"unknown Skolem target {name!r}")
            p.take(":=")
            w["skolem"][name] = p.take(kind="name")[1]
        elif head == "universal_only":
            w["universal_only"] = True
        else:
            raise p.err(f"unknown witness clause {head!r}")
        p.take(";")
    if p.peek()[0] != "eof":
        raise p.err("text after closing brace")
    if "R" not in w:
        raise WitnessError("witness has no R clause")
    for clause in ("R", "bisim"):
        for c in _calls(w.get(clause)):
            if c.name in w["pairs"]:
                continue
            if c.name == "sigma" and len(c.args) == 1 and isinstance(c.args[0], Sym):
                if c.args[0].name not in w["sigma"]:
                    raise WitnessError(f"{clause}: unknown sigma table {c.args[0].name!r}")
                continue
            raise WitnessError(f"{clause}: unknown relation {c.name!r}")
    return Witness(**w)


def _calls(node):
    if isinstance(node, Call):
        yield node
    if isinstance(node, Node):
        for f in fields(node):
            yield from _calls(getattr(node, f.name))
    elif isinstance(node, (tuple, list)):
        for x in node:
            yield from _calls(x)


def format_witness(w):
    lines = [f"witness for {w.prop} {{"]
    for name, pairs in sorted(w.pairs.items()):
        body = ", ".join(f"({a}, {b})" for a, b in sorted(pairs))
        lines.append(f"  pairs {name} = {{{body}}};")
    for name, table in sorted(w.sigma.items()):
        body = ", ".join(f"({r}, {l}): {v}" for (r, l), v in sorted(table.items()))
        lines.append(f"  sigma {name} = {{{body}}};")
    lines.append(f"  R: {w.R};")
    lines.append(f"  I: {w.inputs};")
    if w.stutter is not None:
        lines.append(f"  stutter: {w.stutter.side}, rank {w.stutter.rank}, bound {w.stutter.bound};")
    if w.bisim is not None:
        lines.append(f"  bisim: {w.bisim};")
    for name in SKOLEM_NAMES:
        if name in w.skolem:
            lines.append(f"  skolem {name} := {w.skolem[name]};")
    if w.universal_only:
        lines.append("  universal_only;")
    lines.append("}")
    return "\n".join(lines) + "\n"


def eval_witness(f, env):
    """Evaluate a parsed formula (or formula text) in ``env``."""
    if isinstance(f, str):
        f = parse_formula(f)
    return f.eval(env)
