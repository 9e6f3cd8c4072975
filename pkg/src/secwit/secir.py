"""SecIR: a tiny imperative IR over bounded integers and its transition semantics.

A program is a labelled list of instructions. Every value lives in
``[0, D)`` and arithmetic wraps modulo ``D``. Configurations are
``Config(loc, vals)`` where ``vals`` holds the scalar variables followed by
the array cells in declaration order.

Observations depend on an :class:`AttackModel`: plain input/output, memory
access indices, branch outcomes, and exposure of the final memory.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

END = "End"
DONE = "Done"
CHANNELS = ("secret", "public")


class SecIRError(ValueError):
    """Raised for malformed programs (syntax, undeclared names, bad labels)."""

    def __init__(self, msg, line=None, col=None):
        if line is not None:
            msg = f"line {line}, col {col or 1}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


class Inconclusive(Exception):
    """A bounded exploration could not reach a verdict."""

    reason = "inconclusive"

    def __init__(self, msg, **info):
        super().__init__(msg)
        self.info = info


class BudgetExceeded(Inconclusive):
    reason = "budget-exceeded"


# ---------------------------------------------------------------- events


class Event(NamedTuple):
    kind: str  # eps | input | output | ext | bot
    chan: Optional[str] = None
    payload: object = None

    def __str__(self):
        if self.kind in ("eps", "bot"):
            return self.kind
        if self.kind == "input":
            return f"in({self.chan},{self.payload})"
        if self.kind == "output":
            return f"out({self.chan},{self.payload})"
        tag, data = self.payload
        if tag == "mem":
            return "mem(" + ";".join(f"{a},{i}" for a, i in data) + ")"
        if tag == "br":
            return f"br({data})"
        return "fin(" + ",".join(f"{n}={v}" for n, v in data) + ")"

    @property
    def tag(self):
        return self.payload[0] if self.kind == "ext" else None


EPS = Event("eps")
BOT = Event("bot")


def inp(chan, value):
    return Event("input", chan, value)


def out(chan, value):
    return Event("output", chan, value)


def mem(*accesses):
    """``mem(("arr", 0))`` -- one memory-access observation."""
    return Event("ext", None, ("mem", tuple(accesses)))


def br(taken):
    return Event("ext", None, ("br", int(taken)))


def fin(pairs):
    return Event("ext", None, ("fin", tuple(pairs)))


def is_input(e):
    return e.kind == "input"


def is_output(e):
    return e.kind == "output"


def is_visible(e):
    return e.kind != "eps"


# ---------------------------------------------------------- attack models


@dataclass(frozen=True)
class AttackModel:
    name: str
    io: bool = True
    mem_access_indices: bool = False
    branch_conditions: bool = False
    final_memory: bool = False
    exposed_vars: Optional[tuple] = None  # None: every scalar and cell

    def __post_init__(self):
        if not (self.io or self.mem_access_indices or self.branch_conditions or self.final_memory):
            raise ValueError("attack model observes nothing")


_FLAG_ALIASES = {
    "io": "io",
    "mem": "mem_access_indices",
    "mem_access": "mem_access_indices",
    "branch": "branch_conditions",
    "final_memory": "final_memory",
    "final": "final_memory",
    "ct": ("mem_access_indices", "branch_conditions"),
}


def attack_model(spec="io", exposed_vars=None):
    """Build an attack model from ``"io+mem+branch+final_memory"``-style names."""
    flags = {"io": True}
    for part in spec.split("+"):
        part = part.strip()
        if part not in _FLAG_ALIASES:
            raise ValueError(f"unknown attack model component {part!r}")
        names = _FLAG_ALIASES[part]
        for n in (names,) if isinstance(names, str) else names:
            flags[n] = True
    if exposed_vars is not None:
        exposed_vars = tuple(exposed_vars)
    return AttackModel(name=spec, exposed_vars=exposed_vars, **flags)


IO = attack_model("io")


# ------------------------------------------------------------ expressions


@dataclass(frozen=True)
class Lit:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Idx:
    array: str
    index: object


@dataclass(frozen=True)
class Un:
    op: str
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Cond:
    test: object
    then: object
    other: object


@dataclass(frozen=True)
class Choose:
    """Nondeterministic choice among alternatives (top of an assignment only)."""

    alts: tuple


_PREC = {"||": 1, "&&": 2, "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
         "+": 4, "-": 4, "*": 5, "/": 5, "%": 5}


def format_expr(e, prec=0):
    if isinstance(e, Lit):
        return str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Idx):
        return f"{e.array}[{format_expr(e.index)}]"
    if isinstance(e, Un):
        return f"{e.op}{format_expr(e.arg, 6)}"
    if isinstance(e, Bin):
        p = _PREC[e.op]
        s = f"{format_expr(e.left, p)} {e.op} {format_expr(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, Cond):
        s = f"{format_expr(e.test, 1)} ? {format_expr(e.then)} : {format_expr(e.other)}"
        return f"({s})" if prec > 0 else s
    if isinstance(e, Choose):
        return "choose(" + ", ".join(format_expr(a) for a in e.alts) + ")"
    raise TypeError(e)


def expr_vars(e):
    """Scalar variables and arrays read by ``e``."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Idx):
        return {e.array} | expr_vars(e.index)
    if isinstance(e, Lit):
        return set()
    if isinstance(e, Un):
        return expr_vars(e.arg)
    if isinstance(e, Bin):
        return expr_vars(e.left) | expr_vars(e.right)
    if isinstance(e, Cond):
        return expr_vars(e.test) | expr_vars(e.then) | expr_vars(e.other)
    if isinstance(e, Choose):
        return set().union(*(expr_vars(a) for a in e.alts))
    raise TypeError(e)


def has_array_read(e):
    if isinstance(e, Idx):
        return True
    if isinstance(e, (Lit, Var)):
        return False
    if isinstance(e, Un):
        return has_array_read(e.arg)
    if isinstance(e, Bin):
        return has_array_read(e.left) or has_array_read(e.right)
    if isinstance(e, Cond):
        return any(map(has_array_read, (e.test, e.then, e.other)))
    if isinstance(e, Choose):
        return any(map(has_array_read, e.alts))
    raise TypeError(e)


def binop(op, a, b, d):
    """Modular semantics shared by programs, witnesses and the optimizer."""
    if op == "+":
        return (a + b) % d
    if op == "-":
        return (a - b) % d
    if op == "*":
        return (a * b) % d
    if op == "/":
        return 0 if b == 0 else (a // b) % d
    if op == "%":
        return 0 if b == 0 else a % b
    if op == "==":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "<":
        return int(a < b)
    if op == "<=":
        return int(a <= b)
    if op == ">":
        return int(a > b)
    if op == ">=":
        return int(a >= b)
    if op == "&&":
        return int(bool(a) and bool(b))
    if op == "||":
        return int(bool(a) or bool(b))
    raise ValueError(op)


# ------------------------------------------------------------ instructions


@dataclass(frozen=True)
class Assign:
    var: str
    expr: object


@dataclass(frozen=True)
class AStore:
    array: str
    index: object
    value: object


@dataclass(frozen=True)
class Input:
    var: str
    chan: str


@dataclass(frozen=True)
class Output:
    chan: str
    expr: object


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Goto:
    target: str


@dataclass(frozen=True)
class Branch:
    cond: object
    then: str
    other: str


@dataclass(frozen=True)
class Block:
    body: tuple


@dataclass(frozen=True)
class Halt:
    pass


def format_instr(ins):
    if isinstance(ins, Assign):
        return f"{ins.var} := {format_expr(ins.expr)}"
    if isinstance(ins, AStore):
        return f"{ins.array}[{format_expr(ins.index)}] := {format_expr(ins.value)}"
    if isinstance(ins, Input):
        return f"{ins.var} := input({ins.chan})"
    if isinstance(ins, Output):
        return f"output({ins.chan}, {format_expr(ins.expr)})"
    if isinstance(ins, Skip):
        return "skip"
    if isinstance(ins, Goto):
        return f"goto {ins.target}"
    if isinstance(ins, Branch):
        return f"if ({format_expr(ins.cond)}) goto {ins.then} else goto {ins.other}"
    if isinstance(ins, Block):
        return "{ " + "; ".join(format_instr(i) for i in ins.body) + " }"
    if isinstance(ins, Halt):
        return "halt"
    raise TypeError(ins)


class Config(NamedTuple):
    loc: str
    vals: tuple

    def __str__(self):
        return f"({self.loc}, {list(self.vals)})"


# ----------------------------------------------------------------- program


@dataclass(eq=False)
class Program:
    name: str
    domain: int
    vars: tuple
    arrays: tuple  # ((name, length), ...)
    labels: tuple
    instrs: dict
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vars = tuple(self.vars)
        self.arrays = tuple((a, int(n)) for a, n in self.arrays)
        self.labels = tuple(self.labels)
        cells = list(self.vars)
        self.array_base = {}
        for a, n in self.arrays:
            self.array_base[a] = len(cells)
            cells.extend(f"{a}[{i}]" for i in range(n))
        self.cells = tuple(cells)
        self.index = {c: i for i, c in enumerate(cells)}
        self.array_len = dict(self.arrays)
        self._next = {}
        for i, lab in enumerate(self.labels):
            self._next[lab] = self.labels[i + 1] if i + 1 < len(self.labels) else END

    def __eq__(self, other):
        return isinstance(other, Program) and format_program(self) == format_program(other)

    def __hash__(self):
        return hash(format_program(self))

    @property
    def entry(self):
        return self.labels[0] if self.labels else END

    @property
    def locations(self):
        return self.labels + (END, DONE)

    def next_label(self, label):
        return self._next[label]

    def alpha(self, config):
        """Config values as a name -> value dict."""
        return dict(zip(self.cells, config.vals))

    def config(self, loc, **values):
        vals = [0] * len(self.cells)
        for k, v in values.items():
            vals[self.index[k]] = v % self.domain
        return Config(loc, tuple(vals))

    def successors_of(self, label):
        """Static control-flow successors of a labelled instruction."""
        ins = self.instrs[label]
        if isinstance(ins, Branch):
            return (ins.then, ins.other)
        if isinstance(ins, Goto):
            return (ins.target,)
        if isinstance(ins, Halt):
            return (END,)
        return (self._next[label],)

    def predecessors(self):
        preds = {loc: [] for loc in self.locations}
        for lab in self.labels:
            for s in self.successors_of(lab):
                preds[s].append(lab)
        return preds

    # -- semantics ------------------------------------------------------

    def eval(self, e, vals):
        d = self.domain
        if isinstance(e, Lit):
            return e.value % d
        if isinstance(e, Var):
            return vals[self.index[e.name]]
        if isinstance(e, Idx):
            i = self.eval(e.index, vals) % self.array_len[e.array]
            return vals[self.array_base[e.array] + i]
        if isinstance(e, Bin):
            a = self.eval(e.left, vals)
            if e.op == "&&" and not a:
                return 0
            if e.op == "||" and a:
                return 1
            return binop(e.op, a, self.eval(e.right, vals), d)
        if isinstance(e, Un):
            a = self.eval(e.arg, vals)
            return int(not a) if e.op == "!" else (-a) % d
        if isinstance(e, Cond):
            return self.eval(e.then if self.eval(e.test, vals) else e.other, vals)
        raise SecIRError(f"choose(...) is only allowed as a whole right-hand side: {format_expr(e)}")

    def reads(self, e, vals, acc):
        """Append array cells ``(array, index)`` read while evaluating ``e``."""
        if isinstance(e, Idx):
            self.reads(e.index, vals, acc)
            acc.append((e.array, self.eval(e.index, vals) % self.array_len[e.array]))
        elif isinstance(e, Un):
            self.reads(e.arg, vals, acc)
        elif isinstance(e, Bin):
            self.reads(e.left, vals, acc)
            self.reads(e.right, vals, acc)
        elif isinstance(e, Cond):
            self.reads(e.test, vals, acc)
            self.reads(e.then if self.eval(e.test, vals) else e.other, vals, acc)
        elif isinstance(e, Choose):
            for a in e.alts:
                self.reads(a, vals, acc)

    def _exec(self, ins, vals, model):
        """All outcomes ``(event_or_None, vals')`` of one instruction body."""
        d = self.domain
        acc = []
        if isinstance(ins, Assign):
            alts = ins.expr.alts if isinstance(ins.expr, Choose) else (ins.expr,)
            self.reads(ins.expr, vals, acc)
            i = self.index[ins.var]
            results = []
            for a in alts:
                v = list(vals)
                v[i] = self.eval(a, vals)
                results.append(tuple(v))
            ev = mem(*acc) if (model.mem_access_indices and acc) else None
            return [(ev, r) for r in dict.fromkeys(results)]
        if isinstance(ins, AStore):
            self.reads(ins.index, vals, acc)
            self.reads(ins.value, vals, acc)
            k = self.eval(ins.index, vals) % self.array_len[ins.array]
            acc.append((ins.array, k))
            v = list(vals)
            v[self.array_base[ins.array] + k] = self.eval(ins.value, vals)
            ev = mem(*acc) if model.mem_access_indices else None
            return [(ev, tuple(v))]
        if isinstance(ins, Input):
            i = self.index[ins.var]
            res = []
            for x in range(d):
                v = list(vals)
                v[i] = x
                res.append((inp(ins.chan, x), tuple(v)))
            return res
        if isinstance(ins, Output):
            self.reads(ins.expr, vals, acc)
            if acc and model.mem_access_indices:
                raise SecIRError(f"output({ins.chan}, ...) also reads memory; split it to keep one observation per step")
            return [(out(ins.chan, self.eval(ins.expr, vals)), vals)]
        if isinstance(ins, (Skip, Goto, Halt)):
            return [(None, vals)]
        if isinstance(ins, Block):
            states = [(None, vals)]
            for sub in ins.body:
                nxt = []
                for ev, v in states:
                    for ev2, v2 in self._exec(sub, v, model):
                        if ev is not None and ev2 is not None:
                            raise SecIRError("block emits more than one observation under " + model.name)
                        nxt.append((ev if ev is not None else ev2, v2))
                states = nxt
            return list(dict.fromkeys(states))
        raise TypeError(ins)

    def step(self, model, c):
        """Successor set of ``c`` as a tuple of ``(Event, Config)``; never empty."""
        key = (model, c)
        cache = self._cache
        hit = cache.get(key)
        if hit is not None:
            return hit
        if c.loc == DONE or (c.loc == END and not model.final_memory):
            res = ((BOT, c),)
        elif c.loc == END:
            names = model.exposed_vars if model.exposed_vars is not None else self.cells
            res = ((fin((n, c.vals[self.index[n]]) for n in names), Config(DONE, c.vals)),)
        else:
            ins = self.instrs[c.loc]
            if isinstance(ins, Branch):
                acc = []
                self.reads(ins.cond, c.vals, acc)
                taken = bool(self.eval(ins.cond, c.vals))
                if model.branch_conditions and model.mem_access_indices and acc:
                    raise SecIRError("branch emits both a branch and a memory observation")
                if model.branch_conditions:
                    ev = br(taken)
                elif model.mem_access_indices and acc:
                    ev = mem(*acc)
                else:
                    ev = EPS
                res = ((ev, Config(ins.then if taken else ins.other, c.vals)),)
            else:
                nxt = self.successors_of(c.loc)[0]
                res = tuple((ev if ev is not None else EPS, Config(nxt, v))
                            for ev, v in self._exec(ins, c.vals, model))
        cache[key] = res
        return res

    def is_silent(self, label, model):
        """True when the instruction at ``label`` can take an eps step under ``model``."""
        ins = self.instrs[label]
        if isinstance(ins, (Input, Output)):
            return False
        if isinstance(ins, Branch):
            return not (model.branch_conditions or (model.mem_access_indices and has_array_read(ins.cond)))
        if isinstance(ins, (Skip, Goto, Halt)):
            return True
        if isinstance(ins, AStore):
            return not model.mem_access_indices
        if isinstance(ins, Assign):
            return not (model.mem_access_indices and has_array_read(ins.expr))
        if isinstance(ins, Block):
            return all(self.is_silent_instr(s, model) for s in ins.body)
        raise TypeError(ins)

    def is_silent_instr(self, ins, model):
        tmp = Program("_", self.domain, self.vars, self.arrays, ("_",), {"_": ins})
        return tmp.is_silent("_", model)

    def has_silent_steps(self, model):
        return any(self.is_silent(lab, model) for lab in self.labels)


def initial_config(p):
    """All names zero, control at the entry label."""
    return Config(p.entry, (0,) * len(p.cells))


def step(p, model, c):
    return p.step(model, c)


# ----------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(:=|==|!=|<=|>=|&&|\|\||[-+*/%<>!?:()\[\]{};,=]))")


def tokenize(text, line=None):
    pos = 0
    toks = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise SecIRError(f"unexpected character {text[pos:].strip()[:1]!r}", line, pos + 1)
        num, name, op = m.groups()
        col = m.start() + len(m.group(0)) - len(m.group(0).lstrip()) + 1
        if num is not None:
            toks.append(("num", int(num), col))
        elif name is not None:
            toks.append(("name", name, col))
        else:
            toks.append(("op", op, col))
        pos = m.end()
    return toks


class _Parser:
    def __init__(self, toks, line):
        self.toks = toks
        self.i = 0
        self.line = line

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eof", None, None)

    def err(self, msg):
        tok = self.peek()
        return SecIRError(msg, self.line, tok[2] or (self.toks[-1][2] + 1 if self.toks else 1))

    def take(self, kind=None, value=None):
        tok = self.peek()
        if (kind and tok[0] != kind) or (value is not None and tok[1] != value):
            want = value if value is not None else kind
            raise self.err(f"expected {want!r}, found {tok[1]!r}")
        self.i += 1
        return tok

    def accept(self, value):
        if self.peek()[1] == value and self.peek()[0] in ("op", "name"):
            self.i += 1
            return True
        return False

    def done(self):
        if self.peek()[0] != "eof":
            raise self.err(f"unexpected {self.peek()[1]!r}")

    # expressions
    def expr(self):
        test = self.binary(1)
        if self.accept("?"):
            a = self.expr()
            self.take("op", ":")
            b = self.expr()
            return Cond(test, a, b)
        return test

    def binary(self, prec):
        if prec > 5:
            return self.unary()
        left = self.binary(prec + 1)
        while True:
            tok = self.peek()
            if tok[0] == "op" and _PREC.get(tok[1]) == prec:
                self.i += 1
                left = Bin(tok[1], left, self.binary(prec + 1))
            else:
                return left

    def unary(self):
        if self.accept("!"):
            return Un("!", self.unary())
        if self.accept("-"):
            return Un("-", self.unary())
        return self.primary()

    def primary(self):
        tok = self.peek()
        if tok[0] == "num":
            self.i += 1
            return Lit(tok[1])
        if tok[0] == "name":
            self.i += 1
            if self.accept("["):
                e = self.expr()
                self.take("op", "]")
                return Idx(tok[1], e)
            return Var(tok[1])
        if self.accept("("):
            e = self.expr()
            self.take("op", ")")
            return e
        raise self.err(f"expected expression, found {tok[1]!r}")

    # instructions
    def instr(self, nested=False):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "{":
            self.i += 1
            body = [self.instr(nested=True)]
            while self.accept(";"):
                if self.peek()[1] == "}":
                    break
                body.append(self.instr(nested=True))
            self.take("op", "}")
            for b in body:
                if isinstance(b, (Branch, Halt, Goto)):
                    raise self.err("block may not contain control flow")
            return Block(tuple(body))
        if tok[0] != "name":
            raise self.err(f"expected instruction, found {tok[1]!r}")
        word = tok[1]
        if word == "halt":
            self.i += 1
            return Halt()
        if word == "skip":
            self.i += 1
            return Skip()
        if word == "goto":
            self.i += 1
            return Goto(self.take("name")[1])
        if word == "if":
            self.i += 1
            cond = self.expr()
            self.take("name", "goto")
            a = self.take("name")[1]
            self.take("name", "else")
            self.take("name", "goto")
            b = self.take("name")[1]
            return Branch(cond, a, b)
        if word == "output" and self.peek(1)[1] == "(":
            self.i += 2
            ch = self.take("name")[1]
            if ch not in CHANNELS:
                raise self.err(f"unknown channel {ch!r}")
            self.take("op", ",")
            e = self.expr()
            self.take("op", ")")
            return Output(ch, e)
        self.i += 1
        if self.accept("["):
            idx = self.expr()
            self.take("op", "]")
            self.take("op", ":=")
            return AStore(word, idx, self.expr())
        self.take("op", ":=")
        nxt = self.peek()
        if nxt[0] == "name" and nxt[1] == "input" and self.peek(1)[1] == "(":
            self.i += 2
            ch = self.take("name")[1]
            if ch not in CHANNELS:
                raise self.err(f"unknown channel {ch!r}")
            self.take("op", ")")
            return Input(word, ch)
        if nxt[0] == "name" and nxt[1] == "choose" and self.peek(1)[1] == "(":
            self.i += 2
            alts = [self.expr()]
            while self.accept(","):
                alts.append(self.expr())
            self.take("op", ")")
            return Assign(word, Choose(tuple(alts)))
        return Assign(word, self.expr())


def _strip_comment(line):
    for mark in ("//", "#"):
        k = line.find(mark)
        if k >= 0:
            line = line[:k]
    return line


def parse_program(text):
    """Parse SecIR source text into a validated :class:`Program`."""
    name = None
    domain = None
    vars_, arrays, labels, instrs, where = [], [], [], {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        toks = tokenize(line, lineno)
        p = _Parser(toks, lineno)
        head = toks[0]
        if head[1] == "program" and head[0] == "name" and name is None:
            p.i = 1
            name = p.take("name")[1]
            p.take("name", "domain")
            domain = p.take("num")[1]
            if domain < 1:
                raise SecIRError("domain must be positive", lineno, toks[-1][2])
            p.done()
            continue
        if name is None:
            raise SecIRError("expected header 'program <name> domain <D>'", lineno, 1)
        if head[1] == "var" and len(toks) > 1 and toks[1][0] == "name" and not labels:
            p.i = 1
            vars_.append(p.take("name")[1])
            while p.accept(","):
                vars_.append(p.take("name")[1])
            p.done()
            continue
        if head[1] == "array" and not labels and len(toks) > 2 and toks[2][1] == "[":
            p.i = 1
            while True:
                a = p.take("name")[1]
                p.take("op", "[")
                n = p.take("num")[1]
                p.take("op", "]")
                if n < 1:
                    raise SecIRError(f"array {a} needs positive length", lineno, toks[0][2])
                arrays.append((a, n))
                if not p.accept(","):
                    break
            p.done()
            continue
        lab = p.take("name")[1]
        p.take("op", ":")
        if lab in instrs or lab in (END, DONE):
            raise SecIRError(f"duplicate or reserved label {lab!r}", lineno, head[2])
        ins = p.instr()
        p.done()
        labels.append(lab)
        instrs[lab] = ins
        where[lab] = lineno
    if name is None:
        raise SecIRError("empty program text (missing header)")
    prog = Program(name, domain, tuple(vars_), tuple(arrays), tuple(labels), instrs)
    validate(prog, where)
    return prog


def _check_expr(prog, e, lineno):
    if isinstance(e, Var):
        if e.name not in prog.vars:
            raise SecIRError(f"undeclared variable {e.name!r}", lineno, 1)
    elif isinstance(e, Idx):
        if e.array not in prog.array_len:
            raise SecIRError(f"undeclared array {e.array!r}", lineno, 1)
        _check_expr(prog, e.index, lineno)
    elif isinstance(e, Un):
        _check_expr(prog, e.arg, lineno)
    elif isinstance(e, Bin):
        _check_expr(prog, e.left, lineno)
        _check_expr(prog, e.right, lineno)
    elif isinstance(e, Cond):
        for x in (e.test, e.then, e.other):
            _check_expr(prog, x, lineno)
    elif isinstance(e, Choose):
        for x in e.alts:
            if isinstance(x, Choose):
                raise SecIRError("nested choose", lineno, 1)
            _check_expr(prog, x, lineno)


def _check_instr(prog, ins, lineno, top=True):
    if isinstance(ins, Assign):
        if ins.var not in prog.vars:
            raise SecIRError(f"undeclared variable {ins.var!r}", lineno, 1)
        _check_expr(prog, ins.expr, lineno)
    elif isinstance(ins, AStore):
        if ins.array not in prog.array_len:
            raise SecIRError(f"undeclared array {ins.array!r}", lineno, 1)
        _check_expr(prog, ins.index, lineno)
        _check_expr(prog, ins.value, lineno)
    elif isinstance(ins, Input):
        if ins.var not in prog.vars:
            raise SecIRError(f"undeclared variable {ins.var!r}", lineno, 1)
    elif isinstance(ins, Output):
        _check_expr(prog, ins.expr, lineno)
    elif isinstance(ins, Branch):
        _check_expr(prog, ins.cond, lineno)
    elif isinstance(ins, Block):
        for b in ins.body:
            _check_instr(prog, b, lineno, top=False)


def validate(prog, where=None):
    """Check names, labels, reachability, and the absence of silent cycles."""
    where = where or {}
    known = set(prog.labels) | {END}
    for lab in prog.labels:
        ln = where.get(lab)
        _check_instr(prog, prog.instrs[lab], ln)
        for s in prog.successors_of(lab):
            if s not in known:
                raise SecIRError(f"undefined label {s!r}", ln, 1)
    seen = {prog.entry}
    todo = [prog.entry]
    while todo:
        v = todo.pop()
        if v == END:
            continue
        for s in prog.successors_of(v):
            if s not in seen:
                seen.add(s)
                todo.append(s)
    for lab in prog.labels:
        if lab not in seen:
            raise SecIRError(f"unreachable label {lab!r}", where.get(lab), 1)
    # silent cycles under the least observant model
    silent = {lab for lab in prog.labels if prog.is_silent(lab, IO)}
    color = {}

    def visit(v):
        color[v] = 1
        for s in prog.successors_of(v):
            if s in silent:
                if color.get(s) == 1:
                    raise SecIRError(f"cycle of silent instructions through {s!r}", where.get(s), 1)
                if s not in color:
                    visit(s)
        color[v] = 2

    for lab in sorted(silent):
        if lab not in color:
            visit(lab)
    return prog


def format_program(p):
    lines = [f"program {p.name} domain {p.domain}"]
    lines += [f"var {v}" for v in p.vars]
    lines += [f"array {a}[{n}]" for a, n in p.arrays]
    lines += [f"{lab}: {format_instr(p.instrs[lab])}" for lab in p.labels]
    return "\n".join(lines) + "\n"


def make_program(name, domain, vars, arrays, labels, instrs):
    """Build and validate a program from already-parsed parts."""
    return validate(Program(name, domain, tuple(vars), tuple(arrays), tuple(labels), dict(instrs)))


def with_domain(p, domain):
    """``p`` over a different value domain (literals are re-read modulo the new size)."""
    if domain == p.domain:
        return p
    return make_program(p.name, domain, p.vars, p.arrays, p.labels, p.instrs)


def configs(p):
    """Every configuration of ``p`` (all locations, all value assignments)."""
    for loc in p.locations:
        for vals in itertools.product(range(p.domain), repeat=len(p.cells)):
            yield Config(loc, vals)


# ------------------------------------------------------------------ lassos


@dataclass(frozen=True)
class Lasso:
    """A finite presentation ``stem . loop^omega`` of one execution.

    Both parts are tuples of steps ``(config, event, config)``.
    """

    stem: tuple
    loop: tuple

    def __post_init__(self):
        if not self.loop:
            raise ValueError("lasso loop must be non-empty")
        steps = self.stem + self.loop
        for a, b in zip(steps, steps[1:]):
            if a[2] != b[0]:
                raise ValueError("lasso steps are not adjacent")
        if self.loop[-1][2] != self.loop[0][0]:
            raise ValueError("lasso loop does not close")
        if all(e.kind == "eps" for _, e, _ in self.loop):
            raise ValueError("lasso loop is silent")


def enumerate_lassos(p, model, stem_max=10, loop_max=4, budget=200_000, stats=None):
    """All lassos from the initial config with bounded stem and loop length.

    Each lasso is the first repetition on a simple path, so every execution
    has at most one presentation. Raises :class:`BudgetExceeded` when more
    than ``budget`` DFS nodes would be visited. If ``stats`` is a dict it
    receives ``truncated`` (paths cut at the length limit) and ``dropped``
    (lassos outside the stem/loop bounds); both zero means the bounds were
    not saturated.
    """
    cut = dropped = 0
    if stem_max < 1 or loop_max < 1:
        raise ValueError("bounds must be >= 1")
    limit = stem_max + loop_max
    out_ = []
    path = [initial_config(p)]
    onpath = {path[0]: 0}
    edges = []
    visits = 0
    stack = [iter(p.step(model, path[0]))]
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            c = path.pop()
            del onpath[c]
            if edges:
                edges.pop()
            continue
        ev, c2 = nxt
        c = path[-1]
        j = onpath.get(c2)
        if j is not None:
            stem = tuple(edges[:j])
            loop = tuple(edges[j:]) + ((c, ev, c2),)
            if len(stem) <= stem_max and len(loop) <= loop_max:
                out_.append(Lasso(stem, loop))
            else:
                dropped += 1
            continue
        if len(edges) + 1 >= limit:
            cut += 1
            continue
        visits += 1
        if visits > budget:
            raise BudgetExceeded(f"lasso enumeration exceeded {budget} nodes", budget_states=budget)
        edges.append((c, ev, c2))
        path.append(c2)
        onpath[c2] = len(path) - 1
        stack.append(iter(p.step(model, c2)))
    if stats is not None:
        stats["truncated"] = stats.get("truncated", 0) + cut
        stats["dropped"] = stats.get("dropped", 0) + dropped
    return out_


def trace_of(x):
    """``(stem events, loop events)`` of a lasso, as a :class:`UPWord`."""
    from .traceops import UPWord

    return UPWord(tuple(e for _, e, _ in x.stem), tuple(e for _, e, _ in x.loop))


def states_of(x):
    from .traceops import UPWord

    return UPWord(tuple(c for c, _, _ in x.stem), tuple(c for c, _, _ in x.loop))


def ctrace(x):
    from .traceops import compress

    return compress(trace_of(x))
