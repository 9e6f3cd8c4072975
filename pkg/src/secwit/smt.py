"""SMT-LIB 2 emission of the base-case and inductive-step refinement queries.

Encoding:

* locations of both programs form one datatype ``Loc``; events form a
  datatype ``Ev`` with one constructor per event shape the programs (or the
  witness) can produce;
* every memory cell of every track is an ``Int`` constant constrained to
  ``0 <= v < D``; arrays are unrolled into cells, symbolic indices become
  ``ite`` chains;
* program steps are defined predicates ``stepT``/``stepS`` over
  ``(loc, cells, event, loc', cells')``;
* automaton states are an uninterpreted sort ``AState`` with uninterpreted
  ``Delta``, ``F`` and ``base`` (the base automaton state). ``qT = qS`` is
  equality in ``AState``. An unsat answer therefore holds for every
  automaton; witnesses whose argument depends on the property are left to
  the explicit checker.

Both queries assert the negation of the obligation: ``unsat`` means it holds.
Stuttering is not encoded; the inductive query asks for a lockstep answer.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import tempfile

from .secir import (
    DONE, END, AStore, Assign, Bin, Block, Branch, Choose, Cond, Goto, Halt, Idx, Input, Lit,
    Output, Skip, Un, Var, has_array_read,
)
from .witness import (
    AllTracks, AlphaAt, Attr, AutRef, BinOp, Bool, Call, DeltaAtom, EqOn, FinAtom, InSet, Ite, Neg,
    Not, Num, SideRef, Subst, Sym, Sync, TrackSum,
)

DEFAULT_LOGIC = "UFDTLIA"


class SmtError(ValueError):
    """The witness or program uses something the encoding does not cover."""


class SkolemError(SmtError):
    pass


SKOLEM_CHOICES = {
    "sigmaS": ("sigmaT",),
    "pS": ("pT",),
    "sPrime": ("tPrime", "s"),
}
EXISTENTIALS = tuple(SKOLEM_CHOICES)


def _sym(name):
    return re.sub(r"[^A-Za-z0-9_]", "_", name.replace("[", "_").replace("]", ""))


def _and(parts):
    parts = [p for p in parts if p != "true"]
    if "false" in parts:
        return "false"
    if not parts:
        return "true"
    return parts[0] if len(parts) == 1 else "(and " + " ".join(parts) + ")"


def _or(parts):
    parts = [p for p in parts if p != "false"]
    if "true" in parts:
        return "true"
    if not parts:
        return "false"
    return parts[0] if len(parts) == 1 else "(or " + " ".join(parts) + ")"


def _num(n):
    return str(n) if n >= 0 else f"(- {-n})"


# ------------------------------------------------------------- programs


class _ProgEnc:
    """Symbolic semantics of one program."""

    def __init__(self, enc, prog, tag):
        self.enc, self.p, self.tag = enc, prog, tag
        self.D = prog.domain

    # expressions -------------------------------------------------------

    def expr(self, e, store, reads=None):
        p, D = self.p, self.D
        if isinstance(e, Lit):
            return str(e.value % D)
        if isinstance(e, Var):
            return store[e.name]
        if isinstance(e, Idx):
            n = p.array_len[e.array]
            i = f"(mod {self.expr(e.index, store, reads)} {n})"
            if reads is not None:
                reads.append((e.array, i))
            cells = [store[f"{e.array}[{j}]"] for j in range(n)]
            out = cells[-1]
            for j in range(n - 2, -1, -1):
                out = f"(ite (= {i} {j}) {cells[j]} {out})"
            return out
        if isinstance(e, Un):
            a = self.expr(e.arg, store, reads)
            return f"(ite (= {a} 0) 1 0)" if e.op == "!" else f"(mod (- {a}) {D})"
        if isinstance(e, Cond):
            if reads is not None and (has_array_read(e.then) or has_array_read(e.other)):
                raise SmtError("memory observations inside a conditional expression are not encoded")
            t = self.expr(e.test, store, reads)
            return f"(ite (distinct {t} 0) {self.expr(e.then, store, reads)} {self.expr(e.other, store, reads)})"
        if isinstance(e, Bin):
            a = self.expr(e.left, store, reads)
            b = self.expr(e.right, store, reads)
            return self._bin(e.op, a, b)
        if isinstance(e, Choose):
            raise SmtError("choose(...) is only allowed as a whole right-hand side")
        raise SmtError(f"unsupported expression {e!r}")

    def _split(self, b, f):
        """``f(c)`` for the constant value ``c`` of ``b`` (values are in [0, D))."""
        out = f(self.D - 1)
        for c in range(self.D - 2, -1, -1):
            out = f"(ite (= {b} {c}) {f(c)} {out})"
        return out

    def _bin(self, op, a, b):
        D = self.D
        if op == "+":
            return f"(mod (+ {a} {b}) {D})"
        if op == "-":
            return f"(mod (- {a} {b}) {D})"
        if op == "*":
            if a.isdigit():
                return f"(mod (* {a} {b}) {D})"
            if b.isdigit():
                return f"(mod (* {b} {a}) {D})"
            return f"(mod {self._split(a, lambda c: f'(* {c} {b})')} {D})"
        if op == "/":
            return self._split(b, lambda c: "0" if c == 0 else f"(mod (div {a} {c}) {D})")
        if op == "%":
            return self._split(b, lambda c: "0" if c == 0 else f"(mod {a} {c})")
        cmp = {"==": "=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}
        if op in cmp:
            return f"(ite ({cmp[op]} {a} {b}) 1 0)"
        if op == "!=":
            return f"(ite (distinct {a} {b}) 1 0)"
        if op == "&&":
            return f"(ite (and (distinct {a} 0) (distinct {b} 0)) 1 0)"
        if op == "||":
            return f"(ite (or (distinct {a} 0) (distinct {b} 0)) 1 0)"
        raise SmtError(f"unsupported operator {op}")

    # instructions ------------------------------------------------------

    def _mem_event(self, reads):
        return self.enc.event_term(("mem", tuple(a for a, _ in reads)), [i for _, i in reads])

    def exec_(self, ins, store, fresh):
        """Outcomes ``(guard, event or None, store')`` of an instruction body.

        ``fresh`` is the cell map of the successor state, used for inputs.
        """
        m = self.enc.model
        if isinstance(ins, Assign):
            alts = ins.expr.alts if isinstance(ins.expr, Choose) else (ins.expr,)
            out = []
            for a in alts:
                reads = []
                val = self.expr(a, store, reads)
                st = dict(store)
                st[ins.var] = val
                ev = self._mem_event(reads) if (m.mem_access_indices and reads) else None
                out.append(("true", ev, st))
            if isinstance(ins.expr, Choose) and m.mem_access_indices and any(has_array_read(a) for a in alts):
                raise SmtError("memory observations of choose(...) alternatives are not encoded")
            return out
        if isinstance(ins, AStore):
            reads = []
            k = self.expr(ins.index, store, reads)
            val = self.expr(ins.value, store, reads)
            n = self.p.array_len[ins.array]
            k = f"(mod {k} {n})"
            reads.append((ins.array, k))
            st = dict(store)
            for j in range(n):
                c = f"{ins.array}[{j}]"
                st[c] = f"(ite (= {k} {j}) {val} {store[c]})"
            return [("true", self._mem_event(reads) if m.mem_access_indices else None, st)]
        if isinstance(ins, Input):
            if fresh is None:
                raise SmtError("input inside a block is not encoded")
            st = dict(store)
            st[ins.var] = fresh[ins.var]
            return [("true", self.enc.event_term(("input", ins.chan), [fresh[ins.var]]), st)]
        if isinstance(ins, Output):
            reads = []
            val = self.expr(ins.expr, store, reads)
            if reads and m.mem_access_indices:
                raise SmtError("output that also reads memory")
            return [("true", self.enc.event_term(("output", ins.chan), [val]), store)]
        if isinstance(ins, (Skip, Goto, Halt)):
            return [("true", None, store)]
        if isinstance(ins, Block):
            states = [("true", None, store)]
            for sub in ins.body:
                nxt = []
                for g, ev, st in states:
                    for g2, ev2, st2 in self.exec_(sub, st, None):
                        if ev is not None and ev2 is not None:
                            raise SmtError("block emits more than one observation")
                        nxt.append((_and([g, g2]), ev if ev is not None else ev2, st2))
                states = nxt
            return states
        raise SmtError(f"unsupported instruction {type(ins).__name__}")

    def step_def(self):
        """``define-fun`` of the step relation."""
        p, enc = self.p, self.enc
        cells = p.cells
        cur = {c: f"c{j}" for j, c in enumerate(cells)}
        nxt = {c: f"d{j}" for j, c in enumerate(cells)}
        params = ["(l Loc)"] + [f"({cur[c]} Int)" for c in cells] + ["(e Ev)", "(l2 Loc)"]
        params += [f"({nxt[c]} Int)" for c in cells]

        def outcome(guard, ev, st, loc2):
            parts = [guard, f"(= e {ev if ev is not None else 'eps'})", f"(= l2 {enc.loc(loc2)})"]
            parts += [f"(= {nxt[c]} {st[c]})" for c in cells]
            return _and(parts)

        disj = []
        for lab in p.locations:
            if lab in (END, DONE):
                continue
            ins = p.instrs[lab]
            here = f"(= l {enc.loc(lab)})"
            if isinstance(ins, Branch):
                reads = []
                cond = self.expr(ins.cond, cur, reads)
                m = enc.model
                outs = []
                for taken, dst in ((1, ins.then), (0, ins.other)):
                    g = f"(distinct {cond} 0)" if taken else f"(= {cond} 0)"
                    if m.branch_conditions:
                        ev = enc.event_term(("br",), [str(taken)])
                    elif m.mem_access_indices and reads:
                        ev = self._mem_event(reads)
                    else:
                        ev = None
                    outs.append(outcome(g, ev, cur, dst))
                disj.append(_and([here, _or(outs)]))
                continue
            nx = p.successors_of(lab)[0]
            outs = [outcome(g, ev, st, nx) for g, ev, st in self.exec_(ins, cur, nxt)]
            disj.append(_and([here, _or(outs)]))
        # End / Done
        if enc.model.final_memory:
            names = enc.model.exposed_vars if enc.model.exposed_vars is not None else cells
            cells_of = [cur[n] for n in names if n in cur]
            if len(cells_of) != len(names):
                raise SmtError(f"{p.name} does not define every exposed variable")
            fev = enc.event_term(("fin", tuple(names)), cells_of)
            disj.append(_and([f"(= l {enc.loc(END)})", outcome("true", fev, cur, DONE)]))
        else:
            disj.append(_and([f"(= l {enc.loc(END)})", outcome("true", "bot", cur, END)]))
        disj.append(_and([f"(= l {enc.loc(DONE)})", outcome("true", "bot", cur, DONE)]))
        body = _or(disj)
        return f"(define-fun step{self.tag} ({' '.join(params)}) Bool\n  {body})"


# ------------------------------------------------------------- witness


class _Conf:
    def __init__(self, prog, loc, store):
        self.prog, self.loc, self.store = prog, loc, store


class _Alpha:
    def __init__(self, prog, store):
        self.prog, self.store = prog, store


class _V:
    """A typed SMT term: kind is int | bool | loc | aut | sym."""

    def __init__(self, kind, text):
        self.kind, self.text = kind, text


class _WEnv:
    def __init__(self, qT, qS, tconfs, sconfs, track=None):
        self.qT, self.qS, self.t, self.s, self.track = qT, qS, tconfs, sconfs, track

    def at(self, i):
        return _WEnv(self.qT, self.qS, self.t, self.s, i)


# ------------------------------------------------------------- encoder


class Encoder:
    def __init__(self, a, s, t, k, w, model):
        autos = a if isinstance(a, (list, tuple)) else [a]
        self.s, self.t, self.k, self.w, self.model = s, t, k, w, model
        if s.domain != t.domain:
            raise SmtError("source and target must share the value domain")
        self.D = t.domain
        base_states = []
        for x in autos:
            base = getattr(x, "base", x)
            base_states += [q for q in base.states if q not in base_states]
        self.base_states = base_states
        self.base_initial = getattr(autos[0], "base", autos[0]).initial
        self.locs = list(dict.fromkeys(list(t.locations) + list(s.locations) + [END, DONE]))
        self.shapes = {}  # shape -> (constructor, arity)
        self.enc = {"T": _ProgEnc(self, t, "T"), "S": _ProgEnc(self, s, "S")}

    # names -------------------------------------------------------------

    def loc(self, name):
        if name not in self.locs:
            raise SmtError(f"unknown location {name!r}")
        return "loc_" + _sym(name)

    def qname(self, name):
        return "q_" + _sym(name)

    def event_term(self, shape, args):
        if shape not in self.shapes:
            kind = shape[0]
            if kind in ("input", "output"):
                ctor = f"{'in' if kind == 'input' else 'out'}_{_sym(shape[1])}"
                arity = 1
            elif kind == "mem":
                ctor = "mem_" + "_".join(_sym(x) for x in shape[1])
                arity = len(shape[1])
            elif kind == "br":
                ctor, arity = "br", 1
            else:
                ctor = "fin_" + "_".join(_sym(x) for x in shape[1])
                arity = len(shape[1])
            self.shapes[shape] = (ctor, arity)
        ctor, arity = self.shapes[shape]
        if len(args) != arity:
            raise SmtError(f"event {ctor} takes {arity} values")
        return ctor if arity == 0 else f"({ctor} {' '.join(args)})"

    def concrete_event(self, e):
        if e.kind in ("eps", "bot"):
            return e.kind
        if e.kind in ("input", "output"):
            return self.event_term((e.kind, e.chan), [str(e.payload)])
        tag, data = e.payload
        if tag == "mem":
            return self.event_term(("mem", tuple(a for a, _ in data)), [str(i) for _, i in data])
        if tag == "br":
            return self.event_term(("br",), [str(data)])
        return self.event_term(("fin", tuple(n for n, _ in data)), [str(v) for _, v in data])

    def _ev_datatype(self):
        ctors = ["(eps)", "(bot)"]
        for ch in ("public", "secret"):
            self.event_term(("input", ch), ["0"])
            self.event_term(("output", ch), ["0"])
        for shape in sorted(self.shapes, key=repr):
            ctor, arity = self.shapes[shape]
            fields = " ".join(f"({ctor}_{j} Int)" for j in range(arity))
            ctors.append(f"({ctor} {fields})" if arity else f"({ctor})")
        return "(declare-datatypes ((Ev 0)) ((" + " ".join(ctors) + ")))"

    # states ------------------------------------------------------------

    def conf_vars(self, prefix, prog):
        loc = f"{prefix}_loc"
        store = {c: f"{prefix}_{_sym(c)}" for c in prog.cells}
        return _Conf(prog, loc, store)

    def declare_conf(self, conf):
        out = [f"(declare-const {conf.loc} Loc)"]
        for v in conf.store.values():
            out.append(f"(declare-const {v} Int)")
            out.append(f"(assert (and (<= 0 {v}) (< {v} {self.D})))")
        return out

    def step(self, tag, conf, ev, conf2):
        args = [conf.loc] + list(conf.store.values()) + [ev, conf2.loc] + list(conf2.store.values())
        return f"(step{tag} {' '.join(args)})"

    def is_input(self, e):
        which = self.w.inputs
        chans = ("public", "secret") if which == "inputs" else (which[len("inputs("):-1].strip(),)
        return _or([f"((_ is in_{c}) {e})" for c in chans])

    def agree(self, a, b):
        ia, ib = self.is_input(a), self.is_input(b)
        return f"(or (and (not {ia}) (not {ib})) (and {ia} {ib} (= {a} {b})))"

    # witness formulas --------------------------------------------------

    def formula(self, node, env):
        v = self.wexpr(node, env)
        if v.kind != "bool":
            raise SmtError(f"expected a boolean formula, got {v.kind}")
        return v.text

    def _side(self, env, name, index):
        confs = env.t if name == "tgt" else env.s
        i = env.track if index is None else index - 1
        if i is None:
            return tuple(confs)
        if not 0 <= i < len(confs):
            raise SmtError(f"{name}({i + 1}) out of range for k={len(confs)}")
        return confs[i]

    def _eq(self, a, b):
        if isinstance(a, tuple) and isinstance(b, tuple) and len(a) == len(b):
            return _and([self._eq(x, y) for x, y in zip(a, b)])
        if isinstance(a, _Conf) and isinstance(b, _Conf):
            return _and([f"(= {a.loc} {b.loc})", self._eq(_Alpha(a.prog, a.store), _Alpha(b.prog, b.store))])
        if isinstance(a, _Alpha) and isinstance(b, _Alpha):
            if a.prog.cells != b.prog.cells:
                raise SmtError("alpha equality between programs with different variables; use eqon")
            return _and([f"(= {a.store[c]} {b.store[c]})" for c in a.prog.cells])
        if isinstance(a, _V) and isinstance(b, _V):
            ka, kb = a.kind, b.kind
            if ka == kb == "sym":
                return "true" if a.text == b.text else "false"
            if ka == "sym":
                a, b, ka, kb = b, a, kb, ka
            if kb == "sym":
                if ka == "loc":
                    return f"(= {a.text} {self.loc(b.text)})"
                if ka == "aut":
                    if b.text not in self.base_states:
                        raise SmtError(f"unknown automaton state {b.text!r}")
                    return f"(= (base {a.text}) {self.qname(b.text)})"
                raise SmtError(f"cannot compare {ka} with constant {b.text}")
            if ka != kb:
                raise SmtError(f"cannot compare {ka} with {kb}")
            return f"(= {a.text} {b.text})"
        raise SmtError("cannot compare these values")

    def wexpr(self, node, env):
        if isinstance(node, Num):
            return _V("int", _num(node.value))
        if isinstance(node, Bool):
            return _V("bool", "true" if node.value else "false")
        if isinstance(node, Sym):
            return _V("sym", node.name)
        if isinstance(node, AutRef):
            return _V("aut", env.qT if node.which == "qT" else env.qS)
        if isinstance(node, SideRef):
            return self._side(env, node.side, node.index)
        if isinstance(node, Attr):
            base = self.wexpr(node.base, env)
            if isinstance(base, tuple):
                return tuple(self._attr(c, node.attr) for c in base)
            return self._attr(base, node.attr)
        if isinstance(node, AlphaAt):
            a = self.wexpr(node.base, env)
            if not isinstance(a, _Alpha):
                raise SmtError("alpha(...) needs a single track (use alltracks)")
            return _V("int", self.enc_of(a.prog).expr(node.expr, a.store))
        if isinstance(node, Subst):
            a = self.wexpr(node.base, env)
            if not isinstance(a, _Alpha):
                raise SmtError("substitution needs a single-track alpha")
            pe = self.enc_of(a.prog)
            st = dict(a.store)
            for lhs, rhs in node.updates:
                cur = dict(st)
                val = pe.expr(rhs, cur)
                if isinstance(lhs, Var):
                    st[lhs.name] = val
                else:
                    n = a.prog.array_len[lhs.array]
                    k = f"(mod {pe.expr(lhs.index, cur)} {n})"
                    for j in range(n):
                        c = f"{lhs.array}[{j}]"
                        st[c] = f"(ite (= {k} {j}) {val} {cur[c]})"
            return _Alpha(a.prog, st)
        if isinstance(node, BinOp):
            return self._binop(node, env)
        if isinstance(node, Not):
            return _V("bool", f"(not {self.formula(node.arg, env)})")
        if isinstance(node, Neg):
            return _V("int", f"(- {self._int(node.arg, env)})")
        if isinstance(node, Ite):
            test = self.formula(node.test, env)
            a, b = self.wexpr(node.then, env), self.wexpr(node.other, env)
            if not (isinstance(a, _V) and isinstance(b, _V) and a.kind == b.kind and a.kind in ("int", "bool")):
                raise SmtError("conditional branches must both be integers or both booleans")
            return _V(a.kind, f"(ite {test} {a.text} {b.text})")
        if isinstance(node, InSet):
            v = self.wexpr(node.arg, env)
            return _V("bool", _or([self._eq(v, _V("sym", n)) for n in sorted(node.names)]))
        if isinstance(node, AllTracks):
            return _V("bool", _and([self.formula(node.body, env.at(i)) for i in range(self.k)]))
        if isinstance(node, TrackSum):
            parts = []
            for i in range(self.k):
                v = self.wexpr(node.body, env.at(i))
                parts.append(f"(ite {v.text} 1 0)" if v.kind == "bool" else v.text)
            return _V("int", "(+ " + " ".join(parts) + ")" if len(parts) > 1 else parts[0])
        if isinstance(node, DeltaAtom):
            a, b = self.wexpr(node.src_q, env), self.wexpr(node.dst_q, env)
            if not (isinstance(a, _V) and a.kind == "aut" and isinstance(b, _V) and b.kind == "aut"):
                raise SmtError("Delta expects automaton states")
            vec = node.vec * self.k if node.all_ else node.vec
            if len(vec) != self.k:
                raise SmtError(f"Delta symbol vector has {len(vec)} entries, k={self.k}")
            evs = " ".join(self.concrete_event(e) for e in vec)
            return _V("bool", f"(Delta {a.text} {evs} {b.text})")
        if isinstance(node, FinAtom):
            a = self.wexpr(node.q, env)
            if not (isinstance(a, _V) and a.kind == "aut"):
                raise SmtError("Fin expects an automaton state")
            return _V("bool", f"(F {a.text})")
        if isinstance(node, EqOn):
            a, b = self.wexpr(node.left, env), self.wexpr(node.right, env)
            if not (isinstance(a, _Alpha) and isinstance(b, _Alpha)):
                raise SmtError("eqon compares two single-track alphas")
            names = []
            for n in node.names:
                if n in a.prog.array_len:
                    names += [f"{n}[{i}]" for i in range(a.prog.array_len[n])]
                else:
                    names.append(n)
            missing = [n for n in names if n not in a.store or n not in b.store]
            if missing:
                raise SmtError(f"eqon: unknown name {missing[0]!r}")
            return _V("bool", _and([f"(= {a.store[n]} {b.store[n]})" for n in names]))
        if isinstance(node, Sync):
            confs = env.t if node.side == "tgt" else env.s
            return _V("bool", _and([f"(= {c.loc} {confs[0].loc})" for c in confs[1:]]))
        if isinstance(node, Call):
            return self._call(node, env)
        raise SmtError(f"unsupported witness construct {type(node).__name__}")

    def enc_of(self, prog):
        return self.enc["T"] if prog is self.t else self.enc["S"]

    def _attr(self, conf, attr):
        if not isinstance(conf, _Conf):
            raise SmtError(f".{attr} applied to a non-configuration")
        return _V("loc", conf.loc) if attr == "loc" else _Alpha(conf.prog, conf.store)

    def _int(self, node, env):
        v = self.wexpr(node, env)
        if not (isinstance(v, _V) and v.kind == "int"):
            raise SmtError("expected an integer")
        return v.text

    def _binop(self, node, env):
        op = node.op
        if op in ("&&", "||", "->"):
            a, b = self.formula(node.left, env), self.formula(node.right, env)
            if op == "&&":
                return _V("bool", _and([a, b]))
            if op == "||":
                return _V("bool", _or([a, b]))
            return _V("bool", f"(=> {a} {b})")
        if op in ("=", "==", "!="):
            eq = self._eq(self.wexpr(node.left, env), self.wexpr(node.right, env))
            return _V("bool", eq if op != "!=" else f"(not {eq})")
        a, b = self._int(node.left, env), self._int(node.right, env)
        if op in ("<", "<=", ">", ">="):
            return _V("bool", f"({op} {a} {b})")
        if op in ("+", "-", "*"):
            return _V("int", f"({op} {a} {b})")
        if op == "/":
            return _V("int", f"(ite (= {b} 0) 0 (div {a} {b}))")
        if op == "%":
            return _V("int", f"(ite (= {b} 0) 0 (mod {a} {b}))")
        raise SmtError(f"unsupported operator {op}")

    def _call(self, node, env):
        w = self.w
        if node.name in w.pairs:
            if len(node.args) != 2:
                raise SmtError(f"pair set {node.name} takes two arguments")
            a, b = (self.wexpr(x, env) for x in node.args)
            return _V("bool", _or([_and([self._eq(a, _V("sym", x)), self._eq(b, _V("sym", y))])
                                   for x, y in sorted(w.pairs[node.name])]))
        if node.name == "sigma" and len(node.args) == 1 and isinstance(node.args[0], Sym):
            table = w.sigma.get(node.args[0].name)
            if table is None:
                raise SmtError(f"unknown sigma table {node.args[0].name!r}")
            tracks = range(self.k) if env.track is None else (env.track,)
            parts = []
            for i in tracks:
                t, s = env.t[i], env.s[i]
                for (reg, loc), var in sorted(table.items()):
                    parts.append(f"(=> (= {t.loc} {self.loc(loc)}) (= {t.store[reg]} {s.store[var]}))")
            return _V("bool", _and(parts))
        raise SmtError(f"unknown relation {node.name!r}")

    # queries -----------------------------------------------------------

    def _prelude(self, kind, case, logic, body_decls):
        ev = self._ev_datatype()
        lines = [
            f"; {kind} query for {case}: unsat means the obligation holds",
            f"(set-logic {logic})",
            "(declare-datatypes ((Loc 0)) ((" + " ".join(f"({self.loc(x)})" for x in self.locs) + ")))",
            ev,
            "(declare-datatypes ((Q 0)) ((" + " ".join(f"({self.qname(q)})" for q in self.base_states) + ")))",
            "(declare-sort AState 0)",
            "(declare-fun base (AState) Q)",
            "(declare-fun F (AState) Bool)",
            f"(declare-fun Delta (AState {' '.join(['Ev'] * self.k)} AState) Bool)",
        ]
        return lines + body_decls

    def base_query(self, case="case", logic=DEFAULT_LOGIC):
        tconfs = [self.conf_vars(f"t{i + 1}", self.t) for i in range(self.k)]
        sconfs = [self.conf_vars(f"s{i + 1}", self.s) for i in range(self.k)]
        decls = ["(declare-const qinit AState)", f"(assert (= (base qinit) {self.qname(self.base_initial)}))"]
        for c, prog in [(c, self.t) for c in tconfs] + [(c, self.s) for c in sconfs]:
            decls += self.declare_conf(c)
            decls.append(f"(assert (= {c.loc} {self.loc(prog.entry)}))")
            decls += [f"(assert (= {v} 0))" for v in c.store.values()]
        R = self.formula(self.w.R, _WEnv("qinit", "qinit", tconfs, sconfs))
        body = [f"(assert (not {R}))", "(check-sat)"]
        # the Ev datatype is complete only after the formula has been encoded
        return "\n".join(self._prelude("base", case, logic, decls) + body) + "\n"

    def inductive_query(self, case="case", logic=DEFAULT_LOGIC):
        sk = dict(self.w.skolem)
        for name in EXISTENTIALS:
            if name not in sk:
                raise SkolemError(f"missing Skolem for {name}")
            val = sk[name]
            if val in EXISTENTIALS:
                raise SkolemError(f"Skolem for {name} references the existential {val}")
            if val not in SKOLEM_CHOICES[name]:
                raise SkolemError(f"Skolem {name} := {val} is not supported "
                                  f"(choose from {', '.join(SKOLEM_CHOICES[name])})")
        k = self.k
        tc = [self.conf_vars(f"t{i + 1}", self.t) for i in range(k)]
        sc = [self.conf_vars(f"s{i + 1}", self.s) for i in range(k)]
        tp = [self.conf_vars(f"t{i + 1}p", self.t) for i in range(k)]
        sigT = [f"sigT{i + 1}" for i in range(k)]
        if sk["sPrime"] == "tPrime":
            if self.s.cells != self.t.cells:
                raise SkolemError("sPrime := tPrime needs source and target with the same variables")
            sp = [_Conf(self.s, c.loc, c.store) for c in tp]
        else:
            sp = sc
        sigS = sigT
        decls = [f"(declare-const {q} AState)" for q in ("qT", "qS", "pT")]
        for c in tc + sc + tp:
            decls += self.declare_conf(c)
        decls += [f"(declare-const {e} Ev)" for e in sigT]
        decls.append(self.enc["T"].step_def())
        decls.append(self.enc["S"].step_def())
        R0 = self.formula(self.w.R, _WEnv("qT", "qS", tc, sc))
        R1 = self.formula(self.w.R, _WEnv("pT", "pT", tp, sp))
        phi1 = _and([R0, f"(Delta qT {' '.join(sigT)} pT)"]
                    + [self.step("T", tc[i], sigT[i], tp[i]) for i in range(k)])
        phi2 = _and([f"(Delta qS {' '.join(sigS)} pT)"]
                    + [self.step("S", sc[i], sigS[i], sp[i]) for i in range(k)]
                    + [self.agree(sigT[i], sigS[i]) for i in range(k)]
                    + [R1, "(=> (F pT) (F pT))"])
        body = [
            "; Skolems: " + ", ".join(f"{n} := {sk[n]}" for n in EXISTENTIALS),
            f"(assert {phi1})",
            f"(assert (not {phi2}))",
            "(check-sat)",
        ]
        return "\n".join(self._prelude("inductive", case, logic, decls) + body) + "\n"


def emit_base_query(a, s, t, k, w, model, case="case", logic=DEFAULT_LOGIC):
    return Encoder(a, s, t, k, w, model).base_query(case, logic)


def emit_inductive_query(a, s, t, k, w, model, case="case", logic=DEFAULT_LOGIC):
    return Encoder(a, s, t, k, w, model).inductive_query(case, logic)


def emit_queries(a, s, t, k, w, model, out_dir, case, logic=DEFAULT_LOGIC):
    """Write ``<case>.base.smt2`` and ``<case>.ind.smt2``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for suffix, fn in (("base", emit_base_query), ("ind", emit_inductive_query)):
        text = fn(a, s, t, k, w, model, case, logic)
        path = os.path.join(out_dir, f"{case}.{suffix}.smt2")
        with open(path, "w") as fh:
            fh.write(text)
        paths.append(path)
    return paths


# -------------------------------------------------------------- solving


def find_solver():
    """Command line of an SMT-LIB 2 solver, or ``None``.

    ``SECWIT_SMT_SOLVER`` overrides the default search for ``z3`` and ``cvc5``.
    """
    env = os.environ.get("SECWIT_SMT_SOLVER")
    if env:
        return env.split()
    for name, args in (("z3", ["-smt2"]), ("cvc5", ["--lang", "smt2"])):
        path = shutil.which(name)
        if path:
            return [path, *args]
    return None


def run_solver(text, solver=None, timeout=60):
    """``sat`` / ``unsat`` / ``unknown`` for an SMT-LIB 2 script, run out of process."""
    cmd = solver or find_solver()
    if cmd is None:
        raise FileNotFoundError("no SMT solver found (set SECWIT_SMT_SOLVER)")
    with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as fh:
        fh.write(text)
    try:
        res = subprocess.run([*cmd, fh.name], capture_output=True, text=True, timeout=timeout)
    finally:
        os.unlink(fh.name)
    out = res.stdout.strip().splitlines()
    answer = out[-1].strip() if out else ""
    if answer not in ("sat", "unsat", "unknown"):
        raise RuntimeError(f"solver failed: {res.stdout.strip()} {res.stderr.strip()}")
    return answer
