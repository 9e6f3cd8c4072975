"""Site-directed SecIR transformations that emit their own correctness witnesses.

Every transformation takes the source program and a site (a label) and
returns the target program together with the witness a certifying compiler
would emit for it. The analyses are deliberately small: a forward constant
propagation and a backward liveness pass.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional

from .secir import (
    DONE, END, EPS, AStore, Assign, Bin, Block, Branch, Choose, Cond, Goto, Halt, Idx, Input, Lit,
    Output, Program, SecIRError, Skip, Un, Var, binop, expr_vars, format_expr, format_instr,
    has_array_read, make_program,
)
from .witness import Witness, parse_witness

KINDS = (
    "constant_folding",
    "common_branch_factorization",
    "switch_instructions",
    "dead_branch_elimination",
    "expression_flattening",
    "loop_peeling",
    "register_spilling",
    "dead_store_elimination",
    "identity",
)


class TransformError(ValueError):
    """The site is not one the transformation can handle; the message says why."""


@dataclass
class TransformResult:
    kind: str
    target: Program
    witness: Optional[Witness]
    notes: str
    source: Optional[Program] = None  # a block-semantics view of the source, when one is needed

    @property
    def bisim(self):
        return None if self.witness is None else self.witness.bisim


# ---------------------------------------------------------------- analyses


def peval(e, facts, d):
    """Value of ``e`` if ``facts`` determine it, else ``None``."""
    if isinstance(e, Lit):
        return e.value % d
    if isinstance(e, Var):
        return facts.get(e.name)
    if isinstance(e, Un):
        a = peval(e.arg, facts, d)
        if a is None:
            return None
        return int(not a) if e.op == "!" else (-a) % d
    if isinstance(e, Bin):
        a, b = peval(e.left, facts, d), peval(e.right, facts, d)
        if a is not None and b is not None:
            return binop(e.op, a, b, d)
        if e.op in ("*", "&&") and (a == 0 or b == 0):
            return 0
        if e.op == "||" and (a or b):
            return 1
        return None
    if isinstance(e, Cond):
        t = peval(e.test, facts, d)
        if t is None:
            x, y = peval(e.then, facts, d), peval(e.other, facts, d)
            return x if x is not None and x == y else None
        return peval(e.then if t else e.other, facts, d)
    return None  # Idx, Choose


def _scalars(p, e):
    return expr_vars(e) & set(p.vars)


def _transfer(p, ins, facts):
    d = p.domain
    if isinstance(ins, Assign):
        f = dict(facts)
        if isinstance(ins.expr, Choose):
            vals = {peval(a, facts, d) for a in ins.expr.alts}
            v = vals.pop() if len(vals) == 1 else None
        else:
            v = peval(ins.expr, facts, d)
        if v is None:
            f.pop(ins.var, None)
        else:
            f[ins.var] = v
        return f
    if isinstance(ins, Input):
        f = dict(facts)
        f.pop(ins.var, None)
        return f
    if isinstance(ins, Block):
        for sub in ins.body:
            facts = _transfer(p, sub, facts)
    return facts


def constant_facts(p):
    """Forward constant propagation.

    Returns ``(facts, edges)``: ``facts[loc]`` maps scalar names to values that
    hold whenever control is at ``loc``; ``edges`` are the CFG edges the
    analysis found feasible (branches on known guards keep one edge).
    """
    d = p.domain
    facts = {p.entry: {v: 0 for v in p.vars}}
    edges = set()
    work = [p.entry]
    while work:
        lab = work.pop()
        if lab in (END, DONE):
            continue
        ins = p.instrs[lab]
        f = facts[lab]
        if isinstance(ins, Branch):
            c = peval(ins.cond, f, d)
            succs = [ins.then, ins.other] if c is None else [ins.then if c else ins.other]
            out = f
        else:
            succs = list(p.successors_of(lab))
            out = _transfer(p, ins, f)
        for s in succs:
            edges.add((lab, s))
            old = facts.get(s)
            if old is None:
                facts[s] = dict(out)
                work.append(s)
            else:
                meet = {v: x for v, x in old.items() if out.get(v) == x}
                if meet != old:
                    facts[s] = meet
                    work.append(s)
    if END in facts:
        facts[DONE] = facts[END]
    return facts, edges


def _deps(p, ins, v):
    """Names whose values at the start of ``ins`` determine ``v`` after it."""
    need = {v}
    body = ins.body if isinstance(ins, Block) else (ins,)
    for sub in reversed(body):
        nxt = set()
        for x in need:
            if isinstance(sub, Assign) and sub.var == x:
                nxt |= _scalars(p, sub.expr)
            elif isinstance(sub, Input) and sub.var == x:
                pass
            else:
                nxt.add(x)
        need = nxt
    return need


def needed_facts(p, facts, edges, roots):
    """Close ``roots`` (pairs ``(loc, var)``) under the facts they depend on."""
    preds = defaultdict(list)
    for a, b in edges:
        preds[b].append(a)
    need = set()
    work = list(roots)
    while work:
        lab, v = work.pop()
        if (lab, v) in need or v not in facts.get(lab, {}):
            continue
        need.add((lab, v))
        for q in preds[lab]:
            work.extend((q, dep) for dep in _deps(p, p.instrs[q], v))
    return need


def _reads(p, ins):
    if isinstance(ins, (Assign, Output)):
        return _scalars(p, ins.expr)
    if isinstance(ins, AStore):
        return _scalars(p, ins.index) | _scalars(p, ins.value)
    if isinstance(ins, Branch):
        return _scalars(p, ins.cond)
    if isinstance(ins, Block):
        out = set()
        written = set()
        for sub in ins.body:
            out |= _reads(p, sub) - written
            written |= _writes(sub)
        return out
    return set()


def _writes(ins):
    if isinstance(ins, (Assign, Input)):
        return {ins.var}
    if isinstance(ins, Block):
        return set().union(*(_writes(s) for s in ins.body)) if ins.body else set()
    return set()


def live_after(p):
    """``live[label]``: scalars that may be read after the instruction at ``label``."""
    live_in = {loc: set() for loc in p.locations}
    changed = True
    while changed:
        changed = False
        for lab in reversed(p.labels):
            ins = p.instrs[lab]
            out = set().union(*(live_in[s] for s in p.successors_of(lab)))
            new = _reads(p, ins) | (out - _writes(ins))
            if new != live_in[lab]:
                live_in[lab] = new
                changed = True
    return {lab: set().union(*(live_in[s] for s in p.successors_of(lab))) for lab in p.labels}


def _facts_text(p, facts, need, side):
    by_loc = defaultdict(set)
    for lab, v in need:
        by_loc[lab].add(v)
    out = []
    for loc in p.locations:
        if loc == DONE or loc not in by_loc:
            continue
        conj = " && ".join(f"{side}.alpha({v}) = {facts[loc][v]}" for v in p.vars if v in by_loc[loc])
        where = f"{side}.loc in {{{END}, {DONE}}}" if loc == END else f"{side}.loc = {loc}"
        out.append(f"({where} -> {conj})")
    return out


# ----------------------------------------------------------------- helpers


def _check_site(p, site, kinds=None):
    if site not in p.instrs:
        raise TransformError(f"{site!r} is not a label of {p.name}")
    ins = p.instrs[site]
    if kinds is not None and not isinstance(ins, kinds):
        raise TransformError(f"{site}: expected {' or '.join(k.__name__ for k in kinds)}, found '{format_instr(ins)}'")
    return ins


def _build(p, labels, instrs, vars=None, arrays=None):
    try:
        return make_program(p.name, p.domain, p.vars if vars is None else vars,
                            p.arrays if arrays is None else arrays, labels, instrs)
    except SecIRError as e:
        raise TransformError(f"transformed program is ill-formed: {e}") from None


def _retarget(ins, mp):
    if isinstance(ins, Goto):
        return Goto(mp(ins.target))
    if isinstance(ins, Branch):
        return Branch(ins.cond, mp(ins.then), mp(ins.other))
    return ins


def _witness(kind, R, *, pairs=None, sigma=None, stutter=None, bisim=None, skolem=(), universal_only=False):
    lines = [f"witness for {kind} {{"]
    for name, ps in (pairs or {}).items():
        lines.append(f"  pairs {name} = {{" + ", ".join(f"({a}, {b})" for a, b in ps) + "};")
    for name, table in (sigma or {}).items():
        body = ", ".join(f"({r}, {lab}): {v}" for (r, lab), v in table)
        lines.append(f"  sigma {name} = {{{body}}};")
    lines.append(f"  R: {R};")
    lines.append("  I: inputs;")
    if stutter:
        side, rank, bound = stutter
        lines.append(f"  stutter: {side}, rank {rank}, bound {bound};")
    if bisim:
        lines.append(f"  bisim: {bisim};")
    for a, b in skolem:
        lines.append(f"  skolem {a} := {b};")
    if universal_only:
        lines.append("  universal_only;")
    lines.append("}")
    return parse_witness("\n".join(lines) + "\n")


def _identity_pairs(p):
    return [(loc, loc) for loc in p.locations]


def _conj(parts):
    return " && ".join(parts)


FOLDING_SKOLEMS = (("sigmaS", "sigmaT"), ("pS", "pT"), ("sPrime", "tPrime"))


# ------------------------------------------------------------ transforms


def identity(p, site=None, model=None):
    w = _witness("identity", "qT = qS && t = s", pairs={"L": _identity_pairs(p)},
                 bisim="L(src.loc, tgt.loc) && src.alpha = tgt.alpha", skolem=FOLDING_SKOLEMS)
    return TransformResult("identity", p, w, "target equals source; the witness is state equality")


def _fold_expr(e, facts, d):
    if isinstance(e, (Lit, Choose)) or has_array_read(e):
        return e
    v = peval(e, facts, d)
    return e if v is None else Lit(v)


def _fold_instr(p, ins, facts):
    d = p.domain
    if isinstance(ins, Assign):
        return Assign(ins.var, _fold_expr(ins.expr, facts, d))
    if isinstance(ins, Output):
        return Output(ins.chan, _fold_expr(ins.expr, facts, d))
    if isinstance(ins, Block):
        body = []
        for sub in ins.body:
            body.append(_fold_instr(p, sub, facts))
            facts = _transfer(p, sub, facts)
        return Block(tuple(body))
    return ins


def folding_witness(p, sites, facts=None, edges=None):
    """Folding template: state equality plus the constant facts the folded sites rely on."""
    if facts is None:
        facts, edges = constant_facts(p)
    roots = {(lab, v) for lab in sites if lab in facts for v in _reads(p, p.instrs[lab])}
    need = needed_facts(p, facts, edges, roots)
    ft = _facts_text(p, facts, need, "tgt")
    R = "qT = qS && t = s" + (f" && alltracks({_conj(ft)})" if ft else "")
    B = _conj(["L(src.loc, tgt.loc)", "src.alpha = tgt.alpha"] + ft)
    return _witness("constant_folding", R, pairs={"L": _identity_pairs(p)}, bisim=B, skolem=FOLDING_SKOLEMS)


def constant_folding(p, site=None, model=None):
    facts, edges = constant_facts(p)
    sites = p.labels if site is None else (site,) if isinstance(site, str) else tuple(site)
    instrs = dict(p.instrs)
    folded = []
    for lab in sites:
        ins = _check_site(p, lab)
        if lab not in facts:
            continue
        new = _fold_instr(p, ins, facts[lab])
        if new != ins:
            instrs[lab] = new
            folded.append(lab)
    if site is not None and not folded:
        raise TransformError(f"nothing at {', '.join(sites)} folds to a constant")
    t = _build(p, p.labels, instrs)
    w = folding_witness(p, folded, facts, edges)
    note = f"folded {', '.join(folded)}" if folded else "no foldable expression"
    return TransformResult("constant_folding", t, w, note)


def _static_event(p, ins, model):
    """The event ``ins`` emits under ``model`` when it does not depend on the state."""
    if p.is_silent_instr(ins, model):
        return EPS
    if isinstance(ins, (Input, Output)) or not model.mem_access_indices:
        return None
    acc = []
    vals = (0,) * len(p.cells)

    def grab(e):
        for sub in _idx_nodes(e):
            if peval(sub.index, {}, p.domain) is None:
                raise TransformError(f"'{format_instr(ins)}' reads memory at a state-dependent index")
        p.reads(e, vals, acc)

    if isinstance(ins, Assign):
        grab(ins.expr)
    elif isinstance(ins, AStore):
        grab(ins.index)
        grab(ins.value)
        k = peval(ins.index, {}, p.domain)
        if k is None:
            raise TransformError(f"'{format_instr(ins)}' writes memory at a state-dependent index")
        acc.append((ins.array, k % p.array_len[ins.array]))
    else:
        return None
    from .secir import mem

    return mem(*acc)


def _idx_nodes(e):
    if isinstance(e, Idx):
        yield e
        yield from _idx_nodes(e.index)
    elif isinstance(e, Un):
        yield from _idx_nodes(e.arg)
    elif isinstance(e, Bin):
        yield from _idx_nodes(e.left)
        yield from _idx_nodes(e.right)
    elif isinstance(e, Cond):
        for x in (e.test, e.then, e.other):
            yield from _idx_nodes(x)


def _event_text(e):
    if e.kind == "eps":
        return "eps"
    return "mem(" + "; ".join(f"{a}, {i}" for a, i in e.payload[1]) + ")"


def _update_text(ins):
    if isinstance(ins, Assign):
        return f"{ins.var} := {format_expr(ins.expr)}"
    if isinstance(ins, AStore):
        return f"{ins.array}[{format_expr(ins.index)}] := {format_expr(ins.value)}"
    return None


def _alpha_after(side, ins):
    u = _update_text(ins)
    return f"{side}.alpha" if u is None else f"{side}.alpha[{u}]"


_MOVABLE = (Assign, AStore, Skip)


def common_branch_factorization(p, site, model):
    br = _check_site(p, site, (Branch,))
    lt, le = br.then, br.other
    if END in (lt, le) or lt == le:
        raise TransformError(f"{site}: both branches must be distinct labelled instructions")
    if p.next_label(site) != lt:
        raise TransformError(f"{site}: the then-branch must directly follow the conditional")
    ins = p.instrs[lt]
    if ins != p.instrs[le]:
        raise TransformError(f"{site}: branches start with different instructions")
    if not isinstance(ins, _MOVABLE) or (isinstance(ins, Assign) and isinstance(ins.expr, Choose)):
        raise TransformError(f"{site}: cannot move '{format_instr(ins)}' out of the conditional")
    preds = p.predecessors()
    if preds[lt] != [site] or preds[le] != [site]:
        raise TransformError(f"{site}: branch heads must only be reached from the conditional")
    touched = _writes(ins) | ({ins.array} if isinstance(ins, AStore) else set())
    if touched & expr_vars(br.cond):
        raise TransformError(f"{site}: the moved instruction writes the guard's variables")
    ev = _static_event(p, ins, model)
    if ev is None:
        raise TransformError(f"{site}: '{format_instr(ins)}' has a state-dependent observation")
    lt2, le2 = p.next_label(lt), p.next_label(le)
    labels = tuple(lab for lab in p.labels if lab != le)
    instrs = {lab: p.instrs[lab] for lab in labels}
    instrs[site] = ins
    instrs[lt] = Branch(br.cond, lt2, le2)
    t = _build(p, labels, instrs)
    cond = format_expr(br.cond)
    pick = f"(src.alpha({cond}) != 0 ? src.loc = {lt} : src.loc = {le})"
    moved = _conj([f"tgt.loc = {lt}", pick, f"tgt.alpha = {_alpha_after('src', ins)}"])
    R = (f"(qT = qS && t = s && alltracks(tgt.loc != {lt})) || "
         f"(alltracks({moved}) && Delta(qS, all({_event_text(ev)}), qT))")
    B = f"(src.loc = tgt.loc && tgt.loc != {lt} && src.alpha = tgt.alpha) || ({moved})"
    w = _witness("common_branch_factorization", R, bisim=B)
    return TransformResult("common_branch_factorization", t, w,
                           f"moved '{format_instr(ins)}' from {lt}/{le} to {site}; automaton lag {_event_text(ev)}")


def _cells_touched(p, ins, vals):
    """(written cells, read cells) of ``ins`` in state ``vals``."""
    acc = []
    if isinstance(ins, Assign):
        p.reads(ins.expr, vals, acc)
        reads = {f"{a}[{i}]" for a, i in acc} | _scalars(p, ins.expr)
        return {ins.var}, reads
    if isinstance(ins, AStore):
        p.reads(ins.index, vals, acc)
        p.reads(ins.value, vals, acc)
        reads = {f"{a}[{i}]" for a, i in acc} | _scalars(p, ins.index) | _scalars(p, ins.value)
        k = p.eval(ins.index, vals) % p.array_len[ins.array]
        return {f"{ins.array}[{k}]"}, reads
    return set(), set()


def _independent(p, i1, i2):
    names = sorted(_reads(p, i1) | _reads(p, i2))
    for combo in itertools.product(range(p.domain), repeat=len(names)):
        vals = [0] * len(p.cells)
        for n, x in zip(names, combo):
            vals[p.index[n]] = x
        vals = tuple(vals)
        w1, r1 = _cells_touched(p, i1, vals)
        w2, r2 = _cells_touched(p, i2, vals)
        if w1 & (w2 | r2) or w2 & r1:
            return False
    return True


def switch_instructions(p, site, model, mode="plain"):
    if mode not in ("plain", "synchronized", "block"):
        raise TransformError(f"unknown switching mode {mode!r}")
    i1 = _check_site(p, site, _MOVABLE)
    l2 = p.next_label(site)
    if l2 == END:
        raise TransformError(f"{site} is the last instruction")
    i2 = _check_site(p, l2, _MOVABLE)
    for ins in (i1, i2):
        if isinstance(ins, Assign) and isinstance(ins.expr, Choose):
            raise TransformError("cannot switch a nondeterministic assignment")
    if p.predecessors()[l2] != [site]:
        raise TransformError(f"{l2} is reachable other than from {site}")
    if not _independent(p, i1, i2):
        raise TransformError(f"'{format_instr(i1)}' and '{format_instr(i2)}' are not independent")
    silent = p.is_silent_instr(i1, model) and p.is_silent_instr(i2, model)
    if not silent and mode == "plain":
        raise TransformError(
            f"switching observable instructions under {model.name} becomes harder: "
            "use mode 'synchronized' (lockstep tracks) or 'block' (one transition)")
    if mode == "block":
        if not (p.is_silent_instr(i1, model) or p.is_silent_instr(i2, model)):
            raise TransformError("a block may emit at most one observation; both instructions are observable")
        labels = tuple(lab for lab in p.labels if lab != l2)
        src = {lab: p.instrs[lab] for lab in labels}
        tgt = dict(src)
        src[site] = Block((i1, i2))
        tgt[site] = Block((i2, i1))
        s2, t = _build(p, labels, src), _build(p, labels, tgt)
        w = _witness("switch_instructions", "qT = qS && t = s", pairs={"L": _identity_pairs(s2)},
                     bisim="L(src.loc, tgt.loc) && src.alpha = tgt.alpha")
        return TransformResult("switch_instructions", t, w,
                               f"{site}/{l2} merged into one block transition on both sides", source=s2)
    instrs = dict(p.instrs)
    instrs[site], instrs[l2] = i2, i1
    t = _build(p, p.labels, instrs)
    per = _conj([
        "src.loc = tgt.loc",
        f"(src.loc != {l2} -> src.alpha = tgt.alpha)",
        f"(src.loc = {l2} -> {_alpha_after('src', i2)} = {_alpha_after('tgt', i1)})",
    ])
    sync = "sync(tgt) && sync(src) && " if mode == "synchronized" else ""
    w = _witness("switch_instructions", f"qT = qS && {sync}alltracks({per})", bisim=per)
    return TransformResult("switch_instructions", t, w, f"switched {site} and {l2} ({mode})")


def _reachable_labels(p, instrs):
    seen = set()
    todo = [p.entry]
    while todo:
        lab = todo.pop()
        if lab in seen or lab in (END, DONE):
            continue
        seen.add(lab)
        ins = instrs[lab]
        if isinstance(ins, Branch):
            todo += [ins.then, ins.other]
        elif isinstance(ins, Goto):
            todo.append(ins.target)
        elif not isinstance(ins, Halt):
            todo.append(p.next_label(lab))
    return seen


def dead_branch_elimination(p, site, model=None):
    br = _check_site(p, site, (Branch,))
    facts, edges = constant_facts(p)
    c = peval(br.cond, facts.get(site, {}), p.domain)
    if c is None:
        raise TransformError(f"{site}: guard '{format_expr(br.cond)}' is not provably constant")
    live = br.then if c else br.other
    if live == END:
        raise TransformError(f"{site}: the live branch is empty")
    if p.predecessors()[live] != [site]:
        raise TransformError(f"{site}: {live} is also reached from elsewhere")
    cut = dict(p.instrs)
    cut[site] = Goto(live)
    keep = _reachable_labels(p, cut) - {site}

    def name(lab):
        return site if lab == live else lab

    labels = tuple(name(lab) for lab in p.labels if lab in keep)
    instrs = {name(lab): _retarget(p.instrs[lab], name) for lab in p.labels if lab in keep}
    t = _build(p, labels, instrs)
    # fall-through must land where the source would continue
    for lab in p.labels:
        if lab not in keep:
            continue
        want = tuple(site if s == live else s for s in p.successors_of(lab))
        want = tuple(site if s == site else s for s in want)
        if t.successors_of(name(lab)) != want:
            raise TransformError(f"{site}: removing the dead branch changes the layout after {lab}")
    pairs = [(lab, name(lab)) for lab in p.labels if lab in keep] + [(site, site), (END, END), (DONE, DONE)]
    need = needed_facts(p, facts, edges, {(site, v) for v in _scalars(p, br.cond)})
    per = _conj(["L(src.loc, tgt.loc)", "src.alpha = tgt.alpha"] + _facts_text(p, facts, need, "src"))
    w = _witness("dead_branch_elimination", f"qT = qS && alltracks({per})", pairs={"L": pairs},
                 stutter=("target", f"tracksum(src.loc = {site} ? 1 : 0)", 2), bisim=per)
    dead = sorted(set(p.labels) - keep - {site})
    return TransformResult("dead_branch_elimination", t, w,
                           f"guard at {site} is always {'true' if c else 'false'}; removed {', '.join(dead) or 'nothing'}; "
                           f"{live} now lives at {site}")


def _fresh(p, prefix, n):
    taken = set(p.vars) | {a for a, _ in p.arrays} | set(p.labels)
    out = []
    i = 0
    while len(out) < n:
        cand = f"{prefix}{i}"
        if cand not in taken:
            out.append(cand)
        i += 1
    return out


def expression_flattening(p, site, model):
    ins = _check_site(p, site, (Assign, Block))
    body = list(ins.body) if isinstance(ins, Block) else [ins]
    pos = next((i for i, s in enumerate(body) if isinstance(s, Assign)
                and not isinstance(s.expr, (Lit, Var, Idx))), None)
    if pos is None:
        raise TransformError(f"{site}: no compound expression to flatten")
    target = body[pos]
    expr = target.expr.alts[0] if isinstance(target.expr, Choose) else target.expr
    if model.mem_access_indices and has_array_read(expr):
        raise TransformError(f"{site}: flattening memory reads would split one observation into several")
    names = iter(_fresh(p, "t", 64))
    temps, code = [], []

    def atom(e):
        if isinstance(e, (Lit, Var)):
            return e
        node = shallow(e)
        t = next(names)
        temps.append(t)
        code.append(Assign(t, node))
        return Var(t)

    def shallow(e):
        if isinstance(e, Bin):
            return Bin(e.op, atom(e.left), atom(e.right))
        if isinstance(e, Un):
            return Un(e.op, atom(e.arg))
        if isinstance(e, Idx):
            return Idx(e.array, atom(e.index))
        if isinstance(e, Cond):
            return Cond(atom(e.test), atom(e.then), atom(e.other))
        return e

    top = shallow(expr)
    new_body = body[:pos] + code + [Assign(target.var, top)] + body[pos + 1:]
    instrs = dict(p.instrs)
    instrs[site] = Block(tuple(new_body))
    t = _build(p, p.labels, instrs, vars=p.vars + tuple(temps))
    keep = ", ".join(list(p.vars) + [a for a, _ in p.arrays])
    R = f"qT = qS && alltracks(src.loc = tgt.loc && eqon({{{keep}}}, src.alpha, tgt.alpha))"
    w = _witness("expression_flattening", R, universal_only=True)
    pick = " (first alternative of the choice)" if isinstance(target.expr, Choose) else ""
    return TransformResult("expression_flattening", t, w,
                           f"{site}: {format_expr(expr)}{pick} flattened through {', '.join(temps) or 'no'} temporaries")


def loop_peeling(p, site, model=None):
    br = _check_site(p, site, (Branch,))
    first, exit_ = br.then, br.other
    if p.next_label(site) != first:
        raise TransformError(f"{site}: the loop body must directly follow the loop guard")
    start = p.labels.index(site) + 1
    back = next((i for i in range(start, len(p.labels))
                 if p.instrs[p.labels[i]] == Goto(site)), None)
    if back is None:
        raise TransformError(f"{site}: no back edge 'goto {site}' after the guard")
    region = p.labels[start:back + 1]
    inside = set(region)
    if exit_ in inside:
        raise TransformError(f"{site}: the loop exit lies inside the body")
    for lab in region:
        for s in p.successors_of(lab):
            if s not in inside and s not in (site, exit_):
                raise TransformError(f"{site}: {lab} leaves the loop other than through {exit_}")
    facts, edges = constant_facts(p)
    entry = [q for q in p.predecessors()[site] if q not in inside]
    roots = set()
    for q in entry:
        if q not in facts:
            continue
        out = facts[q] if isinstance(p.instrs[q], Branch) else _transfer(p, p.instrs[q], facts[q])
        if not peval(br.cond, out, p.domain):
            raise TransformError(f"{site}: guard '{format_expr(br.cond)}' is not provably true on entry from {q}")
        for v in _scalars(p, br.cond):
            roots |= {(q, dep) for dep in _deps(p, p.instrs[q], v)}
    taken = set(p.labels)
    peel = {}
    for lab in region:
        name = f"P_{lab}"
        while name in taken:
            name = "P" + name
        peel[lab] = name
        taken.add(name)
    pf = peel[first]

    def outside(lab):
        return pf if lab == site else lab

    labels, instrs = [], {}
    for lab in p.labels:
        if lab == site:
            for r in region:
                labels.append(peel[r])
                instrs[peel[r]] = _retarget(p.instrs[r], lambda x: peel.get(x, x))
        labels.append(lab)
        ins = p.instrs[lab]
        instrs[lab] = _retarget(ins, outside) if lab in entry else ins
    t = _build(p, labels, instrs)
    pairs = _identity_pairs(p) + [(site, pf)] + [(r, peel[r]) for r in region]
    phi0 = f"(tgt.loc = {pf} && src.loc = {site} -> src.alpha({format_expr(br.cond)}) != 0)"
    need = needed_facts(p, facts, edges, roots)
    per = _conj(["L(src.loc, tgt.loc)", "src.alpha = tgt.alpha", phi0] + _facts_text(p, facts, need, "src"))
    w = _witness("loop_peeling", f"qT = qS && alltracks({per})", pairs={"L": pairs},
                 stutter=("target", f"tracksum(src.loc = {site} && tgt.loc = {pf} ? 1 : 0)", 2), bisim=per)
    return TransformResult("loop_peeling", t, w,
                           f"peeled the first iteration of the loop at {site} into {', '.join(peel.values())}")


_REG_NAMES = "ABCDEFGH"


def register_spilling(p, site=None, model=None, regs=2):
    """Allocate the scalars of a straight-line program to ``regs`` registers plus a spill array."""
    if p.arrays:
        raise TransformError("register allocation is only modelled for scalar programs")
    for lab in p.labels:
        ins = p.instrs[lab]
        if not isinstance(ins, (Assign, Input, Output, Skip)) or (
                isinstance(ins, Assign) and isinstance(ins.expr, Choose)):
            raise TransformError(f"{lab}: register allocation is only modelled for straight-line code")
    if not 1 <= regs <= len(_REG_NAMES):
        raise TransformError(f"register count must be between 1 and {len(_REG_NAMES)}")
    rnames = tuple(f"Reg{_REG_NAMES[i]}" for i in range(regs))
    slot = {v: i for i, v in enumerate(p.vars)}
    live = live_after(p)
    order = list(p.labels)

    def next_use(v, i):
        for j in range(i, len(order)):
            if v in _reads(p, p.instrs[order[j]]):
                return j
        return len(order) + 1

    holder = {}  # reg -> var
    spilled = set(p.vars)  # vars whose spill slot holds their current value
    out_labels, out_instrs, sigma, pairs, depth = [], {}, [], [], {}

    def reg_of(v):
        return next((r for r, x in holder.items() if x == v), None)

    def snapshot(loc):
        for r in rnames:
            if r in holder:
                sigma.append(((r, loc), holder[r]))
        for v in p.vars:
            if v in spilled:
                sigma.append(((f"spill[{slot[v]}]", loc), v))

    for i, lab in enumerate(order):
        ins = p.instrs[lab]
        reads = [v for v in p.vars if v in _reads(p, ins)]
        pending = []

        def emit(new_ins):
            pending.append(new_ins)

        def evict(r, needed_later):
            u = holder.pop(r, None)
            if u is not None and u in needed_later and u not in spilled:
                emit(AStore("spill", Lit(slot[u]), Var(r)))
                spilled.add(u)

        live_here = live[lab] | set(reads)
        pinned = {reg_of(v) for v in reads} - {None}

        def pick(exclude, dest=None):
            free = [r for r in rnames if r not in holder and r not in exclude]
            if free:
                return free[0]
            dead = [r for r in rnames if r not in exclude and holder[r] not in live_here]
            if dead:
                return dead[0]
            if dest is not None:
                own = reg_of(dest)
                if own is not None and own not in exclude:
                    return own
                ops = [r for r in rnames if r not in exclude and holder[r] in reads and holder[r] not in live[lab]]
                if ops:
                    return ops[0]
                ops = [r for r in rnames if r not in exclude and holder[r] in reads]
                if ops:
                    return max(ops, key=lambda r: next_use(holder[r], i + 1))
            cands = [r for r in rnames if r not in exclude]
            if not cands:
                raise TransformError(f"{lab}: needs more than {regs} registers")
            return max(cands, key=lambda r: next_use(holder[r], i + 1))

        for v in reads:
            if reg_of(v) is None:
                r = pick(pinned)
                evict(r, live_here)
                emit(Assign(r, Idx("spill", Lit(slot[v]))))
                holder[r] = v
                pinned.add(r)
        ren = {v: Var(reg_of(v)) for v in reads}
        if isinstance(ins, (Assign, Input)):
            x = ins.var
            r = pick(set(), dest=x)
            u = holder.get(r)
            if u is not None and u != x:
                if u in live[lab] and u not in spilled:
                    emit(AStore("spill", Lit(slot[u]), Var(r)))
                    spilled.add(u)
            main = Input(r, ins.chan) if isinstance(ins, Input) else Assign(r, _rename(ins.expr, ren))
        elif isinstance(ins, Output):
            main = Output(ins.chan, _rename(ins.expr, ren))
        else:
            main = Skip()
        state = (dict(holder), set(spilled))
        names = [f"{lab}_{k + 1}" for k in range(len(pending))]
        _replay_snapshots(p, names, pending, state, rnames, slot, sigma)
        for n, pi in zip(names, pending):
            out_labels.append(n)
            out_instrs[n] = pi
            pairs.append((lab, n))
            depth[n] = len(pending) - names.index(n)
        out_labels.append(lab)
        out_instrs[lab] = main
        pairs.append((lab, lab))
        snapshot(lab)
        if isinstance(ins, (Assign, Input)):
            old = reg_of(ins.var)
            if old is not None:
                holder.pop(old)
            holder[r] = ins.var
            spilled.discard(ins.var)
    snapshot(END)
    snapshot(DONE)
    pairs += [(END, END), (DONE, DONE)]
    t = _build(p, tuple(out_labels), out_instrs, vars=rnames, arrays=(("spill", max(1, len(p.vars))),))
    groups = defaultdict(list)
    for n, k in depth.items():
        groups[k].append(n)
    rank = "0"
    for k in sorted(groups):
        rank = f"(tgt.loc in {{{', '.join(groups[k])}}} ? {k} : {rank})"
    R = "qT = qS && alltracks(L(src.loc, tgt.loc) && sigma(S))"
    w = _witness("register_spilling", R, pairs={"L": pairs}, sigma={"S": sigma},
                 stutter=("source", f"tracksum{rank}" if rank.startswith("(") else "0", max(groups or [0]) + 1),
                 bisim="L(src.loc, tgt.loc) && sigma(S)")
    moves = sum(len(v) for v in groups.values())
    return TransformResult("register_spilling", t, w, f"{regs} registers, {moves} spill/reload instruction(s)")


def _replay_snapshots(p, names, pending, state, rnames, slot, sigma):
    """Record sigma entries at each inserted label.

    ``state`` is the allocation after all pending moves; walk the moves
    backwards to recover the state in front of each of them.
    """
    holder, spilled = state
    states = []
    h, s = dict(holder), set(spilled)
    for ins in reversed(pending):
        # undo one move
        if isinstance(ins, Assign):  # reload: reg := spill[k]
            h.pop(ins.var, None)
        else:  # spill: spill[k] := reg
            v = next(v for v, k in slot.items() if k == ins.index.value)
            s.discard(v)
            h[ins.value.name] = v
        states.append((dict(h), set(s)))
    states.reverse()
    for name, (h, s) in zip(names, states):
        for r in rnames:
            if r in h:
                sigma.append(((r, name), h[r]))
        for v in p.vars:
            if v in s:
                sigma.append(((f"spill[{slot[v]}]", name), v))


def _rename(e, ren):
    if isinstance(e, Var):
        return ren.get(e.name, e)
    if isinstance(e, Un):
        return Un(e.op, _rename(e.arg, ren))
    if isinstance(e, Bin):
        return Bin(e.op, _rename(e.left, ren), _rename(e.right, ren))
    if isinstance(e, Cond):
        return Cond(_rename(e.test, ren), _rename(e.then, ren), _rename(e.other, ren))
    return e


def dead_store_elimination(p, site, model=None):
    ins = _check_site(p, site, (Assign,))
    if ins.var in live_after(p)[site]:
        raise TransformError(f"{site}: {ins.var} is read later; the store is not dead")
    instrs = dict(p.instrs)
    instrs[site] = Skip()
    t = _build(p, p.labels, instrs)
    return TransformResult("dead_store_elimination", t, None,
                           f"{site}: '{format_instr(ins)}' is dead; no witness is emitted because erasing the "
                           "store keeps the old value in memory, visible to a final-memory attacker")


_TRANSFORMS = {
    "identity": identity,
    "constant_folding": constant_folding,
    "common_branch_factorization": common_branch_factorization,
    "switch_instructions": switch_instructions,
    "dead_branch_elimination": dead_branch_elimination,
    "expression_flattening": expression_flattening,
    "loop_peeling": loop_peeling,
    "register_spilling": register_spilling,
    "dead_store_elimination": dead_store_elimination,
}


def apply_transform(kind, p, site=None, model=None, **opts):
    """Apply transformation ``kind`` at ``site``; see :data:`KINDS`."""
    from .secir import IO

    try:
        fn = _TRANSFORMS[kind]
    except KeyError:
        raise TransformError(f"unknown transformation {kind!r}") from None
    model = IO if model is None else model
    if site is None and kind not in ("identity", "constant_folding", "register_spilling"):
        raise TransformError(f"{kind} needs a site")
    return fn(p, site, model, **opts)


def builtin_witness(kind, p, t, site=None, model=None, strict=True, **opts):
    """The witness pair ``(R-witness, bisim formula or None)`` for ``t`` as produced from ``p``.

    With ``strict=False`` the folding template is instantiated for whatever
    sites differ, even when ``t`` is not a folding of ``p`` (used for
    negative controls).
    """
    if kind == "constant_folding":
        sites = [lab for lab in p.labels if lab in t.instrs and p.instrs[lab] != t.instrs[lab]]
        if strict:
            expect = constant_folding(p, sites or None, model).target if sites else p
            if expect != t:
                raise TransformError("template mismatch: target is not a constant folding of the source")
        w = folding_witness(p, sites)
        return w, w.bisim
    r = apply_transform(kind, p, site, model, **opts)
    if strict and r.target != t:
        raise TransformError(f"template mismatch: target is not the {kind} of the source at {site}")
    if r.witness is None:
        raise TransformError(f"{kind} has no witness")
    return r.witness, r.witness.bisim
