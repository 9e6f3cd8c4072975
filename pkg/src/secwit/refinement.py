"""Explicit-state witness checkers.

``check_refinement`` validates a refinement relation between ``A x T^k`` and
``A x S^k``; ``check_bisimulation`` validates a single-track (stuttering)
bisimulation; ``check_relative_refinement`` combines both.

Quantification domains for target states:

* ``inductive``: every target state whose automaton state and locations
  occur in the reachable product, with arbitrary variable values. This is
  the inductive reading of the relation, so a witness that only happens to
  hold on reachable states is rejected.
* ``reachable``: only reachable product states on both sides. A pass shows
  that R restricted to reachable pairs is a refinement relation, which is
  still enough for preservation.
* ``auto`` (default): ``inductive`` unless that domain exceeds
  ``AUTO_LIMIT`` target states, then ``reachable``. The verdict's stats
  name the domain actually used.

Source states related to a target state are generated from the relation
itself (see :class:`RelationIndex`), never by scanning all pairs.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Optional

from .automaton import BState, ProgramLTS, ProductSystem, product
from .secir import EPS, BudgetExceeded, Config, Inconclusive, Var, initial_config
from .witness import (
    AllTracks, Attr, AutRef, BinOp, Call, DeltaAtom, EqOn, Env, FinAtom, InSet,
    Node, SideRef, Subst, Sym, Sync, TrackSum, WitnessError, _bool,
)

LEVELS = ("2a", "2b", "2c", "2d")
DOMAINS = ("auto", "inductive", "reachable")
# "auto" quantifies inductively while the target domain stays below this size
AUTO_LIMIT = 150_000


@dataclass
class Counterexample:
    clause: str
    target: object
    source: object = None
    step: Optional[tuple] = None  # (event vector, target successor)
    detail: str = ""
    automaton: int = 0

    def to_dict(self):
        def st(x):
            if x is None:
                return None
            if isinstance(x, Config):
                return str(x)
            q, cs = x
            return {"automaton": _qstr(q), "configs": [str(c) for c in cs]}

        d = {"clause": self.clause, "target": st(self.target), "source": st(self.source),
             "detail": self.detail, "automaton_index": self.automaton}
        if self.step is not None:
            v, x2 = self.step
            single = hasattr(v, "kind")  # bisim steps carry one event, not a vector
            d["step"] = {"events": str(v) if single else [str(e) for e in v],
                         "target_next": st(x2)}
        return d


def _qstr(q):
    if isinstance(q, BState):
        bufs = ["[" + " ".join(map(str, b)) + "]" for b in q.bufs]
        return f"{q.q} {' '.join(bufs)} bit={q.bit}"
    return str(q)


@dataclass
class Verdict:
    status: str  # valid | invalid | inconclusive
    counterexample: Optional[Counterexample] = None
    reason: Optional[str] = None
    stats: dict = field(default_factory=dict)

    @property
    def valid(self):
        return self.status == "valid"

    def to_dict(self):
        d = {"status": self.status, "stats": self.stats}
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample.to_dict()
        if self.reason:
            d["reason"] = self.reason
        return d


# ------------------------------------------------------------ formula shape


def _children(node):
    for v in vars(node).values():
        if isinstance(v, Node):
            yield v
        elif isinstance(v, tuple):
            for x in v:
                if isinstance(x, Node):
                    yield x


def _is_global(node):
    """True if ``node`` cannot be evaluated on a single track pair."""
    if isinstance(node, (AutRef, DeltaAtom, FinAtom, Sync, AllTracks)):
        return True
    if isinstance(node, SideRef) and node.index is not None:
        return True
    return any(_is_global(c) for c in _children(node))


def _mentions(node, cls):
    return isinstance(node, cls) or any(_mentions(c, cls) for c in _children(node))


def _flatten(node, op):
    if isinstance(node, BinOp) and node.op == op:
        return _flatten(node.left, op) + _flatten(node.right, op)
    return [node]


def _is_side(node, side, attr=None):
    if attr is None:
        return isinstance(node, SideRef) and node.side == side and node.index is None
    return isinstance(node, Attr) and node.attr == attr and _is_side(node.base, side)


def _pair(node, pred_a, pred_b):
    return isinstance(node, BinOp) and node.op in ("=", "==") and (
        (pred_a(node.left) and pred_b(node.right)) or (pred_b(node.left) and pred_a(node.right))
    )


@dataclass
class Clause:
    aut_eq: bool
    per_track: list
    globals_: list


def clauses_of(formula):
    """Disjunctive clauses, each split into automaton, per-track and global parts."""
    out = []
    for disj in _flatten(formula, "||"):
        aut_eq, per, glob = False, [], []
        for c in _flatten(disj, "&&"):
            if _pair(c, lambda n: isinstance(n, AutRef) and n.which == "qT",
                     lambda n: isinstance(n, AutRef) and n.which == "qS"):
                aut_eq = True
            elif _pair(c, lambda n: _is_side(n, "tgt"), lambda n: _is_side(n, "src")):
                per.append(c)  # t = s: pointwise
            elif isinstance(c, AllTracks) and not _is_global(c.body):
                per.extend(_flatten(c.body, "&&"))
            else:
                glob.append(c)
        out.append(Clause(aut_eq, per, glob))
    return out


def single_track_clauses(formula):
    return [Clause(False, _flatten(d, "&&"), []) for d in _flatten(formula, "||")]


# ---------------------------------------------------------- relation index


class RelationIndex:
    """Enumerates source states related to a target state by a witness formula."""

    def __init__(self, formula, w, tprog, sprog, aut=None, s_aut_states=(), single=False):
        self.formula = formula
        self.w = w
        self.tprog, self.sprog = tprog, sprog
        self.aut = aut
        self.s_aut_states = tuple(s_aut_states)
        self.clauses = single_track_clauses(formula) if single else clauses_of(formula)
        self._track_cache = {}
        self._s_locs = sprog.locations
        self._s_all_vals = None
        # the source progress bit only matters to formulas that test acceptance
        rank = w.stutter.rank if w is not None and w.stutter is not None else None
        self.bit_free = not (_mentions(formula, FinAtom) or (rank is not None and _mentions(rank, FinAtom)))

    def _all_vals(self):
        if self._s_all_vals is None:
            self._s_all_vals = list(itertools.product(range(self.sprog.domain), repeat=len(self.sprog.cells)))
        return self._s_all_vals

    def _loc_hint(self, node, tc):
        if _pair(node, lambda n: _is_side(n, "src", "loc"), lambda n: _is_side(n, "tgt", "loc")):
            return {tc.loc}
        if _pair(node, lambda n: _is_side(n, "src"), lambda n: _is_side(n, "tgt")):
            return {tc.loc}
        if _pair(node, lambda n: _is_side(n, "src", "loc"), lambda n: isinstance(n, Sym)):
            sym = node.right if isinstance(node.right, Sym) else node.left
            return {sym.name}
        if isinstance(node, InSet) and _is_side(node.arg, "src", "loc"):
            return set(node.names)
        if (isinstance(node, Call) and self.w is not None and node.name in self.w.pairs
                and len(node.args) == 2 and _is_side(node.args[0], "src", "loc")
                and _is_side(node.args[1], "tgt", "loc")):
            return {a for a, b in self.w.pairs[node.name] if b == tc.loc}
        return None

    def _alpha_hint(self, node):
        same = self.sprog.cells == self.tprog.cells
        if same and (_pair(node, lambda n: _is_side(n, "src"), lambda n: _is_side(n, "tgt"))
                     or _pair(node, lambda n: _is_side(n, "src", "alpha"), lambda n: _is_side(n, "tgt", "alpha"))):
            return ("exact",)
        if isinstance(node, EqOn):
            sides = {(_is_side(node.left, "src", "alpha"), _is_side(node.right, "tgt", "alpha")),
                     (_is_side(node.left, "tgt", "alpha"), _is_side(node.right, "src", "alpha"))}
            if (True, True) in sides:
                return ("eqon", node.names)
        if same and _pair(node, lambda n: isinstance(n, Subst) and _is_side(n.base, "src", "alpha"),
                          lambda n: _is_side(n, "tgt", "alpha")):
            # tgt.alpha = src.alpha[x := e]: only the written cells are unknown
            sub = node.left if isinstance(node.left, Subst) else node.right
            written = set()
            for lhs, _ in sub.updates:
                written.update(_expand(self.sprog, [lhs.name if isinstance(lhs, Var) else lhs.array]))
            return ("eqon", tuple(c for c in self.sprog.cells if c not in written))
        return None

    def track_candidates(self, ci, tc):
        """Source configs ``sc`` with every per-track conjunct of clause ``ci`` true for ``(tc, sc)``."""
        key = (ci, tc)
        hit = self._track_cache.get(key)
        if hit is not None:
            return hit
        conj = self.clauses[ci].per_track
        sp = self.sprog
        locs = set(self._s_locs)
        alpha = None
        for c in conj:
            h = self._loc_hint(c, tc)
            if h is not None:
                locs &= h
            a = self._alpha_hint(c)
            if a is not None and (alpha is None or a[0] == "exact"):
                alpha = a
        if alpha is None:
            vals_list = self._all_vals()
        elif alpha[0] == "exact":
            vals_list = [tc.vals]
        else:
            tp = self.tprog
            fixed = {}
            for n in _expand(sp, alpha[1]):
                if n in tp.index:
                    fixed[sp.index[n]] = tc.vals[tp.index[n]]
            free = [i for i in range(len(sp.cells)) if i not in fixed]
            vals_list = []
            for combo in itertools.product(range(sp.domain), repeat=len(free)):
                v = [0] * len(sp.cells)
                for i, x in fixed.items():
                    v[i] = x
                for i, x in zip(free, combo):
                    v[i] = x
                vals_list.append(tuple(v))
        out = []
        for loc in self._s_locs:
            if loc not in locs:
                continue
            for vals in vals_list:
                sc = Config(loc, vals)
                env = Env(None, None, (tc,), (sc,), self.tprog, sp, self.aut, self.w, 0)
                if all(_bool(c.eval(env)) for c in conj):
                    out.append(sc)
        out = tuple(out)
        self._track_cache[key] = out
        return out

    def aut_candidates(self, clause, qT):
        if clause.aut_eq:
            if isinstance(qT, BState):
                if self.bit_free:
                    return (qT,)
                return (BState(qT.q, qT.bufs, 0), BState(qT.q, qT.bufs, 1))
            return (qT,)
        return self.s_aut_states

    def related(self, X):
        """All source states ``Y`` (within the candidate universe) with ``R(X, Y)``."""
        qT, tcs = X
        seen = {}
        for ci, cl in enumerate(self.clauses):
            per = [self.track_candidates(ci, tc) for tc in tcs]
            if any(not p for p in per):
                continue
            for qS in self.aut_candidates(cl, qT):
                for scs in itertools.product(*per):
                    Y = (qS, scs)
                    if Y in seen:
                        continue
                    if cl.globals_:
                        env = Env(qT, qS, tcs, scs, self.tprog, self.sprog, self.aut, self.w)
                        if not all(_bool(g.eval(env)) for g in cl.globals_):
                            continue
                    seen[Y] = None
        return list(seen)

    def viable(self, ci, tc):
        return bool(self.track_candidates(ci, tc))


def _expand(prog, names):
    out = []
    for n in names:
        if n in prog.array_len:
            out.extend(f"{n}[{i}]" for i in range(prog.array_len[n]))
        else:
            out.append(n)
    return out


def _configs_at(prog, loc):
    return [Config(loc, v) for v in itertools.product(range(prog.domain), repeat=len(prog.cells))]


# ------------------------------------------------------------- refinement


class _Refiner:
    def __init__(self, aut, s, t, m, k, w, domain, budget, bisim_guard=None, fast=True):
        if domain not in DOMAINS:
            raise ValueError(f"unknown domain {domain!r}")
        self.aut, self.s, self.t, self.m, self.k, self.w = aut, s, t, m, k, w
        self.domain = domain
        self.budget = budget
        self.PT = product(aut, t, m, k)
        self.PS = product(aut, s, m, k)
        self.I = w.input_pred()
        self.st = w.stutter
        self.buffered = getattr(aut, "buffered", False)
        self.src_stutter = bool(self.st and self.st.allows("source") and self.buffered)
        self.tgt_stutter = bool(self.st and self.st.allows("target") and self.buffered)
        self.overflow = False
        self._R = {}
        self._rank = {}
        self.bisim_guard = bisim_guard
        self.fast = fast

    def R(self, X, Y):
        key = (X, Y)
        hit = self._R.get(key)
        if hit is None:
            hit = self._R[key] = self.w.holds(X, Y, self.t, self.s, self.aut)
        return hit

    def rank(self, X, Y):
        key = (X, Y)
        hit = self._rank.get(key)
        if hit is None:
            hit = self._rank[key] = self.w.rank(X, Y, self.t, self.s, self.aut)
        return hit

    def agree(self, a, b):
        ia, ib = self.I(a), self.I(b)
        return (not ia and not ib) or (ia and ib and a == b)

    def s_steps(self, c):
        return self.s.step(self.m, c)

    def respond(self, X, Y, v, X2):
        """Best clause level reached (-1 .. 3), or ``None`` when a matching move exists."""
        p, scs = Y
        r0 = self.rank(X, Y) if self.st else 0
        opts = []
        for i, sc in enumerate(scs):
            o = [(u, c2) for u, c2 in self.s_steps(sc) if self.agree(u, v[i])]
            if self.src_stutter and not self.I(v[i]):
                o.append((EPS, None))
            opts.append(o)
        if any(not o for o in opts):
            return 1
        best = -1
        for combo in itertools.product(*opts):
            partial = any(c2 is None for _, c2 in combo)
            u = tuple(e for e, _ in combo)
            scs2 = tuple(sc if c2 is None else c2 for sc, (_, c2) in zip(scs, combo))
            qs, over = self.aut.moves(p, u)
            self.overflow = self.overflow or over
            if not qs:
                best = max(best, 0)
                continue
            for p2 in qs:
                Y2 = (p2, scs2)
                if not self.R(X2, Y2):
                    best = max(best, 2)
                    continue
                if partial and not self.rank(X2, Y2) < r0:
                    best = max(best, 2)
                    continue
                if self.aut.is_accepting(X2[0]) and not self.aut.is_accepting(p2):
                    best = max(best, 3)
                    continue
                return None
        if self.tgt_stutter:
            for Y2 in self.s_only_moves(Y):
                if self.R(X, Y2) and self.rank(X, Y2) < r0:
                    return None
        return best

    def s_only_moves(self, Y):
        p, scs = Y
        opts = []
        for sc in scs:
            o = [(u, c2) for u, c2 in self.s_steps(sc) if not self.I(u)]
            o.append((EPS, None))
            opts.append(o)
        for combo in itertools.product(*opts):
            if all(c2 is None for _, c2 in combo):
                continue
            u = tuple(e for e, _ in combo)
            scs2 = tuple(sc if c2 is None else c2 for sc, (_, c2) in zip(scs, combo))
            qs, over = self.aut.moves(p, u)
            self.overflow = self.overflow or over
            for p2 in qs:
                yield (p2, scs2)

    def shapes(self):
        gT = self.PT.explore(self.budget)
        self.overflow = self.overflow or gT.overflow
        reach = gT.nodes[1:]
        return reach, list(dict.fromkeys((q, tuple(c.loc for c in cs)) for q, cs in reach))

    def _viable_lists(self, index, locs, ci, cache):
        out = []
        for loc in locs:
            key = (ci, loc)
            if key not in cache:
                cache[key] = [tc for tc in _configs_at(self.t, loc) if index.viable(ci, tc)]
            out.append(cache[key])
        return out

    def inductive_domain(self, index, shapes, restrict=None):
        """Target states over reachable shapes; ``restrict`` keeps only states
        with some track config in ``restrict[(locs, i)]``."""
        cache = {}
        seen = set()
        for q, locs in shapes:
            for ci in range(len(index.clauses)):
                lists = self._viable_lists(index, locs, ci, cache)
                if restrict is None:
                    combos = itertools.product(*lists)
                else:
                    combos = itertools.chain.from_iterable(
                        itertools.product(*(lists[:i] + [[tc for tc in lists[i] if tc in sus]] + lists[i + 1:]))
                        for i, sus in ((i, restrict.get((locs, i), ())) for i in range(len(locs))) if sus)
                for tcs in combos:
                    X = (q, tcs)
                    if X not in seen:
                        seen.add(X)
                        yield X

    def domain_size(self, index, shapes, restrict=None):
        """Size of :meth:`inductive_domain` (an upper bound when restricted)."""
        cache = {}
        total = 0
        for _, locs in shapes:
            for ci in range(len(index.clauses)):
                sizes = [len(lst) for lst in self._viable_lists(index, locs, ci, cache)]
                if restrict is None:
                    total += math.prod(sizes)
                else:
                    total += sum(len(restrict.get((locs, i), ())) * math.prod(sizes[:i] + sizes[i + 1:])
                                 for i in range(len(sizes)))
        return total

    # Per-track fast path. For a single clause ``qT = qS && alltracks(phi)``
    # a source answer that emits exactly the target's events (idling only
    # where the target step is silent) keeps both automaton runs identical,
    # so the joint obligation reduces to per-track facts about phi and the
    # rank. Target states whose per-track facts do not combine into an answer
    # are handed to the exact check.

    def fast_applicable(self, index):
        if len(index.clauses) != 1:
            return False
        cl = index.clauses[0]
        if not cl.aut_eq or cl.globals_:
            return False
        if self.st is not None:
            return self.buffered and isinstance(self.st.rank, TrackSum) and not _is_global(self.st.rank.body)
        return True

    def fast_check(self, index, shapes):
        """Return ``restrict`` for :meth:`inductive_domain`, or ``None`` if not decidable here."""
        conj = index.clauses[0].per_track
        t, s, m = self.t, self.s, self.m

        def phi(tc, sc):
            env = Env(None, None, (tc,), (sc,), t, s, self.aut, self.w, 0)
            return all(_bool(c.eval(env)) for c in conj)

        def rho(tc, sc):
            if self.st is None:
                return 0
            env = Env(None, None, (tc,), (sc,), t, s, self.aut, self.w, 0)
            v = self.st.rank.body.eval(env)
            return int(v)

        locs_all = sorted({loc for _, locs in shapes for loc in locs})
        sigs = {}
        top = {}
        for loc in locs_all:
            table = {}
            hi = 0
            for tc in _configs_at(t, loc):
                scs = index.track_candidates(0, tc)
                if not scs:
                    continue
                tsteps = t.step(m, tc)
                for sc in scs:
                    r0 = rho(tc, sc)
                    if r0 < 0:
                        return None
                    hi = max(hi, r0)
                    ssteps = s.step(m, sc)
                    for e, tc2 in tsteps:
                        ok, dmin = False, None
                        for u, sc2 in ssteps:
                            if u == e and phi(tc2, sc2):
                                ok = True
                                d = rho(tc2, sc2) - r0
                                dmin = d if dmin is None else min(dmin, d)
                        if self.src_stutter and e.kind == "eps" and phi(tc2, sc):
                            d = rho(tc2, sc) - r0
                            dmin = d if dmin is None else min(dmin, d)
                        table.setdefault((ok, dmin), set()).add(tc)
            sigs[loc] = table
            top[loc] = hi
        restrict = {}
        for locs in dict.fromkeys(locs for _, locs in shapes):
            if self.st is not None and sum(top[loc] for loc in locs) > self.st.bound:
                return None
            keys = [list(sigs[loc]) for loc in locs]
            for combo in itertools.product(*keys):
                if all(ok for ok, _ in combo):
                    continue
                if self.st is not None and all(d is not None for _, d in combo) and sum(d for _, d in combo) < 0:
                    continue
                for i, (loc, sig) in enumerate(zip(locs, combo)):
                    restrict.setdefault((locs, i), set()).update(sigs[loc][sig])
        return restrict

    def run(self, index_of=None):
        t0 = time.perf_counter()
        X0, Y0 = self.PT.initial, self.PS.initial
        stats = {"target_states": 0, "related_pairs": 0, "domain": self.domain}
        if not self.R(X0, Y0):
            return Verdict("invalid", Counterexample("init", X0, Y0, detail="initial states are not related"),
                           stats=stats)
        gS = self.PS.explore(self.budget)
        self.overflow = self.overflow or gS.overflow
        s_reach = set(gS.nodes[1:])
        s_aut = list(dict.fromkeys(q for q, _ in gS.nodes[1:]))
        if not self.buffered:
            s_aut = list(dict.fromkeys(list(self.aut.states) + s_aut))
        index = RelationIndex(self.w.R, self.w, self.t, self.s, self.aut, s_aut)
        reach, shapes = self.shapes()
        domain = self.domain
        restrict = None
        if domain != "reachable":
            if self.fast and self.fast_applicable(index):
                restrict = self.fast_check(index, shapes)
                stats["fast_path"] = restrict is not None
            if domain == "auto":
                size = self.domain_size(index, shapes, restrict)
                domain = "inductive" if size <= AUTO_LIMIT else "reachable"
        stats["domain"] = domain
        xs = reach if domain == "reachable" else self.inductive_domain(index, shapes, restrict)
        pairs = 0
        for X in xs:
            if domain == "reachable" and restrict is not None and not any(
                    tc in restrict.get((tuple(c.loc for c in X[1]), i), ()) for i, tc in enumerate(X[1])):
                continue
            stats["target_states"] += 1
            Ys = index.related(X)
            if domain == "reachable":
                Ys = [Y for Y in Ys if Y in s_reach]
            if self.bisim_guard is not None:
                Ys = [Y for Y in Ys if self.bisim_guard(X, Y)]
            if not Ys:
                continue
            moves, over = self.PT.moves(X)
            self.overflow = self.overflow or over
            for Y in Ys:
                pairs += 1
                if pairs > self.budget:
                    raise BudgetExceeded(f"more than {self.budget} related pairs", budget_states=self.budget)
                if self.st:
                    r = self.rank(X, Y)
                    if not 0 <= r <= self.st.bound:
                        return Verdict("invalid", Counterexample(
                            "rank", X, Y, detail=f"rank {r} outside [0, {self.st.bound}]"), stats=stats)
                for v, X2 in moves:
                    lvl = self.respond(X, Y, v, X2)
                    if lvl is not None:
                        clause = LEVELS[max(lvl, 0)]
                        stats["related_pairs"] = pairs
                        stats["seconds"] = round(time.perf_counter() - t0, 3)
                        cex = Counterexample(clause, X, Y, (v, X2), detail=_explain(clause, X, X2))
                        return Verdict("invalid", cex, stats=stats)
        stats["related_pairs"] = pairs
        stats["seconds"] = round(time.perf_counter() - t0, 3)
        if self.overflow:
            return Verdict("inconclusive", reason="buffer-bound-exceeded", stats=stats)
        return Verdict("valid", stats=stats)


def _explain(clause, X, X2):
    locs = ",".join(c.loc for c in X[1])
    return {
        "2a": f"no source transition matches the target step at ({locs})",
        "2b": f"no source transition agrees on inputs with the target step at ({locs})",
        "2c": f"cannot establish a related successor for the target step at ({locs})",
        "2d": f"target reaches an accepting state the source cannot match at ({locs})",
    }[clause]


def _as_list(a):
    return list(a) if isinstance(a, (list, tuple)) else [a]


def check_refinement(a, s, t, m, k, w, *, domain="auto", budget=200_000, fast=True):
    """Validate witness ``w`` as a refinement from ``A x T^k`` to ``A x S^k``.

    ``a`` may be one automaton or a list (one violation type each); the same
    witness is validated against each of them. ``fast=False`` disables the
    per-track shortcut (the verdict is the same, only slower).
    """
    total = {}
    for idx, aut in enumerate(_as_list(a)):
        try:
            v = _Refiner(aut, s, t, m, k, w, domain, budget, fast=fast).run()
        except Inconclusive as e:
            return Verdict("inconclusive", reason=e.reason, stats={"detail": str(e), **e.info})
        except WitnessError as e:
            return Verdict("invalid", Counterexample("type", None, detail=str(e), automaton=idx))
        if v.counterexample is not None:
            v.counterexample.automaton = idx
        if v.status != "valid":
            return v
        for key, val in v.stats.items():
            summable = isinstance(val, (int, float)) and not isinstance(val, bool)
            total[key] = total.get(key, 0) + val if summable else val
    return Verdict("valid", stats=total)


def recheck_counterexample(cex, a, s, t, m, k, w):
    """Re-evaluate a refinement counterexample on its own; returns the violated clause or None."""
    aut = _as_list(a)[cex.automaton]
    r = _Refiner(aut, s, t, m, k, w, "reachable", 10**9)
    X, Y = cex.target, cex.source
    if cex.clause == "init":
        return "init" if not r.R(X, Y) else None
    if not r.R(X, Y):
        return None
    if cex.clause == "rank":
        rk = r.rank(X, Y)
        return "rank" if not 0 <= rk <= w.stutter.bound else None
    v, X2 = cex.step
    moves, _ = r.PT.moves(X)
    if (v, X2) not in moves:
        return None
    lvl = r.respond(X, Y, v, X2)
    return None if lvl is None else LEVELS[max(lvl, 0)]


# ------------------------------------------------------------ bisimulation


class _Bisim:
    def __init__(self, s, t, m, w, formula, domain, budget):
        self.s, self.t, self.m, self.w = s, t, m, w
        self.B = formula
        self.domain = domain
        self.budget = budget
        self.I = w.input_pred()
        self.bound = w.stutter.bound if w.stutter else 8
        self._memo = {}

    def holds(self, tc, sc):
        key = (tc, sc)
        hit = self._memo.get(key)
        if hit is None:
            env = Env(None, None, (tc,), (sc,), self.t, self.s, None, self.w, 0)
            hit = self._memo[key] = _bool(self.B.eval(env))
        return hit

    def agree(self, a, b):
        ia, ib = self.I(a), self.I(b)
        return (not ia and not ib) or (ia and ib and a == b)

    def _answer(self, prog, start, v, ok_final, ok_mid):
        """Path ``start -eps*-> c -u-> c2`` on ``prog`` with ``u =_I v`` and ``ok_final(c2)``."""
        if v.kind == "eps" and ok_final(start):
            return True
        frontier = [start]
        seen = {start}
        for _ in range(self.bound + 1):
            nxt = []
            for c in frontier:
                for u, c2 in prog.step(self.m, c):
                    if self.agree(u, v) and ok_final(c2):
                        return True
                    if u.kind == "eps" and c2 not in seen and ok_mid(c2):
                        seen.add(c2)
                        nxt.append(c2)
            frontier = nxt
            if not frontier:
                break
        return False

    def domain_pairs(self, index):
        if self.domain == "reachable":
            t_reach = _reachable(self.t, self.m, self.budget)
            s_reach = _reachable(self.s, self.m, self.budget)
            for tc in t_reach:
                for ci in range(len(index.clauses)):
                    for sc in index.track_candidates(ci, tc):
                        if sc in s_reach:
                            yield tc, sc
            return
        for loc in self.t.locations:
            for tc in _configs_at(self.t, loc):
                for ci in range(len(index.clauses)):
                    for sc in index.track_candidates(ci, tc):
                        yield tc, sc

    def run(self):
        t0 = time.perf_counter()
        it, is_ = initial_config(self.t), initial_config(self.s)
        if not self.holds(it, is_):
            return Verdict("invalid", Counterexample("bisim-1", it, is_, detail="initial configurations not in B"))
        index = RelationIndex(self.B, self.w, self.t, self.s, single=True)
        n = 0
        done = set()
        for tc, sc in self.domain_pairs(index):
            if (tc, sc) in done:
                continue
            done.add((tc, sc))
            n += 1
            if n > self.budget:
                raise BudgetExceeded(f"more than {self.budget} related pairs", budget_states=self.budget)
            for v, tc2 in self.t.step(self.m, tc):
                if not self._answer(self.s, sc, v, lambda c2: self.holds(tc2, c2), lambda c: self.holds(tc, c)):
                    return Verdict("invalid", Counterexample(
                        "bisim-2", tc, sc, (v, tc2),
                        detail=f"source cannot match target step {v} from ({tc.loc}, {sc.loc})"),
                        stats={"pairs": n})
            for u, sc2 in self.s.step(self.m, sc):
                if not self._answer(self.t, tc, u, lambda c2: self.holds(c2, sc2), lambda c: self.holds(c, sc)):
                    return Verdict("invalid", Counterexample(
                        "bisim-3", tc, sc, (u, sc2),
                        detail=f"target cannot match source step {u} from ({tc.loc}, {sc.loc})"),
                        stats={"pairs": n})
        return Verdict("valid", stats={"pairs": n, "seconds": round(time.perf_counter() - t0, 3),
                                        "domain": self.domain})


def _reachable(p, m, budget):
    start = initial_config(p)
    seen = {start}
    todo = [start]
    while todo:
        c = todo.pop()
        for _, c2 in p.step(m, c):
            if c2 not in seen:
                seen.add(c2)
                if len(seen) > budget:
                    raise BudgetExceeded(f"more than {budget} configurations", budget_states=budget)
                todo.append(c2)
    return seen


def check_bisimulation(s, t, m, w, formula=None, *, domain="auto", budget=200_000):
    """Validate ``formula`` (default: the witness's ``bisim`` clause) as a bisimulation for I."""
    f = formula if formula is not None else w.bisim
    if f is None:
        raise WitnessError("witness has no bisim clause")
    if isinstance(f, str):
        from .witness import parse_formula

        f = parse_formula(f)
    try:
        return _Bisim(s, t, m, w, f, domain, budget).run()
    except Inconclusive as e:
        return Verdict("inconclusive", reason=e.reason, stats={"detail": str(e)})
    except WitnessError as e:
        return Verdict("invalid", Counterexample("type", None, detail=str(e)))


class _Relative(_Refiner):
    """Refinement relative to a bisimulation B."""

    def __init__(self, *args, B=None, **kw):
        super().__init__(*args, fast=False, **kw)  # answers must also stay inside B
        self.B = B

    def Bp(self, tcs, scs):
        return all(self.B.holds(tc, sc) for tc, sc in zip(tcs, scs))

    def respond(self, X, Y, v, X2):
        p, scs = Y
        per = []
        for i, sc in enumerate(scs):
            per.append([(u, c2) for u, c2 in self.s_steps(sc)
                        if self.agree(u, v[i]) and self.B.holds(X2[1][i], c2)])
        best = None
        for combo in itertools.product(*per):
            u = tuple(e for e, _ in combo)
            scs2 = tuple(c2 for _, c2 in combo)
            qs, over = self.aut.moves(p, u)
            self.overflow = self.overflow or over
            lvl = 0
            for p2 in qs:
                Y2 = (p2, scs2)
                if not self.R(X2, Y2):
                    lvl = max(lvl, 2)
                elif self.aut.is_accepting(X2[0]) and not self.aut.is_accepting(p2):
                    lvl = max(lvl, 3)
                else:
                    lvl = None
                    break
            if lvl is not None:
                best = lvl if best is None else min(best, lvl)
        return best


def check_relative_refinement(a, s, t, m, k, w, bisim=None, *, domain="auto", budget=200_000):
    """Check that B is a bisimulation, then check R with source answers kept inside B."""
    bv = check_bisimulation(s, t, m, w, bisim, domain=domain, budget=budget)
    if bv.status != "valid":
        return bv
    f = bisim if bisim is not None else w.bisim
    if isinstance(f, str):
        from .witness import parse_formula

        f = parse_formula(f)
    B = _Bisim(s, t, m, w, f, domain, budget)
    it, is_ = initial_config(t), initial_config(s)
    if not B.holds(it, is_):
        return Verdict("invalid", Counterexample("bisim-1", it, is_))
    for idx, aut in enumerate(_as_list(a)):
        try:
            r = _Relative(aut, s, t, m, k, w, domain, budget, B=B)
            r.bisim_guard = lambda X, Y, r=r: r.Bp(X[1], Y[1])
            v = r.run()
        except Inconclusive as e:
            return Verdict("inconclusive", reason=e.reason, stats={"detail": str(e)})
        if v.counterexample is not None:
            v.counterexample.automaton = idx
        if v.status != "valid":
            return v
    return Verdict("valid", stats={"bisim": bv.stats})


# ------------------------------------------------------ input determinism


def _observable_moves(p, m, c, memo):
    """``{(event, config)}`` reachable from ``c`` by eps steps then one visible event."""
    hit = memo.get(c)
    if hit is not None:
        return hit
    out = set()
    seen = {c}
    todo = [c]
    while todo:
        x = todo.pop()
        for e, x2 in p.step(m, x):
            if e.kind == "eps":
                if x2 not in seen:
                    seen.add(x2)
                    todo.append(x2)
            else:
                out.add((e, x2))
    memo[c] = out = frozenset(out)
    return out


def check_input_deterministic(p, m, budget=200_000):
    """True iff executions with the same input sequence show the same observations.

    Self-product search: a reachable pair of configurations whose next
    visible events differ without both being inputs is a divergence.
    """
    memo = {}
    start = (initial_config(p), initial_config(p))
    seen = {start}
    todo = [start]
    while todo:
        c1, c2 = todo.pop()
        for e1, n1 in _observable_moves(p, m, c1, memo):
            for e2, n2 in _observable_moves(p, m, c2, memo):
                if e1 != e2:
                    if e1.kind == "input" and e2.kind == "input":
                        continue
                    return False
                pair = (n1, n2)
                if pair not in seen:
                    seen.add(pair)
                    if len(seen) > budget:
                        raise BudgetExceeded(f"more than {budget} configuration pairs", budget_states=budget)
                    todo.append(pair)
    return True
