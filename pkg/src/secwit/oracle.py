"""Brute-force ground truth for universal properties.

For an all-universal prefix a violation is just a bundle of k executions
whose traces the violation automaton accepts. Both programs' violations are
enumerated from bounded lassos, and preservation holds when every target
violation has a source violation of the same automaton with the same input
projections.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .automaton import BufferOverflow, LassoLTS, ProductSystem, find_accepting_lasso
from .secir import BudgetExceeded, Inconclusive, enumerate_lassos, trace_of
from .traceops import project


class UnsupportedPrefix(ValueError):
    """The oracle only handles all-universal quantifier prefixes."""


@dataclass(frozen=True)
class Bounds:
    stem_max: int = 10
    loop_max: int = 4
    budget: int = 200_000


def is_input(e):
    return e.kind == "input"


@dataclass(frozen=True)
class Violation:
    bundle: tuple  # k Lasso executions
    automaton_index: int
    lasso: object = field(compare=False, hash=False, default=None)  # accepting ProductLasso

    @property
    def traces(self):
        return tuple(trace_of(x) for x in self.bundle)

    @property
    def inputs(self):
        """Per-track input projections, the matching key of preservation."""
        return tuple(project(w, is_input) for w in self.traces)

    def key(self):
        return (self.automaton_index, self.inputs)

    def sort_key(self):
        return (self.automaton_index, tuple(str(w) for w in self.traces))

    def to_dict(self):
        return {
            "automaton_index": self.automaton_index,
            "traces": [str(w) for w in self.traces],
            "inputs": [_wstr(w) for w in self.inputs],
        }


def _wstr(w):
    return " ".join(map(str, w)) if isinstance(w, tuple) else str(w)


def recheck_violation(v, prop):
    """Does the product of the automaton with the bundle's traces still accept?"""
    aut = prop.checked_automata()[v.automaton_index]
    ps = ProductSystem(aut, [LassoLTS(w) for w in v.traces])
    return find_accepting_lasso(ps) is not None


def _require_universal(prop):
    if not prop.universal:
        raise UnsupportedPrefix(
            "the oracle handles only all-universal prefixes; use an input-determinism or "
            "relative-refinement witness for alternating prefixes")


def find_violations(p, prop, bounds=Bounds(), jobs=1, stats=None):
    """All violating bundles built from lassos within ``bounds``, sorted.

    Raises :class:`UnsupportedPrefix`, :class:`BudgetExceeded` or
    :class:`BufferOverflow`.
    """
    _require_universal(prop)
    est = {} if stats is None else stats
    lassos = enumerate_lassos(p, prop.attack, bounds.stem_max, bounds.loop_max, bounds.budget, est)
    est["lassos"] = est.get("lassos", 0) + len(lassos)
    # acceptance depends only on the traces, so group executions by trace
    by_trace = {}
    for x in lassos:
        by_trace.setdefault(trace_of(x), []).append(x)
    words = sorted(by_trace, key=str)
    autos = prop.checked_automata()
    k = prop.k
    n_bundles = len(words) ** k * len(autos)
    if n_bundles > bounds.budget:
        raise BudgetExceeded(f"{n_bundles} trace bundles exceed the budget {bounds.budget}",
                             budget_states=bounds.budget)
    est["bundles"] = est.get("bundles", 0) + n_bundles

    def check(job):
        idx, ws = job
        ps = ProductSystem(autos[idx], [LassoLTS(w) for w in ws])
        return idx, ws, find_accepting_lasso(ps, bounds.budget)

    jobs_ = [(idx, ws) for idx in range(len(autos)) for ws in itertools.product(words, repeat=k)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(check, jobs_))
    else:
        results = [check(j) for j in jobs_]
    out = []
    for idx, ws, lasso in results:
        if lasso is None:
            continue
        for bundle in itertools.product(*(by_trace[w] for w in ws)):
            out.append(Violation(tuple(bundle), idx, lasso))
    out.sort(key=Violation.sort_key)
    return out


@dataclass
class OracleVerdict:
    status: str  # valid | invalid | inconclusive
    unmatched: Optional[Violation] = None
    reason: Optional[str] = None
    stats: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def valid(self):
        return self.status == "valid"

    def to_dict(self):
        d = {"status": self.status, "stats": self.stats, "notes": self.notes}
        if self.unmatched is not None:
            d["unmatched"] = self.unmatched.to_dict()
        if self.reason:
            d["reason"] = self.reason
        return d


def _saturation_note(st):
    if st.get("truncated", 0) or st.get("dropped", 0):
        return ("bound_saturation: lasso bounds were saturated "
                f"({st.get('truncated', 0)} paths cut, {st.get('dropped', 0)} lassos dropped); "
                "maximal plays beyond the bounds are not covered")
    return "bound_saturation: no path reached the lasso bounds"


def violations_report(p, prop, bounds=Bounds(), jobs=1):
    """``(violations, stats, notes)`` for one program; budget problems propagate."""
    st = {}
    vs = find_violations(p, prop, bounds, jobs, st)
    return vs, st, [_saturation_note(st)]


def check_preservation_oracle(s, t, prop, bounds=Bounds(), jobs=1):
    """Every target violation must be matched by an input-equivalent source
    violation of the same automaton."""
    _require_universal(prop)
    sst, tst = {}, {}
    try:
        vt = find_violations(t, prop, bounds, jobs, tst)
        vs = find_violations(s, prop, bounds, jobs, sst)
    except BufferOverflow as e:
        return OracleVerdict("inconclusive", reason="buffer-bound-exceeded", stats={"detail": str(e)})
    except Inconclusive as e:
        return OracleVerdict("inconclusive", reason=e.reason, stats={"detail": str(e), **e.info})
    stats = {"source_violations": len(vs), "target_violations": len(vt),
             "source_lassos": sst.get("lassos", 0), "target_lassos": tst.get("lassos", 0)}
    notes = ["source " + _saturation_note(sst), "target " + _saturation_note(tst)]
    keys = {v.key() for v in vs}
    for v in vt:
        if v.key() not in keys:
            return OracleVerdict("invalid", v, stats=stats, notes=notes)
    return OracleVerdict("valid", stats=stats, notes=notes)
