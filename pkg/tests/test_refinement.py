import random
import re
from dataclasses import replace

import pytest

from secwit.fixtures import WITNESS_KINDS, load_fixture
from secwit.refinement import (
    check_bisimulation, check_input_deterministic, check_refinement, recheck_counterexample,
)

WEAK_R = "qT = qS && t = s"


def _check(fx, w=None, **kw):
    return check_refinement(fx.automata(), fx.checked_source, fx.target, fx.model, 2,
                            w or fx.witness, **kw)


def test_folding_valid_on_fast_path():
    v = _check(load_fixture("constant_folding"))
    assert v.status == "valid"
    assert v.stats["fast_path"] is True
    assert v.stats["domain"] == "inductive"


def test_exact_domains_on_folding():
    fx = load_fixture("constant_folding")
    v = _check(fx, fast=False, domain="reachable")
    assert (v.status, v.stats["target_states"], v.stats["related_pairs"]) == ("valid", 51, 51)
    assert _check(fx, fast=False, domain="inductive").status == "valid"


def test_weak_witness_needs_inductive_domain():
    fx = load_fixture("constant_folding")
    w = fx.witness.with_R(WEAK_R)
    # on reachable pairs bare equality is closed; only arbitrary values at L3 expose it
    assert _check(fx, w, fast=False, domain="reachable").status == "valid"
    v = _check(fx, w, fast=False, domain="inductive")
    assert v.status == "invalid"
    cex = v.counterexample
    assert cex.clause == "2c"
    assert cex.to_dict()["target"]["configs"][0].startswith("(L3,")
    assert recheck_counterexample(cex, fx.automata(), fx.source, fx.target, fx.model, 2, w) == "2c"


def test_budget_gives_inconclusive():
    fx = load_fixture("constant_folding")
    v = _check(fx, fast=False, budget=10)
    assert (v.status, v.reason) == ("inconclusive", "budget-exceeded")


def test_unknown_domain():
    with pytest.raises(ValueError, match="unknown domain 'x'"):
        _check(load_fixture("constant_folding"), domain="x")


def test_false_relation_fails_initial_clause():
    v = _check(load_fixture("dead_branch_elimination"), load_fixture("dead_branch_elimination").witness.with_R("false"))
    assert v.counterexample.clause == "init"


def _mutants(w, r, n):
    R = str(w.R)
    nums = [m.start() for m in re.finditer(r"= \d", R)]
    out = []
    for _ in range(n):
        kind = r.randrange(3)
        if kind == 0 and nums:
            i = r.choice(nums)
            out.append(w.with_R(R[:i + 2] + str((int(R[i + 2]) + 1) % 4) + R[i + 3:]))
        elif kind == 1 and w.pairs:
            out.append(replace(w, pairs={k: frozenset(r.sample(sorted(v), len(v) - 1))
                                         for k, v in w.pairs.items()}))
        else:
            out.append(w.with_R(R.replace("tgt.loc = ", "tgt.loc != ", 1)))
    return out


@pytest.mark.parametrize("name,n", [
    ("constant_folding", 4), ("dead_branch_elimination", 4), ("loop_peeling", 4), ("switch_instructions", 2),
])
def test_fast_path_agrees_with_exact(name, n):
    fx = load_fixture(name)
    r = random.Random(name)
    for w in [fx.witness, fx.witness.with_R(WEAK_R)] + _mutants(fx.witness, r, n):
        fast = _check(fx, w)
        exact = _check(fx, w, fast=False, domain="inductive")
        assert fast.status == exact.status, str(w.R)
        clause = lambda v: v.counterexample and v.counterexample.clause
        assert clause(fast) == clause(exact), str(w.R)


@pytest.mark.parametrize("name", [n for n in WITNESS_KINDS if n != "expression_flattening"])
def test_fixture_bisimulations(name):
    fx = load_fixture(name)
    assert check_bisimulation(fx.checked_source, fx.target, fx.model, fx.witness).status == "valid"


def test_flattening_is_universal_only():
    w = load_fixture("expression_flattening").witness
    assert w.universal_only and w.bisim is None


def test_bisim_rejects_unrelated_values():
    fx = load_fixture("constant_folding")
    v = check_bisimulation(fx.source, fx.target, fx.model, fx.witness,
                           "L(src.loc, tgt.loc) && src.alpha = tgt.alpha")
    assert v.status == "invalid"
    assert v.counterexample.clause == "bisim-2"


def test_input_determinism_detects_choose():
    fx = load_fixture("expression_flattening")
    assert check_input_deterministic(fx.source, fx.model) is False
    assert check_input_deterministic(fx.target, fx.model) is True
