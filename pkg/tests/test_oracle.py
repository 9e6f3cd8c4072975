from dataclasses import replace

import pytest

from secwit.fixtures import load_fixture
from secwit.oracle import (
    Bounds, UnsupportedPrefix, check_preservation_oracle, find_violations, recheck_violation,
    violations_report,
)
from secwit.secir import BudgetExceeded

LEAK = ["in(secret,0) out(public,0) eps fin(x=0) (bot)^w", "in(secret,1) out(public,1) eps fin(x=1) (bot)^w"]


@pytest.fixture(scope="module")
def dse():
    return load_fixture("dead_store_elimination")


def test_dead_store_verdict(dse):
    v = check_preservation_oracle(dse.source, dse.target, dse.prop)
    d = v.to_dict()
    assert d["status"] == "invalid"
    assert d["stats"] == {"source_violations": 2, "target_violations": 4, "source_lassos": 2, "target_lassos": 2}
    assert d["unmatched"] == {"automaton_index": 1, "traces": LEAK, "inputs": ["in(secret,0)", "in(secret,1)"]}
    assert recheck_violation(v.unmatched, dse.prop)


def test_violations_are_sorted_and_job_independent(dse):
    vs = find_violations(dse.target, dse.prop)
    assert [(v.automaton_index, [str(w) for w in v.traces]) for v in vs] == [
        (0, LEAK), (0, LEAK[::-1]), (1, LEAK), (1, LEAK[::-1])]
    par = find_violations(dse.target, dse.prop, jobs=4)
    assert [v.sort_key() for v in par] == [v.sort_key() for v in vs]


def test_source_only_leaks_validity(dse):
    vs = find_violations(dse.source, dse.prop)
    assert {v.automaton_index for v in vs} == {0}


def test_budget(dse):
    with pytest.raises(BudgetExceeded):
        find_violations(dse.target, dse.prop, Bounds(budget=3))


def test_alternating_prefix_rejected(dse):
    prop = replace(dse.prop, prefix=("forall", "exists"))
    with pytest.raises(UnsupportedPrefix, match="all-universal"):
        find_violations(dse.target, prop)
    with pytest.raises(UnsupportedPrefix):
        check_preservation_oracle(dse.source, dse.target, prop)


def test_saturation_note():
    fx = load_fixture("loop_peeling")
    v = check_preservation_oracle(fx.source, fx.target, fx.prop, Bounds(3, 2))
    assert v.status == "valid"
    assert v.notes[0] == ("source bound_saturation: lasso bounds were saturated (2 paths cut, 0 lassos "
                          "dropped); maximal plays beyond the bounds are not covered")
    _, stats, notes = violations_report(fx.source, fx.prop)
    assert notes == ["bound_saturation: no path reached the lasso bounds"]
    assert stats["lassos"] == 2


@pytest.mark.parametrize("name", ["constant_folding", "dead_branch_elimination", "register_spilling"])
def test_witnessed_fixtures_have_no_unmatched_violation(name):
    fx = load_fixture(name)
    assert check_preservation_oracle(fx.checked_source, fx.target, fx.prop).status == "valid"
