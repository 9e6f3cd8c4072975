"""Small random programs and bundle automata for the property suites."""

import random

from secwit.automaton import parse_automaton
from secwit.secir import SecIRError, parse_program

_ATOMS = [
    "kind({i})=input", "kind({i})=output", "kind({i})=eps", "chan({i})=public",
    "val({i})=0", "val({i})=1", "agree(1,2,outputs)", "agree(1,2,inputs)", "eq(1,2)",
]


def random_program(rng, n=4, domain=2, leaky=False):
    """A valid program; drafts with unreachable labels are redrawn.

    ``leaky`` starts with a secret and a public input so that
    noninterference violations are common.
    """
    while True:
        try:
            return parse_program(_draft(rng, n, domain, leaky))
        except SecIRError:
            pass


def _draft(rng, n, domain, leaky):
    vs = ["x", "y"]
    lines = [f"program r{rng.randrange(10**6)} domain {domain}", "var x, y"]
    first = 1
    if leaky:
        lines += ["L1: x := input(secret)", "L2: y := input(public)"]
        first, n = 3, n + 2
    for i in range(first, n + 1):
        v, u = rng.choice(vs), rng.choice(vs)
        tgt = lambda: f"L{rng.randint(1, n)}" if rng.random() < 0.8 else "End"
        kind = rng.randrange(6)
        if kind == 0:
            ins = f"{v} := input({rng.choice(['public', 'secret'])})"
        elif kind == 1:
            ins = f"output(public, {v})"
        elif kind == 2:
            ins = f"{v} := {v} + {u}"
        elif kind == 3:
            ins = f"if ({v}) goto {tgt()} else goto {tgt()}"
        elif kind == 4:
            ins = f"goto {tgt()}"
        else:
            ins = f"{v} := {rng.randrange(domain)}"
        lines.append(f"L{i}: {ins}")
    return "\n".join(lines) + "\n"


def random_guard(rng, k):
    atoms = [a for a in _ATOMS if k == 2 or "1,2" not in a]
    g = rng.choice(atoms).format(i=rng.randint(1, k))
    if rng.random() < 0.3:
        g = "!" + g if "(" in g and "=" not in g.split(")")[0] else g.replace("=", "!=", 1)
    if rng.random() < 0.4:
        g = f"{g} {rng.choice(['&&', '||'])} {rng.choice(atoms).format(i=rng.randint(1, k))}"
    return g


def random_automaton(rng, k, n_states=3, n_trans=5):
    qs = [f"q{i}" for i in range(n_states)]
    acc = set(rng.sample(qs, rng.randint(1, n_states)))
    lines = [f"automaton r tracks {k}"]
    for i, q in enumerate(qs):
        lines.append(f"state {q}" + (" initial" if i == 0 else "") + (" accepting" if q in acc else ""))
    for _ in range(n_trans):
        lines.append(f"trans {rng.choice(qs)} -> {rng.choice(qs)} when {random_guard(rng, k)}")
    lines.append(f"trans q0 -> q{rng.randrange(n_states)} when true")
    return parse_automaton("\n".join(lines) + "\n")


def rng(seed):
    return random.Random(seed)
