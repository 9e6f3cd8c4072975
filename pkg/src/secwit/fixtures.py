"""The worked examples as ready-to-run fixtures.

Each fixture is a source program, a transformation site and a property
bundle; targets and witnesses are produced by :mod:`secwit.optimizer`, so
regenerating the fixture files always reflects the current optimizer.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache

from .automaton import format_automaton
from .optimizer import apply_transform
from .props import (
    Property, final_memory_equal, format_property, negated_constant_time, negated_noninterference,
    output_equal,
)
from .secir import attack_model, format_program, parse_program
from .witness import format_witness

FOLDING = """\
program folding domain 4
var x, y, z
L1: x := input(secret)
L2: y := 42
L3: z := y - 41
L4: x := x * (z - 1)
"""

FACTORIZATION = """\
program factorization domain 2
var j, n, a, b
array arr[2]
L1: j := input(secret)
L2: n := input(public)
L3: if (j < n) goto L4 else goto L7
L4: a := arr[0]
L5: b := arr[j]
L6: goto L9
L7: a := arr[0]
L8: b := arr[n - 1]
L9: output(public, b)
"""

SWITCHING = """\
program switching domain 2
var j, s
array a[2]
array b[2]
L1: s := input(secret)
L2: a[0] := s
L3: j := 1
L4: a[j] := b[j - 1]
L5: b[j] := a[j - 1]
L6: output(public, j)
"""

DEAD_BRANCH = """\
program dead_branch domain 2
var x
L1: x := input(secret)
L2: if (0) goto L3 else goto L5
L3: output(public, x)
L4: goto End
L5: output(secret, x)
"""

FLATTENING = """\
program flattening domain 2
var a, b, c, n, x
L1: a := input(secret)
L2: c := input(public)
// f(a) and g(c) both bump the counter n; the two orders give different results
L3: { x := choose((a + n + b) * (c + n + 1), (a + n + 1 + b) * (c + n)); n := n + 2 }
L4: output(public, x)
"""

PEELING = """\
program peeling domain 2
var x, k
L1: x := 0
L2: k := 0
L3: if (k < 1) goto L4 else goto End
L4: if (k == 0) goto L5 else goto L7
L5: x := input(secret)
L6: goto L8
L7: x := x + x
L8: k := k + 1
L9: output(public, x)
L10: goto L3
"""

SPILLING = """\
program spilling domain 2
var a, b, t0, t1
L1: a := input(secret)
L2: b := input(public)
L3: t0 := a + b
L4: output(public, t0)
L5: t1 := a - b
L6: output(public, t1)
"""

# The key-validity example: use(x) is modelled as a public output of the key's validity
DEAD_STORE = """\
program dead_store domain 2
var x
L1: x := input(secret)
L2: output(public, x != 0)
L3: x := 0
"""


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    kind: str
    source: str
    site: object
    attack: str
    automata: tuple  # ((file stem, builder), ...)
    buffer_bound: int = 4
    exposed: tuple = None
    opts: dict = field(default_factory=dict)


SPECS = {
    s.name: s
    for s in (
        FixtureSpec("constant_folding", "constant_folding", FOLDING, None, "io+final_memory",
                    (("neg_fin", final_memory_equal),)),
        FixtureSpec("common_branch_factorization", "common_branch_factorization", FACTORIZATION, "L3",
                    "io+mem", (("neg_ct", negated_constant_time),), buffer_bound=2),
        FixtureSpec("switch_instructions", "switch_instructions", SWITCHING, "L4", "io",
                    (("neg_ni", negated_noninterference),)),
        FixtureSpec("dead_branch_elimination", "dead_branch_elimination", DEAD_BRANCH, "L2", "io",
                    (("neg_ni", negated_noninterference),)),
        FixtureSpec("expression_flattening", "expression_flattening", FLATTENING, "L3", "io",
                    (("neg_ni", negated_noninterference),)),
        FixtureSpec("loop_peeling", "loop_peeling", PEELING, "L3", "io",
                    (("neg_ni", negated_noninterference),)),
        FixtureSpec("register_spilling", "register_spilling", SPILLING, None, "io",
                    (("neg_ni", negated_noninterference),)),
        FixtureSpec("dead_store_elimination", "dead_store_elimination", DEAD_STORE, "L3", "io+final_memory",
                    (("validity_leak", output_equal), ("key_leak", lambda: final_memory_equal(("x",))))),
    )
}

WITNESS_KINDS = tuple(n for n in SPECS if n != "dead_store_elimination")


@dataclass
class Fixture:
    name: str
    kind: str
    site: object
    source: object
    target: object
    witness: object
    prop: Property
    notes: str
    block_source: object = None

    @property
    def model(self):
        return self.prop.attack

    @property
    def checked_source(self):
        """The source the witness talks about (the block view for block-mode switching)."""
        return self.block_source or self.source

    def automata(self, buffer_bound=None):
        return self.prop.checked_automata(buffer_bound)


@lru_cache(maxsize=None)
def load_fixture(name):
    try:
        spec = SPECS[name]
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(SPECS)}") from None
    src = parse_program(spec.source)
    model = attack_model(spec.attack, spec.exposed)
    autos = []
    for stem, make in spec.automata:
        a = make()
        a.name = stem
        autos.append(a)
    prop = Property(spec.name, ("forall", "forall"), autos, model, spec.buffer_bound,
                    tuple(f"{stem}.aut" for stem, _ in spec.automata))
    r = apply_transform(spec.kind, src, spec.site, model, **spec.opts)
    return Fixture(spec.name, spec.kind, spec.site, src, r.target, r.witness, prop, r.notes, r.source)


def fixture_names():
    return tuple(SPECS)


def write_fixture(name, root):
    """Write ``source.sec``, ``target.sec``, ``witness.wit``, ``property.prop`` and automata."""
    fx = load_fixture(name)
    d = os.path.join(root, name)
    os.makedirs(d, exist_ok=True)
    files = {
        "source.sec": format_program(fx.source),
        "target.sec": format_program(fx.target),
        "property.prop": format_property(fx.prop),
    }
    if fx.witness is not None:
        files["witness.wit"] = format_witness(fx.witness)
    for fname, a in zip(fx.prop.files, fx.prop.automata):
        files[fname] = format_automaton(a)
    for fname, text in files.items():
        with open(os.path.join(d, fname), "w") as fh:
            fh.write(text)
    return sorted(os.path.join(d, f) for f in files)


def write_fixtures(root):
    out = []
    for name in SPECS:
        out += write_fixture(name, root)
    return out
