"""Built-in 2-safety properties, given as automata for their violations.

The automata read pairs of events in lockstep; programs with silent steps
need the buffering construction. ``I`` is the initial state, ``S`` a
rejecting sink for runs that do not meet the precondition, ``M`` the
monitoring state and ``F`` the accepting failure state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from .automaton import buffering, parse_automaton
from .secir import AttackModel, attack_model


def _four_state(name, init, mid):
    lines = [f"automaton {name} tracks 2", "state I initial", "state S", "state M", "state F accepting"]
    lines += [f"trans I -> {dst} when {g}" for dst, g in init]
    lines += [f"trans M -> {dst} when {g}" for dst, g in mid]
    lines += ["trans F -> F when true", "trans S -> S when true"]
    return parse_automaton("\n".join(lines) + "\n")


def negated_constant_time(phi="agree(1,2,low)"):
    """Violations of constant time: leakage labels differ after ``phi`` held initially.

    ``phi`` is a guard over the first pair of events (the initial exposure).
    """
    return _four_state(
        "neg_ct",
        [("M", phi), ("S", f"!({phi})")],
        [("M", "agree(1,2,ext)"), ("F", "!agree(1,2,ext)")],
    )


def negated_noninterference(low="low", lowout="lowout"):
    """Violations of noninterference: equal low inputs, different low outputs.

    ``low`` and ``lowout`` name event classes of the guard language; the
    defaults are public inputs, and public outputs plus final-memory events.
    """
    same_in, diff_in = f"agree(1,2,{low})", f"!agree(1,2,{low})"
    step = [
        ("S", diff_in),
        ("F", f"{same_in} && !agree(1,2,{lowout})"),
        ("M", f"{same_in} && agree(1,2,{lowout})"),
    ]
    return _four_state("neg_ni", step, step)


def final_memory_equal(vars=None):
    """Violations of final-memory equality on ``vars`` (all exposed names if ``None``)."""
    differ = "!eq(1,2)" if not vars else f"!fineq(1,2,{','.join(vars)})"
    bad = f"tag(1)=fin && tag(2)=fin && {differ}"
    text = f"""\
automaton neg_fin tracks 2
state W initial
state F accepting
trans W -> F when {bad}
trans W -> W when !({bad})
trans F -> F when true
"""
    return parse_automaton(text)


def output_equal():
    """Violations of output equality: some lockstep pair of outputs differs."""
    text = """\
automaton neg_out tracks 2
state W initial
state F accepting
trans W -> F when !agree(1,2,outputs)
trans W -> W when agree(1,2,outputs)
trans F -> F when true
"""
    return parse_automaton(text)


PROPERTIES = {
    "constant_time": negated_constant_time,
    "noninterference": negated_noninterference,
    "final_memory_equal": final_memory_equal,
    "output_equal": output_equal,
}


def property_automaton(name, *args):
    try:
        make = PROPERTIES[name]
    except KeyError:
        raise ValueError(f"unknown property {name!r}; known: {', '.join(sorted(PROPERTIES))}") from None
    return make(*args)


# ------------------------------------------------------- property bundles


@dataclass
class Property:
    """Quantifier prefix, violation automata (one per violation type) and attack model."""

    name: str
    prefix: tuple  # "forall" / "exists" per track
    automata: list
    attack: AttackModel
    buffer_bound: Optional[int] = None  # None: use the automata as given
    files: tuple = ()

    @property
    def k(self):
        return len(self.prefix)

    @property
    def universal(self):
        return all(q == "forall" for q in self.prefix)

    def __post_init__(self):
        for a in self.automata:
            if a.k != len(self.prefix):
                raise ValueError(f"automaton {a.name} has {a.k} tracks but the prefix has {len(self.prefix)}")

    def checked_automata(self, buffer_bound=None):
        """Automata as the checkers should use them (buffered when a bound is set)."""
        b = self.buffer_bound if buffer_bound is None else buffer_bound
        if not b:
            return list(self.automata)
        return [buffering(a, b) for a in self.automata]


def parse_property(text, base_dir=".", loader=None):
    """Read a ``.prop`` bundle; automaton files are resolved against ``base_dir``.

    Lines: ``property <name>``, ``prefix forall forall``,
    ``attack <model> [vars x y ..]``, ``automaton <file>`` (repeatable),
    ``buffer <n>`` (optional).
    """
    name, prefix, autos, files, attack, bound = None, None, [], [], None, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "property":
                name = rest[0]
            elif head == "prefix":
                bad = [q for q in rest if q not in ("forall", "exists")]
                if not rest or bad:
                    raise ValueError("prefix is a list of forall/exists")
                prefix = tuple(rest)
            elif head == "attack":
                exposed = None
                if "vars" in rest:
                    i = rest.index("vars")
                    exposed, rest = rest[i + 1:], rest[:i]
                attack = attack_model(rest[0], exposed)
            elif head == "automaton":
                files.append(rest[0])
                if loader is not None:
                    autos.append(loader(rest[0]))
                else:
                    with open(os.path.join(base_dir, rest[0])) as fh:
                        autos.append(parse_automaton(fh.read()))
            elif head == "buffer":
                bound = int(rest[0])
            else:
                raise ValueError(f"unknown declaration {head!r}")
        except (IndexError, ValueError) as e:
            raise ValueError(f"line {lineno}: {e or 'missing argument'}") from None
    if name is None or prefix is None or attack is None or not autos:
        raise ValueError("property needs 'property', 'prefix', 'attack' and at least one 'automaton' line")
    return Property(name, prefix, autos, attack, bound, tuple(files))


def format_property(prop):
    lines = [f"property {prop.name}", "prefix " + " ".join(prop.prefix)]
    attack = f"attack {prop.attack.name}"
    if prop.attack.exposed_vars is not None:
        attack += " vars " + " ".join(prop.attack.exposed_vars)
    lines.append(attack)
    files = prop.files or tuple(f"{a.name}.aut" for a in prop.automata)
    lines += [f"automaton {f}" for f in files]
    if prop.buffer_bound:
        lines.append(f"buffer {prop.buffer_bound}")
    return "\n".join(lines) + "\n"
