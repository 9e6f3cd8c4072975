"""Command-line driver. Every command prints one JSON record.

Exit codes: 0 valid / empty, 1 invalid (with counterexample), 2 inconclusive,
3 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .automaton import BufferOverflow, find_accepting_lasso, parse_automaton, product
from .fixtures import fixture_names, write_fixture
from .optimizer import KINDS, TransformError, apply_transform
from .oracle import Bounds, UnsupportedPrefix, check_preservation_oracle, recheck_violation, violations_report
from .props import parse_property
from .refinement import (
    DOMAINS, check_input_deterministic, check_refinement, check_relative_refinement,
)
from .secir import (
    BudgetExceeded, Inconclusive, SecIRError, attack_model, enumerate_lassos, format_program, parse_program,
    trace_of, with_domain,
)
from .smt import DEFAULT_LOGIC, SmtError, emit_queries, run_solver, find_solver
from .witness import WitnessError, format_witness, parse_witness

EXIT = {"valid": 0, "empty": 0, "ok": 0, "invalid": 1, "nonempty": 1, "rejected": 1,
        "inconclusive": 2, "error": 3}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- inputs


def _read(path):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def _program(path, args):
    p = parse_program(_read(path))
    return with_domain(p, args.domain) if args.domain else p


def _property(args):
    prop = parse_property(_read(args.property), os.path.dirname(os.path.abspath(args.property)))
    if args.attack_model:
        prop.attack = attack_model(args.attack_model, prop.attack.exposed_vars)
    return prop


def _automata(prop, args):
    return prop.checked_automata(args.buffer_bound)


def _bounds(args):
    return Bounds(args.stem_max, args.loop_max, args.budget_states)


# ---------------------------------------------------------------- commands


def cmd_check(args):
    prop = _property(args)
    s, t = _program(args.source, args), _program(args.target, args)
    w = parse_witness(_read(args.witness))
    autos = _automata(prop, args)
    kw = dict(domain=args.quantify, budget=args.budget_states)
    rec = {"attack_model": prop.attack.name}
    if not prop.universal:
        if w.universal_only:
            return {"status": "error", "error": "witness is marked universal-only but the prefix alternates", **rec}
        if args.relative or w.bisim is not None:
            v = check_relative_refinement(autos, s, t, prop.attack, prop.k, w, **kw)
            rec["route"] = "relative"
        else:
            if not check_input_deterministic(s, prop.attack, args.budget_states):
                return {"status": "inconclusive", "reason": "source-not-input-deterministic",
                        "detail": "alternating prefix needs an input-deterministic source or a bisim clause", **rec}
            v = check_refinement(autos, s, t, prop.attack, prop.k, w, **kw)
            rec["route"] = "input-deterministic"
    elif args.relative:
        v = check_relative_refinement(autos, s, t, prop.attack, prop.k, w, **kw)
        rec["route"] = "relative"
    else:
        v = check_refinement(autos, s, t, prop.attack, prop.k, w, **kw)
        rec["route"] = "refinement"
    return {**v.to_dict(), **rec}


def cmd_oracle(args):
    prop = _property(args)
    s = _program(args.source, args)
    rec = {"attack_model": prop.attack.name}
    if args.target is None:
        try:
            vs, st, notes = violations_report(s, prop, _bounds(args), args.jobs)
        except BufferOverflow as e:
            return {"status": "inconclusive", "reason": "buffer-bound-exceeded", "detail": str(e), **rec}
        except Inconclusive as e:
            return {"status": "inconclusive", "reason": e.reason, "detail": str(e), **rec}
        return {"status": "nonempty" if vs else "empty", "violations": [v.to_dict() for v in vs[:args.limit]],
                "count": len(vs), "stats": st, "notes": notes, **rec}
    t = _program(args.target, args)
    v = check_preservation_oracle(s, t, prop, _bounds(args), args.jobs)
    d = v.to_dict()
    if v.unmatched is not None:
        d["unmatched"]["rechecked"] = recheck_violation(v.unmatched, prop)
    return {**d, **rec}


def cmd_transform(args):
    p = _program(args.source, args)
    m = attack_model(args.attack_model or "io")
    opts = {}
    if args.mode:
        opts["mode"] = args.mode
    if args.regs:
        opts["regs"] = args.regs
    try:
        r = apply_transform(args.kind, p, args.site, m, **opts)
    except TransformError as e:
        return {"status": "rejected", "reason": str(e), "attack_model": m.name}
    os.makedirs(args.out_dir, exist_ok=True)
    files = {"target.sec": format_program(r.target)}
    if r.witness is not None:
        files["witness.wit"] = format_witness(r.witness)
    if r.source is not None:
        files["checked_source.sec"] = format_program(r.source)
    written = []
    for name, text in files.items():
        path = os.path.join(args.out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)
    return {"status": "ok", "kind": args.kind, "notes": r.notes, "files": written, "attack_model": m.name}


def cmd_emit_smt(args):
    prop = _property(args)
    s, t = _program(args.source, args), _program(args.target, args)
    w = parse_witness(_read(args.witness))
    case = args.case or os.path.splitext(os.path.basename(args.witness))[0]
    paths = emit_queries(_automata(prop, args), s, t, prop.k, w, prop.attack, args.out_dir, case, args.smt_logic)
    rec = {"status": "ok", "files": paths, "logic": args.smt_logic, "attack_model": prop.attack.name}
    if args.solve:
        if find_solver() is None:
            rec["solver"] = "unavailable"
            return rec
        answers = {}
        for path in paths:
            answers[os.path.basename(path)] = run_solver(_read(path), timeout=args.timeout)
        rec["answers"] = answers
        rec["status"] = "valid" if all(a == "unsat" for a in answers.values()) else (
            "inconclusive" if "unknown" in answers.values() else "invalid")
    return rec


def cmd_product(args):
    prop = _property(args)
    p = _program(args.program, args)
    results = []
    status = "empty"
    for idx, aut in enumerate(_automata(prop, args)):
        ps = product(aut, p, prop.attack, prop.k)
        try:
            lasso = find_accepting_lasso(ps, args.budget_states)
        except BufferOverflow as e:
            results.append({"automaton_index": idx, "status": "inconclusive", "detail": str(e)})
            status = "inconclusive" if status == "empty" else status
            continue
        entry = {"automaton_index": idx, "status": "empty" if lasso is None else "nonempty"}
        if lasso is not None:
            status = "nonempty"
            if args.dump_lasso:
                w = lasso.word
                entry["lasso"] = {"stem": [[str(e) for e in v] for v in w.stem],
                                  "loop": [[str(e) for e in v] for v in w.loop]}
        results.append(entry)
    return {"status": status, "automata": results, "attack_model": prop.attack.name}


def cmd_run(args):
    p = _program(args.program, args)
    m = attack_model(args.attack_model or "io")
    lassos = enumerate_lassos(p, m, args.stem_max, args.loop_max, args.budget_states)
    out = []
    for x in lassos[:args.limit]:
        out.append({"trace": str(trace_of(x)),
                    "stem": [str(c) for c, _, _ in x.stem], "loop": [str(c) for c, _, _ in x.loop]})
    return {"status": "ok", "count": len(lassos), "lassos": out, "attack_model": m.name}


def cmd_fixtures(args):
    names = args.name or list(fixture_names())
    files = []
    for n in names:
        files += write_fixture(n, args.out_dir)
    return {"status": "ok", "fixtures": names, "files": files}


# ------------------------------------------------------------------ parser


def build_parser():
    ap = _Parser(prog="secwit", description="Security-preservation witnesses for program transformations.")
    ap.add_argument("--version", action="version", version=f"secwit {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--domain", type=int, metavar="D", help="override the programs' value domain")
    common.add_argument("--stem-max", type=int, default=10)
    common.add_argument("--loop-max", type=int, default=4)
    common.add_argument("--buffer-bound", type=int, help="override the property's buffer bound")
    common.add_argument("--budget-states", type=int, default=200_000)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--attack-model", help="e.g. io, io+mem, io+final_memory")
    common.add_argument("--smt-logic", default=DEFAULT_LOGIC)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("check", parents=[common], help="validate a witness")
    c.add_argument("--property", required=True)
    c.add_argument("--source", required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--witness", required=True)
    c.add_argument("--relative", action="store_true", help="check the bisim clause and refine relative to it")
    c.add_argument("--quantify", choices=DOMAINS, default="auto", help="target states the relation is checked on")
    c.set_defaults(fn=cmd_check)

    o = sub.add_parser("oracle", parents=[common], help="brute-force violations / preservation")
    o.add_argument("--property", required=True)
    o.add_argument("--source", required=True, help="program (or source of the pair)")
    o.add_argument("--target")
    o.add_argument("--limit", type=int, default=20, help="violations to list")
    o.set_defaults(fn=cmd_oracle)

    t = sub.add_parser("transform", parents=[common], help="apply an optimization, write target and witness")
    t.add_argument("--kind", required=True, choices=KINDS)
    t.add_argument("--source", required=True)
    t.add_argument("--site")
    t.add_argument("--mode", choices=("plain", "synchronized", "block"))
    t.add_argument("--regs", type=int)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(fn=cmd_transform)

    e = sub.add_parser("emit-smt", parents=[common], help="write the base and inductive SMT-LIB queries")
    e.add_argument("--property", required=True)
    e.add_argument("--source", required=True)
    e.add_argument("--target", required=True)
    e.add_argument("--witness", required=True)
    e.add_argument("--out-dir", required=True)
    e.add_argument("--case")
    e.add_argument("--solve", action="store_true", help="run an external solver on the queries")
    e.add_argument("--timeout", type=int, default=60)
    e.set_defaults(fn=cmd_emit_smt)

    p = sub.add_parser("product", parents=[common], help="emptiness of automaton x program^k")
    p.add_argument("--property", required=True)
    p.add_argument("--program", required=True)
    p.add_argument("--dump-lasso", action="store_true")
    p.set_defaults(fn=cmd_product)

    r = sub.add_parser("run", parents=[common], help="list lassos and traces of a program")
    r.add_argument("--program", required=True)
    r.add_argument("--limit", type=int, default=50)
    r.set_defaults(fn=cmd_run)

    f = sub.add_parser("fixtures", parents=[common], help="regenerate the bundled fixtures")
    f.add_argument("--out-dir", default="fixtures")
    f.add_argument("--name", action="append", choices=fixture_names())
    f.set_defaults(fn=cmd_fixtures)
    return ap


def run_cli(argv=None, out=None):
    """Run one command; returns ``(exit code, report dict)`` and prints the report."""
    out = sys.stdout if out is None else out
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as e:
        rec = {"status": "error", "error": str(e)}
        args = None
    else:
        try:
            rec = args.fn(args)
        except (UsageError, SecIRError, WitnessError, SmtError, UnsupportedPrefix, TransformError,
                ValueError) as e:
            rec = {"status": "error", "error": str(e)}
        except BufferOverflow as e:
            rec = {"status": "inconclusive", "reason": "buffer-bound-exceeded", "detail": str(e)}
        except (BudgetExceeded, Inconclusive) as e:
            rec = {"status": "inconclusive", "reason": e.reason, "detail": str(e)}
    report = {"tool": "secwit", "version": __version__, "command": getattr(args, "command", None)}
    if args is not None:
        report["budgets"] = {"budget_states": args.budget_states, "stem_max": args.stem_max,
                             "loop_max": args.loop_max, "buffer_bound": args.buffer_bound,
                             "domain": args.domain, "jobs": args.jobs}
    report.update(rec)
    print(json.dumps(report, sort_keys=True, default=str), file=out)
    return EXIT.get(report["status"], 3), report


def main(argv=None):
    code, _ = run_cli(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
