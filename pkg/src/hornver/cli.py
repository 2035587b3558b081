"""Command line front end.

    hornver [options] FILE.cv

Prints one verdict line per query:

    QUERY <text>: PROVED | PROVED (recent, injective) | NOT PROVED

Exit codes: 0 all queries proved, 1 at least one query not proved,
2 input or assumption error, 3 resource budget exhausted.
"""

from __future__ import annotations

import argparse
import json as jsonlib
import sys
import time
from dataclasses import dataclass, field

from .calculus import (EventP, IfEq, Input, LetDestr, Model, Name, Nil,
                       Output, Par, ParseError, PhaseP, Proc, Repl, Restr,
                       parse_file, subst_term_names)
from .clausegen import COMP_S1, generate, restriction_labels
from .instrument import InstrumentError, instr, instr_inj
from .query import (corr_with_compromise, event_roles, expand_not_facts,
                    prove_correspondence, prove_secrecy)
from .solver import BudgetExceeded, Solver, SolverError, SolverOptions
from .terms import ATTACKER, SID, Fact, NameFun, fact_str, fresh_var

PROVED = "PROVED"
PROVED_INJ = "PROVED (recent, injective)"
NOT_PROVED = "NOT PROVED"


@dataclass
class RunOptions:
    select: str = "sel2"
    elim_redundant: str = "off"
    max_steps: int = 10 ** 6
    max_clauses: int = 10 ** 5
    emit_clauses: bool = False
    check_tagged: bool = False
    compromise: list = field(default_factory=list)
    oracle: bool = False
    move_new: bool = False
    exhaustive: bool = False


@dataclass
class RunResult:
    verdicts: list            # (query text, verdict string)
    warnings: list
    exit_code: int
    emitted: list = field(default_factory=list)
    tagged: object = None
    oracle_reports: list = field(default_factory=list)
    timings: list = field(default_factory=list)    # millis, one per verdict
    witnesses: list = field(default_factory=list)  # clause strings per verdict


# ---------------------------------------------------------------------------
# pushing restrictions downward (more precise name parameters)

def _term_names(t, acc):
    if isinstance(t, Name):
        acc.add(t.symbol)
    elif hasattr(t, "args"):
        for a in t.args:
            _term_names(a, acc)
    return acc


def _uses(p: Proc, name: str) -> bool:
    if isinstance(p, Nil):
        return False
    if isinstance(p, Output):
        acc = _term_names(p.channel, set())
        _term_names(p.msg, acc)
        return name in acc or _uses(p.cont, name)
    if isinstance(p, Input):
        return name in _term_names(p.channel, set()) or _uses(p.cont, name)
    if isinstance(p, (EventP,)):
        return name in _term_names(p.arg, set()) or _uses(p.cont, name)
    if isinstance(p, PhaseP):
        return _uses(p.cont, name)
    if isinstance(p, Par):
        return _uses(p.left, name) or _uses(p.right, name)
    if isinstance(p, Repl):
        return _uses(p.body, name)
    if isinstance(p, Restr):
        return _uses(p.cont, name)
    if isinstance(p, LetDestr):
        acc = set()
        for a in p.args:
            _term_names(a, acc)
        return name in acc or _uses(p.then, name) or _uses(p.orelse, name)
    if isinstance(p, IfEq):
        acc = _term_names(p.m1, set())
        _term_names(p.m2, acc)
        return name in acc or _uses(p.then, name) or _uses(p.orelse, name)
    raise TypeError(p)


def _push_restr(name: str, q: Proc) -> Proc:
    """Sink a restriction of `name` into q as deep as the first use,
    without crossing replications."""
    if not _uses(q, name):
        return q
    if isinstance(q, Output):
        used_here = name in _term_names(q.channel, _term_names(q.msg, set()))
        if not used_here:
            return Output(q.channel, q.msg, _push_restr(name, q.cont), pp=q.pp)
    elif isinstance(q, Input):
        if name not in _term_names(q.channel, set()):
            return Input(q.channel, q.var, _push_restr(name, q.cont), pp=q.pp)
    elif isinstance(q, EventP):
        if name not in _term_names(q.arg, set()):
            return EventP(q.arg, _push_restr(name, q.cont), q.sid, pp=q.pp)
    elif isinstance(q, PhaseP):
        return PhaseP(q.t, _push_restr(name, q.cont), pp=q.pp)
    elif isinstance(q, Restr):
        return Restr(q.name, _push_restr(name, q.cont), q.label, pp=q.pp)
    elif isinstance(q, Par):
        lu = _uses(q.left, name)
        ru = _uses(q.right, name)
        if lu and not ru:
            return Par(_push_restr(name, q.left), q.right, pp=q.pp)
        if ru and not lu:
            return Par(q.left, _push_restr(name, q.right), pp=q.pp)
    elif isinstance(q, LetDestr):
        acc = set()
        for a in q.args:
            _term_names(a, acc)
        if name not in acc:
            return LetDestr(q.var, q.destructor, q.args,
                            _push_restr(name, q.then),
                            _push_restr(name, q.orelse), pp=q.pp)
    elif isinstance(q, IfEq):
        acc = _term_names(q.m1, _term_names(q.m2, set()))
        if name not in acc:
            return IfEq(q.m1, q.m2, _push_restr(name, q.then),
                        _push_restr(name, q.orelse), pp=q.pp)
    return Restr(name, q)


def move_new(p: Proc) -> Proc:
    if isinstance(p, Restr):
        return _push_restr(p.name, move_new(p.cont))
    if isinstance(p, Par):
        return Par(move_new(p.left), move_new(p.right), pp=p.pp)
    if isinstance(p, Repl):
        return Repl(move_new(p.body), p.sid, pp=p.pp)
    if isinstance(p, (Output, Input, EventP, PhaseP)):
        cont = move_new(p.cont)
        if isinstance(p, Output):
            return Output(p.channel, p.msg, cont, pp=p.pp)
        if isinstance(p, Input):
            return Input(p.channel, p.var, cont, pp=p.pp)
        if isinstance(p, EventP):
            return EventP(p.arg, cont, p.sid, pp=p.pp)
        return PhaseP(p.t, cont, pp=p.pp)
    if isinstance(p, LetDestr):
        return LetDestr(p.var, p.destructor, p.args, move_new(p.then),
                        move_new(p.orelse), pp=p.pp)
    if isinstance(p, IfEq):
        return IfEq(p.m1, p.m2, move_new(p.then), move_new(p.orelse),
                    pp=p.pp)
    return p


# ---------------------------------------------------------------------------
# analysis driver

def analyze(model: Model, opts: RunOptions = None) -> RunResult:
    opts = opts or RunOptions()
    warnings = []
    verdicts = []
    emitted = []
    if opts.move_new:
        model.process = move_new(model.process)
    comp_names = list(opts.compromise) + [n for n in model.compromise_names
                                          if n not in opts.compromise]
    compromise = bool(comp_names)
    roles = event_roles([q for _, q in model.queries])
    not_facts = expand_not_facts(model)
    sopts = SolverOptions(select=opts.select,
                          elim_redundant=opts.elim_redundant,
                          max_steps=opts.max_steps,
                          max_clauses=opts.max_clauses)
    solvers = {}

    def get_solver(inj: bool) -> Solver:
        if inj not in solvers:
            proc = instr_inj(model.process, model.sig) if inj \
                else instr(model.process, model.sig)
            clauses = generate(model, roles, proc, compromise=compromise,
                               inj=inj)
            if opts.emit_clauses:
                emitted.extend(clauses)
            solvers[inj] = Solver(clauses, model.sig, not_facts, sopts)
        return solvers[inj]

    queries = [(raw, q, None) for raw, q in model.queries]
    for name in comp_names:
        fact = compromise_query_fact(model, name)
        queries.append((fact_str(fact), None, fact))

    exit_code = 0
    timings = []
    witnesses = []
    try:
        for raw, q, extra_fact in queries:
            t0 = time.perf_counter()
            wit = []
            if extra_fact is not None or q.fact is not None:
                fact = extra_fact if extra_fact is not None else q.fact
                derived = get_solver(False).solve(fact)
                ok = not derived
                verdict = PROVED if ok else NOT_PROVED
                wit = [repr(cl) for cl in derived[:5]]
            else:
                inj = q.injective
                corr = q.corr
                if compromise:
                    corr = corr_with_compromise(corr)
                ok = prove_correspondence(get_solver(inj), model.sig, corr,
                                          inj, exhaustive=opts.exhaustive)
                verdict = (PROVED_INJ if inj else PROVED) if ok \
                    else NOT_PROVED
            verdicts.append((raw, verdict))
            timings.append(int((time.perf_counter() - t0) * 1000))
            witnesses.append(wit)
            if not ok:
                exit_code = max(exit_code, 1)
    except BudgetExceeded as exc:
        warnings.append("budget exhausted: %s" % exc)
        exit_code = 3
    except SolverError as exc:
        warnings.append("error: %s" % exc)
        exit_code = 2
    except InstrumentError as exc:
        warnings.append("error: %s" % exc)
        exit_code = 2

    # predictions of non-termination are only worth reporting when
    # saturation did in fact blow the budget
    if exit_code == 3:
        for s in solvers.values():
            if s.selector.warned_negative:
                warnings.append(
                    "warning: a fact with negative weight was selected; "
                    "saturation is unlikely to terminate")
                break
        for s in solvers.values():
            if s.warned_divergence:
                warnings.append(
                    "warning: clauses with the same conclusion keep growing "
                    "more hypotheses; saturation is unlikely to terminate")
                break
    return RunResult(verdicts, warnings, exit_code, emitted,
                     timings=timings, witnesses=witnesses)


def compromise_query_fact(model: Model, name: str) -> Fact:
    """Secrecy of a session name against an attacker that compromises
    other sessions: the queried instance carries the honest marker."""
    proc = instr(model.process, model.sig)
    for sym, targs, sids in restriction_labels(proc):
        if sym == name:
            args = tuple(fresh_var("x") for _ in targs) + \
                tuple(fresh_var("i", SID) for _ in sids)
            if sids:
                args += (COMP_S1,)
            return Fact(ATTACKER, (NameFun(name, args),), model.max_phase)
    raise ParseError("no restriction named %r in the process" % name)


# ---------------------------------------------------------------------------
# entry point

def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hornver",
        description="verify secrecy and correspondence properties of "
                    "cryptographic protocols for unbounded sessions")
    ap.add_argument("file", help="protocol model (.cv)")
    ap.add_argument("--select", choices=["sel0", "sel1", "sel2"],
                    default="sel2", help="selection function heuristic")
    ap.add_argument("--elim-redundant", choices=["off", "mevent", "all"],
                    default="off", help="redundant hypothesis elimination")
    ap.add_argument("--max-steps", type=int, default=10 ** 6,
                    help="resolution step budget")
    ap.add_argument("--max-clauses", type=int, default=10 ** 5,
                    help="clause count budget")
    ap.add_argument("--emit-clauses", action="store_true",
                    help="print the generated clauses")
    ap.add_argument("--check-tagged", action="store_true",
                    help="report whether the model is in the tagged class "
                         "with guaranteed termination")
    ap.add_argument("--compromise", action="append", default=[],
                    metavar="NAME",
                    help="let the attacker compromise sessions; also query "
                         "secrecy of the session name NAME")
    ap.add_argument("--oracle", action="store_true",
                    help="search bounded attack traces for unproved queries")
    ap.add_argument("--move-new", action="store_true",
                    help="push restrictions downward before translation")
    ap.add_argument("--exhaustive", action="store_true",
                    help="backtrack over all solution readings when "
                         "checking correspondences")
    ap.add_argument("--json", action="store_true", dest="as_json",
                    help="machine readable output")
    return ap


def main(argv=None) -> int:
    ns = build_arg_parser().parse_args(argv)
    opts = RunOptions(select=ns.select, elim_redundant=ns.elim_redundant,
                      max_steps=ns.max_steps, max_clauses=ns.max_clauses,
                      emit_clauses=ns.emit_clauses,
                      check_tagged=ns.check_tagged,
                      compromise=ns.compromise, oracle=ns.oracle,
                      move_new=ns.move_new, exhaustive=ns.exhaustive)
    try:
        model = parse_file(ns.file)
    except (ParseError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2

    if opts.check_tagged:
        from .tagged import check_tagged
        report = check_tagged(model)
        if not ns.as_json:
            if report.tagged:
                print("TAGGED: yes (saturation terminates with any "
                      "selection function)")
            else:
                print("TAGGED: no (%s)" % report.reason)

    result = analyze(model, opts)

    if opts.oracle:
        from .oracle import bounded_trace_check
        for raw, verdict in result.verdicts:
            if verdict == NOT_PROVED:
                q = next((q for r, q in model.queries if r == raw), None)
                trace = bounded_trace_check(model, q) if q is not None \
                    else None
                result.oracle_reports.append((raw, trace))

    if ns.as_json:
        # one JSON object per line, one line per query
        timings = result.timings + [0] * len(result.verdicts)
        witnesses = result.witnesses + [[]] * len(result.verdicts)
        oracle = dict(result.oracle_reports)
        for k, (raw, verdict) in enumerate(result.verdicts):
            wit = list(witnesses[k])
            trace = oracle.get(raw)
            if trace:
                wit.extend(trace)
            print(jsonlib.dumps({"query": raw, "status": verdict,
                                 "witnesses": wit, "millis": timings[k]}))
        for w in result.warnings:
            print(w, file=sys.stderr)
        return result.exit_code

    if opts.emit_clauses:
        for c in result.emitted:
            print(c)
    for raw, verdict in result.verdicts:
        print("QUERY %s: %s" % (raw, verdict))
    for k, (raw, _) in enumerate(result.verdicts):
        if k < len(result.timings):
            print("time %s: %d ms" % (raw, result.timings[k]),
                  file=sys.stderr)
    for w in result.warnings:
        print(w, file=sys.stderr)
    for raw, trace in result.oracle_reports:
        if trace is None:
            print("ORACLE %s: no attack within bounds" % raw)
        else:
            print("ORACLE %s: attack trace found (%d steps)"
                  % (raw, len(trace)))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
