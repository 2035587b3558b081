"""Decision procedure for the tagged class of protocols.

A protocol in this class uses only the built-in primitives, communicates
on public channels, prefixes every encryption, signature, hash, and mac
payload with a distinct constant tag, checks the tag after every
decryption, and has a single honest run exercising every program point.
Saturation is guaranteed to terminate on such protocols for closed
secrecy queries, with any selection function.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .calculus import (EQUAL, Config, EventP, IfEq, Input, LetDestr, Model,
                       Name, Nil, Output, Par, PhaseP, Repl, Restr,
                       SearchBudget, builtin_signature, step,
                       strip_replications)
from .terms import App, Var, is_tuple_symbol, term_str

TAGGED_CONSTRUCTORS = frozenset(
    ["sencrypt", "sencrypt_p", "pencrypt_p", "sign", "nmrsign", "h", "mac"])
TAG_CHECK_DESTRUCTORS = frozenset(
    ["sdecrypt", "sdecrypt_p", "pdecrypt_p", "checksignature", "getmessage"])
_PROJ_RE = re.compile(r"^(\d+)th(\d+)$")


@dataclass
class Condition:
    name: str
    ok: bool
    detail: str


@dataclass
class TagReport:
    conditions: list = field(default_factory=list)

    def add(self, name, ok, detail=""):
        self.conditions.append(Condition(name, ok, detail))

    @property
    def tagged(self) -> bool:
        return all(c.ok for c in self.conditions)

    @property
    def reason(self) -> str:
        for c in self.conditions:
            if not c.ok:
                return "%s: %s" % (c.name, c.detail)
        return ""


def _walk(p):
    yield p
    for f in ("cont", "then", "orelse", "left", "right", "body"):
        q = getattr(p, f, None)
        if q is not None:
            yield from _walk(q)


def _proc_terms(p):
    """Shallow term positions of one process node."""
    if isinstance(p, Output):
        return [p.channel, p.msg]
    if isinstance(p, Input):
        return [p.channel]
    if isinstance(p, LetDestr):
        return list(p.args)
    if isinstance(p, IfEq):
        return [p.m1, p.m2]
    if isinstance(p, EventP):
        return [p.arg]
    return []


def _subterms(t):
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from _subterms(a)


def _is_constant(t, free_names) -> bool:
    return isinstance(t, Name) and t.symbol in free_names


def check_tagged(model: Model, trace_cap: int = 100000) -> TagReport:
    rep = TagReport()
    sig = model.sig
    proc = model.process

    # only the stock constructors and destructors, no equations
    builtin = builtin_signature()
    extra_cons = [s for s in sig.constructors
                  if s not in builtin.constructors and not is_tuple_symbol(s)]
    extra_des = [s for s in sig.destructors
                 if s not in builtin.destructors and s != EQUAL
                 and not _PROJ_RE.match(s)]
    probs = []
    if extra_cons:
        probs.append("extra constructors %s" % ", ".join(sorted(extra_cons)))
    if extra_des:
        probs.append("extra destructors %s" % ", ".join(sorted(extra_des)))
    if sig.equations:
        probs.append("equational theory declared")
    rep.add("stock primitives only", not probs, "; ".join(probs))

    # public channels everywhere
    bad = [p.pp for p in _walk(proc)
           if isinstance(p, (Input, Output))
           and not _is_constant(p.channel, model.init)]
    rep.add("channels are public free names", not bad,
            "non-public channel at program point(s) %s" %
            ", ".join(map(str, bad)))

    # every payload starts with a distinct constant tag
    tags = {}          # tag symbol -> first program point
    untagged = []
    clashes = []
    seen_apps = set()  # let-bound payloads are inlined; count each term once
    for p in _walk(proc):
        for t in _proc_terms(p):
            for s in _subterms(t):
                if not (isinstance(s, App)
                        and s.symbol in TAGGED_CONSTRUCTORS):
                    continue
                if s in seen_apps:
                    continue
                seen_apps.add(s)
                first = s.args[0]
                if not (isinstance(first, App)
                        and is_tuple_symbol(first.symbol)
                        and first.args
                        and _is_constant(first.args[0], model.free_names)):
                    untagged.append("%s at %d" % (s.symbol, p.pp))
                    continue
                tag = first.args[0].symbol
                if tag in tags:
                    clashes.append("tag %s reused at %d" % (tag, p.pp))
                else:
                    tags[tag] = p.pp
    probs = untagged + clashes
    rep.add("payloads carry distinct constant tags", not probs,
            "; ".join(probs))

    # every decryption is followed by a tag check
    missing = []
    for p in _walk(proc):
        if isinstance(p, LetDestr) \
                and p.destructor in TAG_CHECK_DESTRUCTORS:
            if not _checks_first_component_tag(p, model.free_names):
                missing.append("%s at %d" % (p.destructor, p.pp))
        if isinstance(p, LetDestr) and p.destructor == "nmrchecksign":
            third = p.args[2]
            if not (isinstance(third, App)
                    and is_tuple_symbol(third.symbol) and third.args
                    and _is_constant(third.args[0], model.free_names)):
                missing.append("nmrchecksign at %d" % p.pp)
    rep.add("tags are checked after decryption", not missing,
            "no tag check after " + "; ".join(missing) if missing else "")

    # no else branches on tests, and one honest run covers everything
    withelse = [p.pp for p in _walk(proc)
                if isinstance(p, (LetDestr, IfEq))
                and not isinstance(p.orelse, Nil)]
    rep.add("tests have no else branch", not withelse,
            "else branch at program point(s) %s" %
            ", ".join(map(str, withelse)))

    trace_terms = None
    try:
        trace_terms = _honest_trace_terms(model, trace_cap)
    except SearchBudget:
        rep.add("one honest run covers every program point", False,
                "trace search budget exhausted")
    else:
        rep.add("one honest run covers every program point",
                trace_terms is not None,
                "" if trace_terms is not None
                else "no replication-free trace executes every program "
                     "point once and terminates")

    if trace_terms is None:
        rep.add("encryption keys in the honest run are public keys", False,
                "no honest run to inspect")
        rep.add("long-term keys are atomic constants", False,
                "no honest run to inspect")
        return rep

    # honest-run key discipline
    badenc = []
    badkey = []
    for t in trace_terms:
        for s in _subterms(t):
            if not isinstance(s, App):
                continue
            if s.symbol == "pencrypt_p":
                k = s.args[1]
                if not (isinstance(k, App) and k.symbol == "pk"):
                    badenc.append(term_str(k))
            if s.symbol in ("pk", "host"):
                a = s.args[0]
                if not isinstance(a, Name) or a.symbol in tags:
                    badkey.append(term_str(a))
    rep.add("encryption keys in the honest run are public keys",
            not badenc, "; ".join(sorted(set(badenc))))
    rep.add("long-term keys are atomic constants",
            not badkey, "; ".join(sorted(set(badkey))))
    return rep


def _checks_first_component_tag(let: LetDestr, free_names) -> bool:
    """After `let y = g(...)`, look through the chain of projections and
    equality tests for a test of the first component of y against a
    constant."""
    y = let.var
    first_of_y = set()
    p = let.then
    while True:
        if isinstance(p, LetDestr):
            m = _PROJ_RE.match(p.destructor)
            if m is None:
                return False
            if m.group(1) == "1" and p.args == (y,):
                first_of_y.add(p.var)
            p = p.then
        elif isinstance(p, IfEq):
            for a, b in ((p.m1, p.m2), (p.m2, p.m1)):
                if isinstance(a, Var) and a in first_of_y \
                        and _is_constant(b, free_names):
                    return True
            p = p.then
        else:
            return False


def _proc_skeleton(p):
    """Structural key for a closed process: program point plus the terms
    substituted into it, recursively."""
    kids = tuple(_proc_skeleton(getattr(p, f))
                 for f in ("cont", "then", "orelse", "left", "right", "body")
                 if getattr(p, f, None) is not None)
    return (p.pp, tuple(map(term_str, _proc_terms(p))), kids)


def _honest_trace_terms(model: Model, cap: int):
    """Search for a replication-free trace executing every program point
    exactly once and emptying the process multiset.  Returns the closed
    term positions reduced along the trace, or None."""
    stripped = strip_replications(model.process)
    goal_pps = {p.pp for p in _walk(stripped) if not isinstance(p, Nil)}
    start = Config(frozenset(model.free_names), (stripped,), (), ())
    stack = [(start, ())]
    seen = set()
    visited = 0
    while stack:
        c, terms = stack.pop()
        key = (frozenset(c.executed),
               tuple(sorted(map(_proc_skeleton, c.procs))))
        if key in seen:
            continue
        seen.add(key)
        visited += 1
        if visited > cap:
            raise SearchBudget("state cap exceeded")
        if not c.procs:
            if len(set(c.executed)) == len(c.executed) \
                    and goal_pps <= set(c.executed):
                return list(terms)
            continue
        by_pp = {p.pp: p for p in c.procs}
        for succ in step(model.sig, c):
            if len(set(succ.executed)) != len(succ.executed):
                continue
            new = succ.executed[len(c.executed):]
            extra = []
            for pp in new:
                node = by_pp.get(pp)
                if node is not None:
                    extra.extend(_proc_terms(node))
            stack.append((succ, terms + tuple(extra)))
    return None
