"""Brute-force cross-checks for the clause solver and the trace semantics.

Two independent oracles live here.  `ground_derivable` decides Horn-clause
derivability by forward chaining over a finite ground universe; the test
suite compares it against the resolution prover on randomized clause sets.
`bounded_trace_check` searches for concrete attack traces of a protocol
under a Dolev-Yao attacker with bounded replication, used to confirm
NOT PROVED verdicts with an actual run of the operational semantics.

Neither oracle is complete; both err on the side of reporting nothing.
"""

import itertools
from dataclasses import dataclass

from .calculus import (EQUAL, EventP, IfEq, Input, LetDestr, Nil, Output,
                       Par, PhaseP, Proc, Repl, Restr, SearchBudget,
                       reduce_destructor, subst_proc)
from .terms import (App, Fact, Name, NameFun, Var, fresh_var, match_facts,
                    match_under, rename_rule, subst_apply, subst_fact,
                    term_str, unify_under)


# ---------------------------------------------------------------------------
# ground Horn fixpoint

def _collect_symbols(clauses, fact):
    """Constants and function symbols occurring in the clause set and
    the query fact."""
    consts = {}
    funs = {}

    def walk(t):
        if isinstance(t, Var):
            return
        if isinstance(t, Name):
            consts[t] = None
            return
        if isinstance(t, (App, NameFun)):
            if t.args:
                funs[(type(t), t.symbol, len(t.args))] = None
                for a in t.args:
                    walk(a)
            else:
                consts[t] = None

    for c in clauses:
        for f in tuple(c.hyps) + (c.concl,):
            for a in f.args:
                walk(a)
    for a in fact.args:
        walk(a)
    if not consts:
        consts[Name("@c0")] = None
    return list(consts), list(funs)


def _build_universe(consts, funs, depth, cap):
    terms = list(consts)
    seen = set(terms)
    for _ in range(depth):
        layer = list(terms)
        for kind, sym, arity in funs:
            for args in itertools.product(layer, repeat=arity):
                t = kind(sym, args)
                if t in seen:
                    continue
                seen.add(t)
                terms.append(t)
                if len(seen) > cap:
                    raise SearchBudget("ground universe exceeds %d terms"
                                       % cap)
    return terms, seen


def _hyp_matches(hyps, derived, s):
    """All substitutions grounding every hypothesis inside the derived
    fact set, extending s."""
    if not hyps:
        yield s
        return
    first, rest = hyps[0], hyps[1:]
    for df in derived:
        s2 = match_facts(first, df, dict(s))
        if s2 is not None:
            yield from _hyp_matches(rest, derived, s2)


def _fact_vars(f):
    out = []
    seen = set()

    def walk(t):
        if isinstance(t, Var):
            if t not in seen:
                seen.add(t)
                out.append(t)
        elif isinstance(t, (App, NameFun)):
            for a in t.args:
                walk(a)

    for a in f.args:
        walk(a)
    return out


def ground_derivable(clauses, fact, depth, universe_cap=20000,
                     work_cap=2000000):
    """Decide whether the ground fact is derivable from the clauses by a
    least fixpoint restricted to the ground universe of the given depth.

    The universe consists of every ground term of depth at most `depth`
    built from the function symbols and constants occurring in the
    clauses and the fact.  Conclusions stepping outside the universe are
    dropped, so the answer under-approximates unbounded derivability but
    is monotone in both the clause set and the depth.
    """
    consts, funs = _collect_symbols(clauses, fact)
    terms, term_set = _build_universe(consts, funs, depth, universe_cap)
    derived = set()
    work = [work_cap]

    def add(f):
        if f in derived:
            return False
        if any(a not in term_set for a in f.args):
            return False
        derived.add(f)
        return True

    changed = True
    while changed:
        changed = False
        snapshot = list(derived)
        for c in clauses:
            for s in _hyp_matches(c.hyps, snapshot, {}):
                free = [v for v in _fact_vars(c.concl) if v not in s]
                if len(terms) ** len(free) > work[0]:
                    raise SearchBudget("ground fixpoint work cap exceeded")
                for combo in itertools.product(terms, repeat=len(free)):
                    s2 = dict(s)
                    s2.update(zip(free, combo))
                    work[0] -= 1
                    if add(subst_fact(s2, c.concl)):
                        changed = True
    return fact in derived


# ---------------------------------------------------------------------------
# bounded trace search
#
# The attacker is folded into the search symbolically: every input on a
# public channel binds a fresh metavariable together with a constraint
# "this value is synthesizable from the knowledge intercepted so far".
# Destructor applications and equality tests on metavariables branch on
# unifiers, and a backtracking synthesis check grounds the constraints
# before any attack is reported, so every reported trace is realizable.

ADV = Name("@adv")


@dataclass(frozen=True)
class TraceState:
    procs: tuple
    names: frozenset
    know: frozenset   # intercepted terms
    cons: tuple       # (knowledge snapshot at send time, required term)
    events: tuple
    phase: int
    log: tuple


def _unroll(p: Proc, n: int) -> Proc:
    """Replace each replication by n parallel copies of its body."""
    if isinstance(p, Repl):
        body = _unroll(p.body, n)
        out = body
        for _ in range(n - 1):
            out = Par(body, out)
        return out
    if isinstance(p, Par):
        return Par(_unroll(p.left, n), _unroll(p.right, n))
    if isinstance(p, Output):
        return Output(p.channel, p.msg, _unroll(p.cont, n))
    if isinstance(p, Input):
        return Input(p.channel, p.var, _unroll(p.cont, n))
    if isinstance(p, Restr):
        return Restr(p.name, _unroll(p.cont, n), p.label)
    if isinstance(p, LetDestr):
        return LetDestr(p.var, p.destructor, p.args, _unroll(p.then, n),
                        _unroll(p.orelse, n))
    if isinstance(p, IfEq):
        return IfEq(p.m1, p.m2, _unroll(p.then, n), _unroll(p.orelse, n))
    if isinstance(p, EventP):
        return EventP(p.arg, _unroll(p.cont, n), p.sid)
    if isinstance(p, PhaseP):
        return PhaseP(p.t, _unroll(p.cont, n))
    return p


def _is_ground(t):
    if isinstance(t, Var):
        return False
    if isinstance(t, (App, NameFun)):
        return all(_is_ground(a) for a in t.args)
    return True


def _fill(t):
    """Ground leftover attacker choices with the attacker's own name."""
    if isinstance(t, Var):
        return ADV
    if isinstance(t, App):
        return App(t.symbol, tuple(_fill(a) for a in t.args))
    return t


def _public_channel(model, ch):
    return isinstance(ch, Name) and ch.symbol in model.init


def _subst_state(st: TraceState, s: dict) -> TraceState:
    if not s:
        return st
    return TraceState(
        tuple(subst_proc(s, p) for p in st.procs),
        st.names,
        frozenset(subst_apply(s, t) for t in st.know),
        tuple((frozenset(subst_apply(s, m) for m in snap),
               subst_apply(s, t), enum) for snap, t, enum in st.cons),
        tuple(subst_apply(s, e) for e in st.events),
        st.phase,
        st.log)


# -- attacker synthesis over a knowledge snapshot ---------------------------

class _SynthCtx:
    """Budget, analysis cache and the constructor alphabet the attacker
    bothers to build with (the symbols the protocol itself mentions)."""

    def __init__(self, sig, ctors, budget):
        self.sig = sig
        self.ctors = ctors
        self.left = budget
        self.cache = {}

    def spend(self):
        self.left -= 1
        if self.left < 0:
            raise SearchBudget("synthesis budget exhausted")


def _analyze(ctx, terms):
    """Close a knowledge set under public destructors.  Metavariables
    inside intercepted terms are treated as opaque constants here; the
    backtracking layer above compensates by trying bindings for them."""
    key = frozenset(terms)
    hit = ctx.cache.get(key)
    if hit is not None:
        return hit
    sig = ctx.sig
    known = sorted(terms, key=repr)
    kset = set(known)

    def constructible(t):
        if t in kset or t == ADV:
            return True
        if isinstance(t, App):
            decl = sig.constructors.get(t.symbol)
            if decl is not None and decl.public:
                return all(constructible(a) for a in t.args)
        return False

    changed = True
    while changed:
        changed = False
        for gname, decl in sig.destructors.items():
            if not decl.public:
                continue
            for rule in decl.rules:
                r = rename_rule(rule)
                for m in list(known):
                    s = match_under({}, r.lhs[0], m)
                    if s is None:
                        continue
                    rest = [subst_apply(s, a) for a in r.lhs[1:]]
                    if not all(constructible(a) for a in rest):
                        continue
                    res = subst_apply(s, r.rhs)
                    if res not in kset:
                        kset.add(res)
                        known.append(res)
                        changed = True
    ctx.cache[key] = known
    return known


def _derive_options(ctx, snap, t, s, depth, enum):
    """Ways of making t synthesizable from the knowledge snapshot.

    Yields (substitution, deferred) pairs where `deferred` lists
    constraints pushed to the end of the queue.  A free variable is
    normally deferred instead of enumerated: structure gets imposed on
    it by unification when a role deconstructs the value, and if nothing
    ever does, the attacker's own name works.  Only original input
    variables (enum=True) are enumerated, which is what lets the
    attacker volunteer a key of its own such as pk(<attacker name>).
    """
    ctx.spend()
    t = subst_apply(s, t)
    analyzed = _analyze(ctx, frozenset(subst_apply(s, m) for m in snap))

    if isinstance(t, Var):
        if not enum:
            yield s, ((snap, t, False),)
            return
        seen = set()
        for o in [ADV] + analyzed:
            if o not in seen:
                seen.add(o)
                ctx.spend()
                yield {**s, t: o}, ()
        for sym, arity in ctx.ctors:
            if arity != 1:
                continue
            for arg in analyzed:
                o = App(sym, (arg,))
                if o not in seen:
                    seen.add(o)
                    ctx.spend()
                    yield {**s, t: o}, ()
        return

    # reuse an intercepted or analyzed term outright
    for m in analyzed:
        ctx.spend()
        s2 = unify_under(dict(s), t, m)
        if s2 is not None:
            yield s2, ()

    # or build it from parts with a public constructor
    if depth > 0 and isinstance(t, App):
        decl = ctx.sig.constructors.get(t.symbol)
        if decl is not None and decl.public:

            def per_arg(i, cur, deferred):
                if i == len(t.args):
                    yield cur, deferred
                    return
                for nxt, extra in _derive_options(ctx, snap, t.args[i],
                                                  cur, depth - 1, False):
                    yield from per_arg(i + 1, nxt, deferred + extra)

            yield from per_arg(0, dict(s), ())


def _solutions(ctx, cons, depth=6):
    """All substitutions satisfying every synthesis constraint, lazily."""

    def go(pending, s):
        if not pending:
            yield s
            return
        # pick the first constraint that is not a still-free deferrable
        # variable; those wait for structure from their siblings
        chosen = None
        for idx, (snap, t0, enum) in enumerate(pending):
            t = subst_apply(s, t0)
            if isinstance(t, Var) and not enum:
                continue
            chosen = idx
            break
        if chosen is None:
            # every leftover is an unconstrained attacker choice
            snap, t0, enum = pending[0]
            t = subst_apply(s, t0)
            yield from go(pending[1:], {**s, t: ADV})
            return
        snap, t0, enum = pending[chosen]
        rest = pending[:chosen] + pending[chosen + 1:]
        for s2, extra in _derive_options(ctx, snap, t0, s, depth, enum):
            yield from go(rest + tuple(extra), s2)

    yield from go(tuple(cons), {})


def _solve_constraints(ctx, cons, depth=6):
    """One substitution satisfying every synthesis constraint, or None."""
    for s in _solutions(ctx, cons, depth):
        return s
    return None


# -- state normalization and branching moves --------------------------------

def _fresh_name(names, base):
    fresh = base
    k = 0
    while fresh in names:
        k += 1
        fresh = "%s~%d" % (base, k)
    return fresh


def _normalize(model, st: TraceState) -> TraceState:
    """Run every enabled reduction that neither branches nor touches a
    metavariable.  Sound because each such action is enabled and only
    ever commutes forward in a real trace."""
    sig = model.sig
    changed = True
    while changed:
        changed = False
        procs = list(st.procs)
        for i, p in enumerate(procs):
            rest = procs[:i] + procs[i + 1:]
            if isinstance(p, Nil):
                st = TraceState(tuple(rest), st.names, st.know, st.cons,
                                st.events, st.phase, st.log)
            elif isinstance(p, Par):
                st = TraceState(tuple(rest) + (p.left, p.right), st.names,
                                st.know, st.cons, st.events, st.phase,
                                st.log)
            elif isinstance(p, Restr):
                fresh = _fresh_name(st.names, p.name)
                body = subst_proc({Name(p.name): Name(fresh)}, p.cont)
                st = TraceState(tuple(rest) + (body,),
                                st.names | {fresh}, st.know, st.cons,
                                st.events, st.phase, st.log)
            elif isinstance(p, EventP):
                st = TraceState(tuple(rest) + (p.cont,), st.names, st.know,
                                st.cons, st.events + (p.arg,), st.phase,
                                st.log + ("event %s" % term_str(p.arg),))
            elif isinstance(p, PhaseP) and p.t <= st.phase:
                st = TraceState(tuple(rest) + (p.cont,), st.names, st.know,
                                st.cons, st.events, st.phase, st.log)
            elif isinstance(p, Output) and _public_channel(model, p.channel):
                st = TraceState(
                    tuple(rest) + (p.cont,), st.names,
                    st.know | {p.msg}, st.cons, st.events, st.phase,
                    st.log + ("out %s: %s" % (term_str(p.channel),
                                              term_str(p.msg)),))
            elif isinstance(p, LetDestr) and p.destructor != EQUAL \
                    and all(_is_ground(a) for a in p.args):
                results = reduce_destructor(sig, p.destructor, p.args)
                if len(results) > 1:
                    continue    # genuinely branching, leave for _moves
                if results:
                    cont = subst_proc({p.var: results[0]}, p.then)
                else:
                    cont = Nil()   # failed test: thread dies
                st = TraceState(tuple(rest) + (cont,), st.names, st.know,
                                st.cons, st.events, st.phase, st.log)
            elif isinstance(p, IfEq) and _is_ground(p.m1) \
                    and _is_ground(p.m2):
                cont = p.then if p.m1 == p.m2 else Nil()
                st = TraceState(tuple(rest) + (cont,), st.names, st.know,
                                st.cons, st.events, st.phase, st.log)
            else:
                continue
            changed = True
            break
    return st


def _destructor_rules(sig, gname):
    if gname == EQUAL:
        x = fresh_var("eq")
        from .terms import RewriteRule
        return [RewriteRule(EQUAL, (x, x), x)]
    return sig.destructors[gname].rules


def _moves(model, st: TraceState):
    """Branching successor states of a normalized state."""
    sig = model.sig
    out = []
    procs = list(st.procs)
    for i, p in enumerate(procs):
        rest = tuple(procs[:i] + procs[i + 1:])
        if isinstance(p, Input) and _public_channel(model, p.channel):
            v = fresh_var("adv")
            cont = subst_proc({p.var: v}, p.cont)
            out.append(TraceState(
                rest + (cont,), st.names, st.know,
                st.cons + ((st.know, v, True),), st.events, st.phase,
                st.log + ("in %s: attacker message %s"
                          % (term_str(p.channel), v.name),)))
        elif isinstance(p, Output) and isinstance(p.channel, Name) \
                and not _public_channel(model, p.channel):
            for j, q in enumerate(procs):
                if j == i or not isinstance(q, Input):
                    continue
                if q.channel != p.channel:
                    continue
                rest2 = tuple(r for k, r in enumerate(procs)
                              if k not in (i, j))
                cont_in = subst_proc({q.var: p.msg}, q.cont)
                out.append(TraceState(
                    rest2 + (p.cont, cont_in), st.names, st.know, st.cons,
                    st.events, st.phase,
                    st.log + ("private %s: %s" % (term_str(p.channel),
                                                  term_str(p.msg)),)))
        elif isinstance(p, LetDestr):
            for rule in _destructor_rules(sig, p.destructor):
                r = rename_rule(rule)
                s = {}
                for pat, arg in zip(r.lhs, p.args):
                    s = unify_under(s, pat, arg)
                    if s is None:
                        break
                if s is None:
                    continue
                cont = subst_proc({p.var: subst_apply(s, r.rhs)}, p.then)
                out.append(_subst_state(
                    TraceState(rest + (cont,), st.names, st.know, st.cons,
                               st.events, st.phase, st.log), s))
        elif isinstance(p, IfEq):
            s = unify_under({}, p.m1, p.m2)
            if s is not None:
                out.append(_subst_state(
                    TraceState(rest + (p.then,), st.names, st.know,
                               st.cons, st.events, st.phase, st.log), s))
    if any(isinstance(p, PhaseP) and p.t > st.phase for p in procs):
        out.append(TraceState(st.procs, st.names, st.know, st.cons,
                              st.events, st.phase + 1,
                              st.log + ("phase %d" % (st.phase + 1),)))
    return out


# -- deduplication key with canonical metavariable numbering ----------------

def _term_key(t, ren):
    if isinstance(t, Var):
        if t not in ren:
            ren[t] = "?%d" % len(ren)
        return ren[t]
    if isinstance(t, Name):
        return ("n", t.symbol)
    if isinstance(t, (App, NameFun)):
        return (t.symbol, tuple(_term_key(a, ren) for a in t.args))
    return repr(t)


def _proc_key(p, ren):
    if isinstance(p, Nil):
        return ("0",)
    if isinstance(p, Output):
        return ("out", _term_key(p.channel, ren), _term_key(p.msg, ren),
                _proc_key(p.cont, ren))
    if isinstance(p, Input):
        return ("in", _term_key(p.channel, ren), p.var.name,
                _proc_key(p.cont, ren))
    if isinstance(p, Par):
        return ("par", _proc_key(p.left, ren), _proc_key(p.right, ren))
    if isinstance(p, Repl):
        return ("repl", _proc_key(p.body, ren))
    if isinstance(p, Restr):
        return ("new", p.name, _proc_key(p.cont, ren))
    if isinstance(p, LetDestr):
        return ("let", p.destructor,
                tuple(_term_key(a, ren) for a in p.args),
                _proc_key(p.then, ren), _proc_key(p.orelse, ren))
    if isinstance(p, IfEq):
        return ("if", _term_key(p.m1, ren), _term_key(p.m2, ren),
                _proc_key(p.then, ren), _proc_key(p.orelse, ren))
    if isinstance(p, EventP):
        return ("ev", _term_key(p.arg, ren), _proc_key(p.cont, ren))
    if isinstance(p, PhaseP):
        return ("ph", p.t, _proc_key(p.cont, ren))
    return repr(p)


class _AnonRen(dict):
    def __missing__(self, key):
        return "?"


def _state_key(st: TraceState):
    """Dedup key: metavariables are numbered canonically after sorting
    processes by a variable-blind skeleton, so states reached through
    different interleavings of independent actions collide."""
    anon = _AnonRen()
    procs = sorted(st.procs, key=lambda p: repr(_proc_key(p, anon)))
    ren = {}
    pkeys = tuple(_proc_key(p, ren) for p in procs)
    know = tuple(sorted(repr(_term_key(t, ren)) for t in st.know))
    cons = tuple(sorted(
        (repr(_term_key(t, ren)),
         tuple(sorted(repr(_term_key(m, ren)) for m in snap)))
        for snap, t, enum in st.cons))
    events = tuple(_term_key(e, ren) for e in st.events)
    return (pkeys, know, cons, events, st.phase)


# -- query checking on a grounded trace -------------------------------------

def _query_term(t):
    """Rewrite a query-level pattern into the source-term alphabet: a
    zero-argument name function stands for the name itself."""
    if isinstance(t, NameFun) and not t.args:
        return Name(t.symbol)
    if isinstance(t, (App, NameFun)):
        return type(t)(t.symbol, tuple(_query_term(a) for a in t.args))
    return t


def _corr_holds(node, s, events, before):
    pat = subst_apply(s, _query_term(node.term))
    for j in range(before):
        s2 = match_under(dict(s), pat, events[j])
        if s2 is None:
            continue
        if all(_corr_holds(ch, s2, events, j) for ch in node.children):
            return True
    return False


def _corr_violated(root, events):
    """Index of an occurrence of the root event with no preceding set of
    matching child events, or None."""
    pat = _query_term(root.term)
    for i, ev in enumerate(events):
        s = match_under({}, pat, ev)
        if s is None:
            continue
        if not all(_corr_holds(ch, s, events, i) for ch in root.children):
            return i
    return None


def _secret_base(fact: Fact):
    t = fact.args[0]
    if isinstance(t, (NameFun, Name)):
        return t.symbol
    return None


def _name_instances(names, base):
    return [n for n in sorted(names)
            if n == base or n.startswith(base + "~")]


def _check_state(model, query, st, ctx):
    """Feasibility plus attack detection.  Returns (feasible, trace)."""
    try:
        s0 = _solve_constraints(ctx, st.cons)
    except SearchBudget:
        return True, None    # keep exploring, but completeness is gone
    if s0 is None:
        return False, None

    if query.fact is not None:
        base = _secret_base(query.fact)
        if base is None:
            return True, None
        for inst in _name_instances(st.names, base):
            goal = (st.know, Name(inst), False)
            try:
                s1 = _solve_constraints(ctx, st.cons + (goal,))
            except SearchBudget:
                continue
            if s1 is not None:
                return True, list(st.log) + \
                    ["attacker derives %s" % inst]
        return True, None

    root_sym = query.corr.symbol
    if not any(isinstance(e, App) and e.symbol == root_sym
               for e in st.events):
        return True, None
    # the violation may only show under some groundings of the attacker
    # choices, so walk the solution stream, not just the witness above
    seen_vectors = set()
    try:
        for s in _solutions(ctx, st.cons):
            events = tuple(_fill(subst_apply(s, e)) for e in st.events)
            if events in seen_vectors:
                continue
            seen_vectors.add(events)
            idx = _corr_violated(query.corr, list(events))
            if idx is not None:
                return True, list(st.log) + \
                    ["event %s has no matching earlier events"
                     % term_str(events[idx])]
            if len(seen_vectors) >= 400:
                break
    except SearchBudget:
        pass
    return True, None


# -- search driver ----------------------------------------------------------

def _protocol_constructors(model):
    """Constructor symbols the protocol itself applies; the synthesizer
    does not waste candidates on primitives no role would accept."""
    from .calculus import proc_nodes
    syms = {}

    def walk(t):
        if isinstance(t, App):
            decl = model.sig.constructors.get(t.symbol)
            if decl is not None and decl.public and decl.arity:
                syms[(t.symbol, decl.arity)] = None
            for a in t.args:
                walk(a)

    for p in proc_nodes(model.process):
        if isinstance(p, Output):
            walk(p.msg)
        elif isinstance(p, LetDestr):
            for a in p.args:
                walk(a)
        elif isinstance(p, IfEq):
            walk(p.m1)
            walk(p.m2)
        elif isinstance(p, EventP):
            walk(p.arg)
    return sorted(syms, key=lambda kv: (kv[1], kv[0]))


def _search(model, query, unroll, max_states, synth_budget):
    start = TraceState(
        (_unroll(model.process, unroll),),
        frozenset(model.free_names) | {ADV.symbol},
        frozenset(Name(n) for n in sorted(model.init)) | {ADV},
        (), (), 0, ())
    ctx = _SynthCtx(model.sig, _protocol_constructors(model), synth_budget)
    stack = [_normalize(model, start)]
    seen = set()
    visited = 0
    complete = True
    while stack:
        st = stack.pop()
        key = _state_key(st)
        if key in seen:
            continue
        seen.add(key)
        visited += 1
        if visited > max_states:
            complete = False
            break
        feasible, trace = _check_state(model, query, st, ctx)
        if trace is not None:
            return trace, True
        if not feasible:
            continue
        if ctx.left < 0:
            complete = False
            break
        stack.extend(_normalize(model, succ) for succ in _moves(model, st))
    return None, complete


def bounded_trace_check(model, query, unroll=2, max_states=20000,
                        synth_budget=2000000, exhaustive=False):
    """Search for a concrete attack trace refuting the query with each
    replication unrolled at most `unroll` times.

    Returns the trace as a list of step descriptions, or None when no
    attack exists within the bounds.  With exhaustive=True a None answer
    is a guarantee up to the unrolling bound: SearchBudget is raised
    instead if any budget was exhausted before the space was covered.
    """
    if query is None or (query.fact is None and query.corr is None):
        return None
    all_complete = True
    for n in range(1, unroll + 1):
        trace, complete = _search(model, query, n, max_states, synth_budget)
        if trace is not None:
            return trace
        all_complete = all_complete and complete
    if exhaustive and not all_complete:
        raise SearchBudget("bounded trace search budget exhausted")
    return None
