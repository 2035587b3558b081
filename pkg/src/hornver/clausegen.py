"""Translation of instrumented processes into Horn clauses.

The attacker is represented by a fixed clause family (initial knowledge,
fresh name generation, constructor application, public destructor rules,
channel read/write).  The protocol itself is compiled by a recursive walk
over the instrumented process that threads an environment (mapping names
and variables to patterns) and an ordered hypothesis list.

Injective mode additionally records, with every executed-event
hypothesis, a snapshot of the environment restricted to session ids,
input variables and non-deterministic destructor results.  The snapshot
is not known when the event fact is created, so a placeholder variable
stands for it until the next output or replication fixes it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .calculus import (EQUAL, EventP, IfEq, Input, LetDestr, Model, Name,
                       Nil, Output, Par, PhaseP, Proc, Repl, Restr)
from .terms import (ATTACKER, COMP, ENV, EVENT, MESSAGE, MEVENT, SID, App,
                    Fact, NameFun, RewriteRule, Var, env_pattern, fact_str,
                    fresh_var, rename_rule, subst_apply, subst_fact,
                    unify, unify_modulo, match_rewrite)
from .instrument import B0


@dataclass(frozen=True)
class Clause:
    hyps: tuple
    concl: Fact

    def __repr__(self):
        if not self.hyps:
            return "=> %s" % fact_str(self.concl)
        return "%s => %s" % (" && ".join(fact_str(h) for h in self.hyps),
                             fact_str(self.concl))


# placeholder for an environment snapshot not yet known
BOX = Var("@box", ENV)

# compromise identifiers: sessions tagged COMP_S0 may be compromised,
# sessions tagged COMP_S1 may not
COMP_S0 = NameFun("@session_compromised", ())
COMP_S1 = NameFun("@session_honest", ())


@dataclass(frozen=True)
class EventRole:
    """Which clause parts a given event symbol needs (derived from the
    queries: symbols queried as conclusions need event() clauses, symbols
    queried as premises need m-event() hypotheses)."""
    need_mevent: bool = False
    need_event: bool = False


def _is_public_channel(chan, init) -> bool:
    return isinstance(chan, NameFun) and not chan.args and chan.symbol in init


def io_fact(chan, msg, init, phase) -> Fact:
    """message(c, M), except that communication on a public channel is
    folded into the attacker predicate directly."""
    if _is_public_channel(chan, init):
        return Fact(ATTACKER, (msg,), phase)
    return Fact(MESSAGE, (chan, msg), phase)


# ---------------------------------------------------------------------------
# attacker clauses

def attacker_clauses(model: Model) -> list:
    sig = model.sig
    out = []
    for t in range(model.max_phase + 1):
        for a in sorted(model.init):
            out.append(Clause((), Fact(ATTACKER, (NameFun(a, ()),), t)))
        x = fresh_var("x")
        out.append(Clause((), Fact(ATTACKER, (NameFun(B0, (x,)),), t)))
        for decl in sig.constructors.values():
            if not decl.public:
                continue
            xs = tuple(fresh_var("x") for _ in range(decl.arity))
            out.append(Clause(
                tuple(Fact(ATTACKER, (v,), t) for v in xs),
                Fact(ATTACKER, (App(decl.name, xs),), t)))
            # constructors subject to equations get one extra clause per
            # non-trivial rewrite form
            for lhs, rhs in sig.eq_rules.get(decl.name, ()):
                rule = rename_rule(RewriteRule(decl.name, tuple(lhs.args), rhs))
                out.append(Clause(
                    tuple(Fact(ATTACKER, (a,), t) for a in rule.lhs),
                    Fact(ATTACKER, (rule.rhs,), t)))
        for decl in sig.destructors.values():
            if not decl.public:
                continue
            for rule in decl.rules:
                r = rename_rule(rule)
                out.append(Clause(
                    tuple(Fact(ATTACKER, (a,), t) for a in r.lhs),
                    Fact(ATTACKER, (r.rhs,), t)))
        x, y = fresh_var("x"), fresh_var("y")
        out.append(Clause((Fact(MESSAGE, (x, y), t), Fact(ATTACKER, (x,), t)),
                          Fact(ATTACKER, (y,), t)))
        x, y = fresh_var("x"), fresh_var("y")
        out.append(Clause((Fact(ATTACKER, (x,), t), Fact(ATTACKER, (y,), t)),
                          Fact(MESSAGE, (x, y), t)))
    for t in range(model.max_phase):
        x = fresh_var("x")
        out.append(Clause((Fact(ATTACKER, (x,), t),),
                          Fact(ATTACKER, (x,), t + 1)))
    return out


def compromise_clauses(model: Model, proc: Proc) -> list:
    """Clauses defining the comp predicate: comp(p) holds when every
    session name in p belongs to a compromisable session, and the
    attacker learns all such session names."""
    sig = model.sig
    out = []
    for decl in sig.constructors.values():
        xs = tuple(fresh_var("x") for _ in range(decl.arity))
        out.append(Clause(tuple(Fact(COMP, (v,)) for v in xs),
                          Fact(COMP, (App(decl.name, xs),))))
    for a in sorted(model.free_names):
        out.append(Clause((), Fact(COMP, (NameFun(a, ()),))))
    x = fresh_var("x")
    out.append(Clause((), Fact(COMP, (NameFun(B0, (x,)),))))
    for sym, targs, sids in restriction_labels(proc):
        xs = tuple(fresh_var("x") for _ in targs)
        hyps = tuple(Fact(COMP, (v,)) for v in xs)
        if not sids:
            out.append(Clause(hyps, Fact(COMP, (NameFun(sym, xs),))))
        else:
            ivs = tuple(fresh_var("i", SID) for _ in sids)
            args = xs + ivs + (COMP_S0,)
            out.append(Clause(hyps, Fact(COMP, (NameFun(sym, args),))))
            out.append(Clause(hyps, Fact(ATTACKER, (NameFun(sym, args),))))
    return out


def restriction_labels(proc: Proc):
    """All restriction labels of an instrumented process, in syntactic
    order."""
    out = []

    def walk(p):
        if isinstance(p, Restr):
            out.append(p.label)
            walk(p.cont)
        elif isinstance(p, (Output, Input, EventP, PhaseP)):
            walk(p.cont)
        elif isinstance(p, Par):
            walk(p.left)
            walk(p.right)
        elif isinstance(p, Repl):
            walk(p.body)
        elif isinstance(p, (LetDestr, IfEq)):
            walk(p.then)
            walk(p.orelse)

    walk(proc)
    return out


# ---------------------------------------------------------------------------
# protocol clauses

def rho_apply(rho: dict, t):
    """Evaluate a source term to a pattern under the environment."""
    if isinstance(t, (Name, Var)):
        try:
            return rho[t]
        except KeyError:
            raise KeyError("unbound identifier %r in translation" % (t,))
    if isinstance(t, App):
        return App(t.symbol, tuple(rho_apply(rho, a) for a in t.args))
    raise TypeError("not a source term: %r" % (t,))


def _snapshot(rho: dict, envdom: tuple) -> App:
    return env_pattern({v.name: rho[v] for v in envdom})


def _fix_boxes(H: tuple, rho: dict, envdom: tuple) -> tuple:
    if not any(BOX in f.args for f in H):
        return H
    s = {BOX: _snapshot(rho, envdom)}
    return tuple(subst_fact(s, f) for f in H)


def _destructor_rules(sig, name):
    if name == EQUAL:
        x = Var("x")
        return [RewriteRule(EQUAL, (x, x), x)]
    return sig.destructors[name].rules


def translate_protocol(model: Model, proc: Proc, roles: dict,
                       inj: bool = False, compromise: bool = False) -> list:
    """Clauses for an instrumented protocol process.

    `roles` maps event symbols to EventRole; events whose symbol is
    absent produce nothing (their executions are irrelevant to every
    query at hand).
    """
    sig = model.sig
    init = model.init
    clauses = []

    def go(p, rho, H, envdom, comp_stack, phase):
        if isinstance(p, Nil):
            return
        if isinstance(p, Par):
            go(p.left, rho, H, envdom, comp_stack, phase)
            go(p.right, rho, H, envdom, comp_stack, phase)
            return
        if isinstance(p, Repl):
            if inj:
                H = _fix_boxes(H, rho, envdom)
            rho2 = dict(rho)
            rho2[p.sid] = p.sid
            comp2 = comp_stack + (fresh_var("c"),) if compromise else comp_stack
            go(p.body, rho2, H, envdom + (p.sid,), comp2, phase)
            return
        if isinstance(p, Restr):
            sym, targs, sids = p.label
            args = tuple(rho_apply(rho, t) for t in targs) + \
                tuple(rho_apply(rho, i) for i in sids)
            if compromise and sids:
                args += (comp_stack[-1],)
            rho2 = dict(rho)
            rho2[Name(p.name)] = NameFun(sym, args)
            go(p.cont, rho2, H, envdom, comp_stack, phase)
            return
        if isinstance(p, Input):
            chan = rho_apply(rho, p.channel)
            rho2 = dict(rho)
            rho2[p.var] = p.var
            H2 = H + (io_fact(chan, p.var, init, phase),)
            go(p.cont, rho2, H2, envdom + (p.var,), comp_stack, phase)
            return
        if isinstance(p, Output):
            Hc = _fix_boxes(H, rho, envdom) if inj else H
            clauses.append(Clause(Hc, io_fact(rho_apply(rho, p.channel),
                                              rho_apply(rho, p.msg),
                                              init, phase)))
            go(p.cont, rho, H, envdom, comp_stack, phase)
            return
        if isinstance(p, LetDestr):
            args = tuple(rho_apply(rho, a) for a in p.args)
            nondet = sig.nondeterministic_destructor(p.destructor)
            for rule in _destructor_rules(sig, p.destructor):
                for sigma, _sigma_p, rhs in match_rewrite(rule, args, sig):
                    rho2 = {k: subst_apply(sigma, v) for k, v in rho.items()}
                    rho2[p.var] = rhs
                    H2 = tuple(subst_fact(sigma, f) for f in H)
                    comp2 = tuple(subst_apply(sigma, c) for c in comp_stack)
                    dom2 = envdom + ((p.var,) if nondet else ())
                    go(p.then, rho2, H2, dom2, comp2, phase)
            go(p.orelse, rho, H, envdom, comp_stack, phase)
            return
        if isinstance(p, IfEq):
            m1 = rho_apply(rho, p.m1)
            m2 = rho_apply(rho, p.m2)
            for sigma in unify_modulo(m1, m2, sig):
                rho2 = {k: subst_apply(sigma, v) for k, v in rho.items()}
                H2 = tuple(subst_fact(sigma, f) for f in H)
                comp2 = tuple(subst_apply(sigma, c) for c in comp_stack)
                go(p.then, rho2, H2, envdom, comp2, phase)
            go(p.orelse, rho, H, envdom, comp_stack, phase)
            return
        if isinstance(p, EventP):
            ev = rho_apply(rho, p.arg)
            if compromise:
                cid = comp_stack[-1] if comp_stack else COMP_S1
                ev = App(ev.symbol, ev.args + (cid,))
            role = roles.get(p.arg.symbol, EventRole())
            if role.need_event:
                concl = Fact(EVENT, (ev, p.sid) if inj else (ev,))
                clauses.append(Clause(H, concl))
            H2 = H
            if role.need_mevent:
                hyp = Fact(MEVENT, (ev, BOX) if inj else (ev,))
                H2 = H + (hyp,)
            go(p.cont, rho, H2, envdom, comp_stack, phase)
            return
        if isinstance(p, PhaseP):
            go(p.cont, rho, H, envdom, comp_stack, p.t)
            return
        raise TypeError(p)

    rho0 = {Name(a): NameFun(a, ()) for a in model.free_names}
    go(proc, rho0, (), (), (), 0)
    return clauses


def generate(model: Model, roles: dict, proc: Proc,
             compromise: bool = False, inj: bool = False) -> list:
    """Full clause set: attacker clauses plus protocol clauses."""
    out = attacker_clauses(model)
    if compromise:
        out.extend(compromise_clauses(model, proc))
    out.extend(translate_protocol(model, proc, roles, inj=inj,
                                  compromise=compromise))
    return out
