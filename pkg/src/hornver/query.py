"""Security queries and their verification against the clause solver.

Supported queries:

    query attacker(M).                      secrecy
    query event e(M, ...) ~> CONJ.          correspondence
    CONJ  ::= ITEM && ... && ITEM
    ITEM  ::= [inj-]event e(M, ...) | ( [inj-]event e(M, ...) ~> CONJ )

In query terms, identifiers that are neither free names nor declared
constants are variables.  A correspondence holds when every execution of
the event on the left is preceded by matching executions of the events
on the right; `inj-event` additionally demands distinct executions on
the left map to distinct executions on the right (checked in the recent
sense: the matching execution belongs to the current session).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .clausegen import COMP_S1, EventRole
from .terms import (ATTACKER, EVENT, MEVENT, SID, App, Fact, NameFun,
                    SessionCst, Var, env_bindings, equal_modulo, fresh_index,
                    fresh_var, match_modulo, mk_tuple, rename_term,
                    subst_apply, term_str, term_vars, unify_modulo)


@dataclass(frozen=True)
class CorrNode:
    """One event atom in a correspondence, with the conjunction of
    atoms that must precede it."""
    symbol: str
    args: tuple
    inj: bool = False
    children: tuple = ()

    @property
    def term(self) -> App:
        return App(self.symbol, self.args)

    def __repr__(self):
        s = "%sevent %s" % ("inj-" if self.inj else "", term_str(self.term))
        if self.children:
            s += " ~> " + " && ".join(repr(c) for c in self.children)
            return "(" + s + ")"
        return s


@dataclass
class Query:
    text: str
    fact: Optional[Fact] = None      # secrecy
    corr: Optional[CorrNode] = None  # correspondence

    @property
    def injective(self) -> bool:
        return self.corr is not None and _has_inj(self.corr)


def _has_inj(node: CorrNode) -> bool:
    return any(c.inj or _has_inj(c) for c in node.children)


# ---------------------------------------------------------------------------
# parsing

def _parse_term(tk, model):
    from .calculus import ParseError
    tok = tk.next()
    if tok == "(":
        args = []
        if tk.peek() != ")":
            while True:
                args.append(_parse_term(tk, model))
                if tk.peek() == ",":
                    tk.next()
                    continue
                break
        tk.expect(")")
        if len(args) == 1:
            return args[0]
        model.sig.ensure_tuple(len(args))
        return mk_tuple(args)
    if tk.peek() == "(":
        tk.next()
        args = []
        if tk.peek() != ")":
            while True:
                args.append(_parse_term(tk, model))
                if tk.peek() == ",":
                    tk.next()
                    continue
                break
        tk.expect(")")
        decl = model.sig.constructors.get(tok)
        if decl is None or decl.arity != len(args):
            raise ParseError("unknown or misapplied constructor %r in query"
                             % tok)
        return App(tok, tuple(args))
    if tok in model.free_names:
        return NameFun(tok, ())
    decl = model.sig.constructors.get(tok)
    if decl is not None and decl.arity == 0:
        return App(tok, ())
    bound = _bound_name_patterns(model)
    if tok in bound:
        return bound[tok]
    return Var(tok)


def _bound_name_patterns(model) -> dict:
    """Patterns for names restricted outside any replication, input or
    non-deterministic destructor application: such names compile to a
    name function with no arguments, so queries can mention them."""
    cached = getattr(model, "_bound_name_patterns", None)
    if cached is not None:
        return cached
    from .calculus import (EventP, IfEq, Input, LetDestr, Output, Par,
                           PhaseP, Repl, Restr)
    out = {}

    def walk(p, clean):
        if isinstance(p, Restr):
            if clean:
                out[p.name] = NameFun(p.name, ())
            walk(p.cont, clean)
        elif isinstance(p, (Output, EventP, PhaseP)):
            walk(p.cont, clean)
        elif isinstance(p, Input):
            walk(p.cont, False)
        elif isinstance(p, Repl):
            walk(p.body, False)
        elif isinstance(p, Par):
            walk(p.left, clean)
            walk(p.right, clean)
        elif isinstance(p, LetDestr):
            nd = model.sig.nondeterministic_destructor(p.destructor)
            walk(p.then, clean and not nd)
            walk(p.orelse, clean)
        elif isinstance(p, IfEq):
            walk(p.then, clean)
            walk(p.orelse, clean)

    walk(model.process, True)
    model._bound_name_patterns = out
    return out


def _parse_event_atom(tk, model) -> CorrNode:
    from .calculus import ParseError
    inj = False
    tok = tk.next()
    if tok == "inj-event":
        inj = True
    elif tok != "event":
        raise ParseError("expected event or inj-event in query, got %r" % tok)
    sym = tk.next()
    tk.expect("(")
    args = []
    if tk.peek() != ")":
        while True:
            args.append(_parse_term(tk, model))
            if tk.peek() == ",":
                tk.next()
                continue
            break
    tk.expect(")")
    arity = model.event_arities.get(sym)
    if arity is None:
        raise ParseError("query mentions unknown event %r" % sym)
    if arity != len(args):
        raise ParseError("event %s has arity %d, query uses %d"
                         % (sym, arity, len(args)))
    return CorrNode(sym, tuple(args), inj)


def _parse_conj(tk, model) -> tuple:
    items = []
    while True:
        if tk.peek() == "(":
            tk.next()
            atom = _parse_event_atom(tk, model)
            children = ()
            if tk.peek() == "~>":
                tk.next()
                children = _parse_conj(tk, model)
            tk.expect(")")
            items.append(CorrNode(atom.symbol, atom.args, atom.inj, children))
        else:
            items.append(_parse_event_atom(tk, model))
        if tk.peek() == "&&":
            tk.next()
            continue
        break
    return tuple(items)


def parse_query(raw: str, model) -> Query:
    from .calculus import ParseError, Tokens
    tk = Tokens(raw)
    if tk.peek() == "attacker":
        tk.next()
        tk.expect("(")
        t = _parse_term(tk, model)
        tk.expect(")")
        if tk.peek() is not None:
            raise ParseError("trailing input in query %r" % raw)
        return Query(raw, fact=Fact(ATTACKER, (t,), model.max_phase))
    root = _parse_event_atom(tk, model)
    children = ()
    if tk.peek() == "~>":
        tk.next()
        children = _parse_conj(tk, model)
    if tk.peek() is not None:
        raise ParseError("trailing input in query %r" % raw)
    if root.inj:
        raise ParseError("the left event of a query cannot be inj-event")
    return Query(raw, corr=CorrNode(root.symbol, root.args, False, children))


def parse_not_fact(raw: str, model) -> Fact:
    from .calculus import ParseError, Tokens
    tk = Tokens(raw)
    tk.expect("attacker")
    tk.expect("(")
    t = _parse_term(tk, model)
    tk.expect(")")
    if tk.peek() is not None:
        raise ParseError("trailing input in secrecy assumption %r" % raw)
    return Fact(ATTACKER, (t,))


def expand_not_facts(model) -> list:
    """Secrecy assumptions apply at every stage."""
    out = []
    for f in model.not_facts:
        for t in range(model.max_phase + 1):
            out.append(Fact(f.pred, f.args, t))
    return out


# ---------------------------------------------------------------------------
# event roles (which clause parts each event symbol needs)

def event_roles(queries) -> dict:
    roles = {}

    def get(sym):
        return roles.setdefault(sym, {"m": False, "e": False})

    def walk(node, is_root):
        if is_root or node.children:
            get(node.symbol)["e"] = True
        if not is_root:
            get(node.symbol)["m"] = True
        for c in node.children:
            walk(c, False)

    for q in queries:
        if q.corr is not None:
            walk(q.corr, True)
    return {sym: EventRole(need_mevent=r["m"], need_event=r["e"])
            for sym, r in roles.items()}


# ---------------------------------------------------------------------------
# compromise transformation of correspondences

def corr_with_compromise(node: CorrNode, is_root=True) -> CorrNode:
    """Session-compromise scenarios add a compromise identifier to every
    event: the queried execution must belong to an uncompromisable
    session, the preceding ones may belong to any session."""
    extra = COMP_S1 if is_root else fresh_var("c")
    return CorrNode(node.symbol, node.args + (extra,), node.inj,
                    tuple(corr_with_compromise(c, False)
                          for c in node.children))


# ---------------------------------------------------------------------------
# correspondence checking

class CheckFailure(Exception):
    pass


def prove_secrecy(solver, fact: Fact) -> bool:
    return not solver.solve(fact)


def prove_correspondence(solver, sig, corr: CorrNode, inj_mode: bool,
                         exhaustive: bool = False) -> bool:
    """Run the decomposition of the correspondence into per-level solver
    calls; with inj_mode, additionally establish injectivity from the
    recorded environments."""
    envs = {}        # path (k1, k2, ...) -> list of (env pattern, session id)
    inj_paths = []   # paths that carry an inj marker

    def note_inj(node, prefix):
        for k, c in enumerate(node.children):
            if c.inj:
                inj_paths.append(prefix + (k,))
            note_inj(c, prefix + (k,))

    note_inj(corr, ())

    def subtree_vars(node, acc):
        term_vars(node.term, acc)
        for c in node.children:
            subtree_vars(c, acc)
        return acc

    def inst(node, sigma):
        return CorrNode(node.symbol,
                        tuple(subst_apply(sigma, a) for a in node.args),
                        node.inj, tuple(inst(c, sigma) for c in node.children))

    def check_clause(clause, node, prefix):
        """One solution clause against the conjunction of children;
        returns False when no way of reading the clause complies."""
        concl_term = clause.concl.args[0]
        i_r = clause.concl.args[1] if inj_mode else None
        for sigma in match_modulo(node.term, concl_term, sig):
            # children are matched in order; variables of a child that the
            # root left unbound are existential, so bindings accumulate and
            # must stay consistent across the conjunction
            mhyps = [h for h in clause.hyps if h.pred == MEVENT]

            def pick(k, acc):
                if k == len(node.children):
                    return []
                target = subst_apply(acc, subst_apply(sigma,
                                                      node.children[k].term))
                for h in mhyps:
                    if equal_modulo(h.args[0], target, sig):
                        rest = pick(k + 1, acc)
                        if rest is not None:
                            return [h] + rest
                    for ext in match_modulo(target, h.args[0], sig):
                        acc2 = dict(acc)
                        acc2.update(ext)
                        rest = pick(k + 1, acc2)
                        if rest is not None:
                            return [h] + rest
                return None

            picked = pick(0, {})
            if picked is None:
                continue
            if not v22(node, sigma):
                if exhaustive:
                    continue
                return False
            # commit to this reading: record environments, then recurse
            for k, (child, h) in enumerate(zip(node.children, picked)):
                if inj_mode:
                    envs.setdefault(prefix + (k,), []).append(
                        (h.args[1], i_r))
            deeper = all(
                verify(inst(child, sigma), prefix + (k,))
                for k, child in enumerate(node.children) if child.children)
            if deeper:
                return True
            if not exhaustive:
                return False
        return False

    def v22(node, sigma):
        svars = [subtree_vars(inst(c, sigma), set()) for c in node.children]
        pvars = term_vars(subst_apply(sigma, node.term))
        for k0, child in enumerate(node.children):
            other = set(pvars)
            for k, vs in enumerate(svars):
                if k != k0:
                    other |= vs
            atom_vars = term_vars(subst_apply(sigma, child.term))
            if not (svars[k0] & other) <= atom_vars:
                return False
            if sig.eq_rules and not _v22_equational(child, sigma):
                return False
        return True

    def _v22_equational(child, sigma):
        # with a non-empty theory, equality of the atom instances must
        # force equality of the whole subtree instances
        ci = inst(child, sigma)
        p_c = ci.term
        q_c = App("@qc", tuple(_subtree_terms(ci)))
        ren = {}
        theta_p = rename_term(p_c, ren)
        theta_q = rename_term(q_c, dict(ren))
        for su in unify_modulo(p_c, theta_p, sig):
            if not equal_modulo(subst_apply(su, q_c),
                                subst_apply(su, theta_q), sig):
                return False
        return True

    def _subtree_terms(node):
        out = [node.term]
        for c in node.children:
            out.extend(_subtree_terms(c))
        return out

    def verify(node, prefix):
        goal_args = (node.term, fresh_var("i", SID)) if inj_mode \
            else (node.term,)
        sols = solver.solve(Fact(EVENT, goal_args))
        if not node.children:
            return True
        return all(check_clause(r, node, prefix) for r in sols)

    if not verify(corr, ()):
        return False
    if inj_mode:
        for path in inj_paths:
            if not _injectivity(envs.get(path, []), sig):
                return False
    return True


def _injectivity(pairs, sig) -> bool:
    """Find a witness variable whose recorded value pins down the
    querying session: its instances from two different sessions must
    never unify."""
    if not pairs:
        return True
    domains = []
    for rho, _i in pairs:
        if not (isinstance(rho, App) and rho.symbol == "@env"):
            return False
        domains.append(set(env_bindings(rho)))
    cand = set.intersection(*domains)
    if not cand:
        return False
    lam1 = SessionCst(fresh_index())
    lam2 = SessionCst(fresh_index())
    for rho_a, i_a in pairs:
        ba = env_bindings(rho_a)
        for rho_b, i_b in pairs:
            ren = {}
            rho_b2 = rename_term(rho_b, ren)
            i_b2 = rename_term(i_b, ren) if isinstance(i_b, Var) else i_b
            bb = env_bindings(rho_b2)
            for x in list(cand):
                ta = ba[x]
                tb = bb[x]
                if isinstance(i_a, Var):
                    ta = subst_apply({i_a: lam1}, ta)
                if isinstance(i_b2, Var):
                    tb = subst_apply({i_b2: lam2}, tb)
                if unify_modulo(ta, tb, sig):
                    cand.discard(x)
            if not cand:
                return False
    return bool(cand)
