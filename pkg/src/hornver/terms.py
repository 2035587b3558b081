"""Symbolic terms, patterns, facts, substitutions and unification.

Terms are the messages of the protocol language (variables, names,
constructor applications).  Patterns are their clause-level encoding:
names become name functions applied to previously received inputs and
session identifiers.  Both share the same node classes; `Name` nodes
only occur in source terms, `NameFun` and `SessionCst` only in patterns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional

# sorts
ORD = "ord"   # ordinary terms/patterns
SID = "sid"   # session identifiers
ENV = "env"   # environment snapshots stored in executed-event facts

_fresh_counter = itertools.count(1)


def fresh_index() -> int:
    # itertools.count.__next__ is atomic under the GIL, so concurrent
    # callers never observe a duplicate
    return next(_fresh_counter)


@dataclass(frozen=True)
class Var:
    name: str
    sort: str = ORD

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Name:
    """A free or bound name in a source term (never in a pattern)."""
    symbol: str

    def __repr__(self):
        return self.symbol


@dataclass(frozen=True)
class App:
    """Constructor application f(t1, ..., tn)."""
    symbol: str
    args: tuple = ()

    def __repr__(self):
        return term_str(self)


@dataclass(frozen=True)
class NameFun:
    """Name function a[p1, ..., pn, i1, ..., ik] in patterns.

    Ordinary arguments come first, session identifiers last.
    """
    symbol: str
    args: tuple = ()

    def __repr__(self):
        return term_str(self)


@dataclass(frozen=True)
class SessionCst:
    value: int

    def __repr__(self):
        return "#%d" % self.value


def fresh_var(base: str, sort: str = ORD) -> Var:
    return Var("%s_%d" % (base, fresh_index()), sort)


def sort_of(t) -> str:
    if isinstance(t, Var):
        return t.sort
    if isinstance(t, SessionCst):
        return SID
    if isinstance(t, App) and t.symbol == "@env":
        return ENV
    return ORD


TUPLE_PREFIX = "tuple"


def tuple_symbol(n: int) -> str:
    return "%s%d" % (TUPLE_PREFIX, n)


def proj_symbol(i: int, n: int) -> str:
    """The i-th projection out of an n-tuple (1-based)."""
    return "%dth%d" % (i, n)


def is_tuple_symbol(sym: str) -> bool:
    return sym.startswith(TUPLE_PREFIX) and sym[len(TUPLE_PREFIX):].isdigit()


def mk_tuple(args: Iterable) -> App:
    args = tuple(args)
    return App(tuple_symbol(len(args)), args)


# ---------------------------------------------------------------------------
# facts

@dataclass(frozen=True)
class Fact:
    """Atom over attacker/message/event/m-event/comp.

    `phase` only matters for attacker and message; attacker facts of
    phase t print as attacker_t.  Injective-mode event facts carry a
    session identifier as last argument; injective-mode m-event facts
    carry an environment snapshot (an `@env` application or an
    env-sorted placeholder variable).
    """
    pred: str
    args: tuple
    phase: int = 0

    def __repr__(self):
        return fact_str(self)


ATTACKER = "attacker"
MESSAGE = "message"
EVENT = "event"
MEVENT = "m-event"
COMP = "comp"


def env_pattern(bindings) -> App:
    """Encode an environment {x -> p} as a pattern so that substitutions
    and unification apply uniformly."""
    items = sorted(bindings.items(), key=lambda kv: kv[0])
    return App("@env", tuple(App("@bind:" + k, (v,)) for k, v in items))


def env_bindings(p: App) -> dict:
    assert isinstance(p, App) and p.symbol == "@env"
    out = {}
    for b in p.args:
        out[b.symbol[len("@bind:"):]] = b.args[0]
    return out


# ---------------------------------------------------------------------------
# substitutions (plain dicts Var -> term, kept idempotent by eager
# application during unification)

def subst_apply(s: dict, t):
    if not s:
        return t
    if isinstance(t, Var):
        return s.get(t, t)
    if isinstance(t, App):
        return App(t.symbol, tuple(subst_apply(s, a) for a in t.args))
    if isinstance(t, NameFun):
        return NameFun(t.symbol, tuple(subst_apply(s, a) for a in t.args))
    return t


def subst_fact(s: dict, f: Fact) -> Fact:
    if not s:
        return f
    return Fact(f.pred, tuple(subst_apply(s, a) for a in f.args), f.phase)


def compose(outer: dict, inner: dict) -> dict:
    """compose(o, i) maps x to o(i(x))."""
    out = {v: subst_apply(outer, t) for v, t in inner.items()}
    for v, t in outer.items():
        if v not in out:
            out[v] = t
    return {v: t for v, t in out.items() if t != v}


def term_vars(t, acc=None) -> set:
    if acc is None:
        acc = set()
    if isinstance(t, Var):
        acc.add(t)
    elif isinstance(t, (App, NameFun)):
        for a in t.args:
            term_vars(a, acc)
    return acc


def fact_vars(f: Fact, acc=None) -> set:
    if acc is None:
        acc = set()
    for a in f.args:
        term_vars(a, acc)
    return acc


def occurs(v: Var, t) -> bool:
    if isinstance(t, Var):
        return v == t
    if isinstance(t, (App, NameFun)):
        return any(occurs(v, a) for a in t.args)
    return False


# ---------------------------------------------------------------------------
# unification and matching

def _bind(s: dict, v: Var, t):
    if occurs(v, t):
        return None
    one = {v: t}
    out = {w: subst_apply(one, u) for w, u in s.items()}
    out[v] = t
    return out


def unify_under(s: Optional[dict], t1, t2) -> Optional[dict]:
    """Extend substitution s to an idempotent unifier of t1 and t2,
    or return None.  Occurs check is always on."""
    if s is None:
        return None
    t1 = subst_apply(s, t1)
    t2 = subst_apply(s, t2)
    if t1 == t2:
        return s
    if isinstance(t1, Var):
        if sort_of(t2) != t1.sort:
            return None
        return _bind(s, t1, t2)
    if isinstance(t2, Var):
        if sort_of(t1) != t2.sort:
            return None
        return _bind(s, t2, t1)
    for cls in (App, NameFun):
        if isinstance(t1, cls) and isinstance(t2, cls):
            if t1.symbol != t2.symbol or len(t1.args) != len(t2.args):
                return None
            for a, b in zip(t1.args, t2.args):
                s = unify_under(s, a, b)
                if s is None:
                    return None
            return s
    return None


def unify(t1, t2) -> Optional[dict]:
    return unify_under({}, t1, t2)


def unify_facts(f1: Fact, f2: Fact, s: Optional[dict] = None) -> Optional[dict]:
    if f1.pred != f2.pred or f1.phase != f2.phase or len(f1.args) != len(f2.args):
        return None
    if s is None:
        s = {}
    for a, b in zip(f1.args, f2.args):
        s = unify_under(s, a, b)
        if s is None:
            return None
    return s


def match_under(s: Optional[dict], general, specific) -> Optional[dict]:
    """Extend s, binding only variables of `general`, so that
    s(general) == specific."""
    if s is None:
        return None
    if isinstance(general, Var):
        bound = s.get(general)
        if bound is not None:
            return s if bound == specific else None
        if general != specific \
                and sort_of(specific) != general.sort and not (
                general.sort == SID and isinstance(specific, Var)
                and specific.sort == SID):
            return None
        out = dict(s)
        out[general] = specific
        return out
    if isinstance(general, (App, NameFun)) and isinstance(specific, type(general)):
        if general.symbol != specific.symbol or len(general.args) != len(specific.args):
            return None
        for a, b in zip(general.args, specific.args):
            s = match_under(s, a, b)
            if s is None:
                return None
        return s
    return s if general == specific else None


def match(general, specific) -> Optional[dict]:
    return match_under({}, general, specific)


def match_facts(general: Fact, specific: Fact, s: Optional[dict] = None) -> Optional[dict]:
    if (general.pred != specific.pred or general.phase != specific.phase
            or len(general.args) != len(specific.args)):
        return None
    if s is None:
        s = {}
    for a, b in zip(general.args, specific.args):
        s = match_under(s, a, b)
        if s is None:
            return None
    return s


# ---------------------------------------------------------------------------
# rewrite rules

@dataclass(frozen=True)
class RewriteRule:
    """g(lhs1, ..., lhsn) -> rhs, name-free."""
    destructor: str
    lhs: tuple
    rhs: object

    def __repr__(self):
        return "%s(%s) -> %s" % (self.destructor,
                                 ", ".join(term_str(a) for a in self.lhs),
                                 term_str(self.rhs))


def rename_term(t, ren: dict):
    if isinstance(t, Var):
        if t not in ren:
            ren[t] = fresh_var(t.name.split("_")[0] or "v", t.sort)
        return ren[t]
    if isinstance(t, App):
        return App(t.symbol, tuple(rename_term(a, ren) for a in t.args))
    if isinstance(t, NameFun):
        return NameFun(t.symbol, tuple(rename_term(a, ren) for a in t.args))
    return t


def rename_rule(rule: RewriteRule) -> RewriteRule:
    ren = {}
    return RewriteRule(rule.destructor,
                       tuple(rename_term(a, ren) for a in rule.lhs),
                       rename_term(rule.rhs, ren))


# ---------------------------------------------------------------------------
# signature

@dataclass
class FunDecl:
    name: str
    arity: int
    public: bool = True
    data: bool = False


@dataclass
class DestrDecl:
    name: str
    rules: list
    public: bool = True


class Signature:
    def __init__(self):
        self.constructors = {}
        self.destructors = {}
        self.equations = []      # list of (lhs Term, rhs Term)
        self.eq_rules = {}       # root symbol -> list of RewriteRule-like (lhs, rhs)

    def declare_fun(self, name, arity, public=True, data=False):
        if name in self.constructors:
            raise ValueError("duplicate constructor %s" % name)
        self.constructors[name] = FunDecl(name, arity, public, data)

    def declare_destructor(self, name, rules, public=True):
        if name in self.destructors:
            raise ValueError("duplicate destructor %s" % name)
        self.destructors[name] = DestrDecl(name, list(rules), public)

    def ensure_tuple(self, n):
        sym = tuple_symbol(n)
        if sym not in self.constructors:
            self.declare_fun(sym, n, public=True, data=True)
            xs = tuple(Var("x%d" % i) for i in range(1, n + 1))
            for i in range(1, n + 1):
                self.declare_destructor(
                    proj_symbol(i, n),
                    [RewriteRule(proj_symbol(i, n), (App(sym, xs),), xs[i - 1])])
        return sym

    def data_constructors(self):
        return [d for d in self.constructors.values() if d.data]

    def is_data(self, sym):
        d = self.constructors.get(sym)
        return d is not None and d.data

    def declare_equation(self, lhs, rhs):
        self.equations.append((lhs, rhs))
        for a, b in ((lhs, rhs), (rhs, lhs)):
            if not isinstance(a, App):
                raise ValueError("equation sides must be constructor applications")
            rules = self.eq_rules.setdefault(a.symbol, [])
            if not any(_same_rule(r, (a, b)) for r in rules):
                rules.append((a, b))

    def nondeterministic_destructor(self, name) -> bool:
        """A destructor is non-deterministic if two of its rules (or one
        rule against a renamed copy of itself) unify on the left-hand
        sides with distinct right-hand sides, or one of its rules
        involves an equational symbol."""
        decl = self.destructors.get(name)
        if decl is None:
            return False
        rules = decl.rules
        for i, r1 in enumerate(rules):
            for r2 in rules[i:]:
                a = rename_rule(r1)
                b = rename_rule(r2)
                s = {}
                for x, y in zip(a.lhs, b.lhs):
                    s = unify_under(s, x, y)
                    if s is None:
                        break
                if s is not None and subst_apply(s, a.rhs) != subst_apply(s, b.rhs):
                    return True
            for t in list(r1.lhs) + [r1.rhs]:
                if _mentions_eq_symbol(t, self.eq_rules):
                    return True
        return False


def _mentions_eq_symbol(t, eq_rules):
    if isinstance(t, (App, NameFun)):
        if isinstance(t, App) and t.symbol in eq_rules:
            return True
        return any(_mentions_eq_symbol(a, eq_rules) for a in t.args)
    return False


def canonical_rename(ts):
    """Rename variables of the given terms in first-occurrence order."""
    ren = {}

    def go(t):
        if isinstance(t, Var):
            if t not in ren:
                ren[t] = Var("v%d" % len(ren), t.sort)
            return ren[t]
        if isinstance(t, (App, NameFun)):
            return type(t)(t.symbol, tuple(go(a) for a in t.args))
        return t

    return tuple(go(t) for t in ts)


def _same_rule(r1, r2):
    return canonical_rename(r1) == canonical_rename(r2)


# ---------------------------------------------------------------------------
# rewriting modulo the declared equations: variant computation

def equational_variants(p, sig: Signature) -> list:
    """All forms of p modulo the declared equations, computed by one
    outside-in pass applying each non-identity rewrite rule at each
    position.  Includes p itself."""
    if not sig.eq_rules:
        return [p]
    seen = []

    def add(res, q):
        if q not in res:
            res.append(q)

    def variants(q):
        res = []
        roots = [q]
        if isinstance(q, App):
            for lhs, rhs in sig.eq_rules.get(q.symbol, ()):
                ren = {}
                l2 = rename_term(lhs, ren)
                r2 = rename_term(rhs, ren)
                m = match(l2, q)
                if m is not None:
                    add(roots, subst_apply(m, r2))
        for r in roots:
            if isinstance(r, (App, NameFun)) and r.args:
                cls = type(r)
                for combo in itertools.product(*(variants(a) for a in r.args)):
                    add(res, cls(r.symbol, tuple(combo)))
            else:
                add(res, r)
        return res

    for v in variants(p):
        add(seen, v)
    return seen


def _tuple_wrap(args):
    return App("@args", tuple(args))


def unify_modulo(t1, t2, sig: Signature) -> list:
    """All unifiers of t1 and t2 modulo the declared equations (mgus of
    pairs of variants); for an empty theory this is syntactic."""
    if not sig.eq_rules:
        s = unify(t1, t2)
        return [] if s is None else [s]
    out = []
    for v1 in equational_variants(t1, sig):
        for v2 in equational_variants(t2, sig):
            s = unify(v1, v2)
            if s is not None and s not in out:
                out.append(s)
    return out


def unify_facts_modulo(f1: Fact, f2: Fact, sig: Signature) -> list:
    if f1.pred != f2.pred or f1.phase != f2.phase or len(f1.args) != len(f2.args):
        return []
    return unify_modulo(_tuple_wrap(f1.args), _tuple_wrap(f2.args), sig)


def match_modulo(general, specific, sig: Signature) -> list:
    if not sig.eq_rules:
        s = match(general, specific)
        return [] if s is None else [s]
    out = []
    for v1 in equational_variants(general, sig):
        for v2 in equational_variants(specific, sig):
            s = match(v1, v2)
            if s is not None and s not in out:
                out.append(s)
    return out


def match_facts_modulo(general: Fact, specific: Fact, sig: Signature) -> list:
    if (general.pred != specific.pred or general.phase != specific.phase
            or len(general.args) != len(specific.args)):
        return []
    return match_modulo(_tuple_wrap(general.args), _tuple_wrap(specific.args), sig)


def equal_modulo(t1, t2, sig: Signature) -> bool:
    if t1 == t2:
        return True
    if not sig.eq_rules:
        return False
    vs2 = equational_variants(t2, sig)
    return any(v1 in vs2 for v1 in equational_variants(t1, sig))


def match_rewrite(rule: RewriteRule, args, sig: Signature = None) -> list:
    """Most general pairs (sigma, sigma') with sigma(args_i) unifying
    with sigma'(lhs_i) for every i.  The rule is renamed apart first."""
    r = rename_rule(rule)
    arg_vars = set()
    for a in args:
        term_vars(a, arg_vars)
    rule_vars = set()
    for a in r.lhs:
        term_vars(a, rule_vars)
    term_vars(r.rhs, rule_vars)
    if sig is not None and sig.eq_rules:
        unifiers = unify_modulo(_tuple_wrap(args), _tuple_wrap(r.lhs), sig)
    else:
        s = {}
        for x, y in zip(args, r.lhs):
            s = unify_under(s, x, y)
            if s is None:
                break
        unifiers = [] if s is None else [s]
    out = []
    for s in unifiers:
        sigma = {v: t for v, t in s.items() if v in arg_vars}
        sigma_p = {v: t for v, t in s.items() if v in rule_vars}
        out.append((sigma, sigma_p, subst_apply(s, r.rhs)))
    return out


# ---------------------------------------------------------------------------
# printing

def term_str(t) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Name):
        return t.symbol
    if isinstance(t, SessionCst):
        return "#%d" % t.value
    if isinstance(t, NameFun):
        return "%s[%s]" % (t.symbol, ", ".join(term_str(a) for a in t.args))
    if isinstance(t, App):
        if t.symbol == "@env":
            return "{%s}" % ", ".join(
                "%s -> %s" % (b.symbol[len("@bind:"):], term_str(b.args[0]))
                for b in t.args)
        if is_tuple_symbol(t.symbol):
            return "(%s)" % ", ".join(term_str(a) for a in t.args)
        if not t.args:
            return t.symbol
        return "%s(%s)" % (t.symbol, ", ".join(term_str(a) for a in t.args))
    raise TypeError("not a term: %r" % (t,))


def fact_str(f: Fact) -> str:
    name = f.pred
    if f.phase and f.pred in (ATTACKER, MESSAGE):
        name = "%s_%d" % (f.pred, f.phase)
    return "%s(%s)" % (name, ", ".join(term_str(a) for a in f.args))
