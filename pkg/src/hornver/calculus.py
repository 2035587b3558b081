"""Process AST, protocol source parser and a reference interpreter.

The surface language lives in `.cv` files:

    fun f/2.                    # constructor (options: data, private)
    reduc g(T, ...) -> T; ... . # destructor rules
    equation T = T.             # equational theory
    free a, b.                  # public free names (attacker's Init)
    private free s.             # secret free names
    not attacker(T).            # secrecy assumption
    query Q.                    # correspondence to prove
    process P                   # the protocol

Process syntax: out(M,N); P | in(M,x); P | new a; P | !P | P | Q | 0 |
let x = g(...) in P [else Q] | if M = N then P [else Q] |
event e(M,...); P | phase t; P.  `let (=T, x, ...) = g(...) in`
pattern matching is sugar for projections followed by equality tests.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Optional

from .terms import (App, Name, RewriteRule, Signature, Var, fresh_var,
                    match_under, mk_tuple, proj_symbol, rename_rule,
                    subst_apply, term_str, tuple_symbol)

_pp_counter = itertools.count(1)


def _pp():
    return next(_pp_counter)


# ---------------------------------------------------------------------------
# process AST (frozen but compared by identity; `pp` is a stable program
# point id preserved by substitution)

@dataclass(frozen=True, eq=False)
class Proc:
    pass


@dataclass(frozen=True, eq=False)
class Nil(Proc):
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class Output(Proc):
    channel: object
    msg: object
    cont: Proc
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class Input(Proc):
    channel: object
    var: Var
    cont: Proc
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class Par(Proc):
    left: Proc
    right: Proc
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class Repl(Proc):
    body: Proc
    sid: Optional[Var] = None          # set by instrumentation
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class Restr(Proc):
    name: str
    cont: Proc
    label: object = None               # set by instrumentation
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class LetDestr(Proc):
    var: Var
    destructor: str
    args: tuple
    then: Proc
    orelse: Proc
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class IfEq(Proc):
    m1: object
    m2: object
    then: Proc
    orelse: Proc
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class EventP(Proc):
    arg: object
    cont: Proc
    sid: Optional[Var] = None          # set by injective instrumentation
    pp: int = field(default_factory=_pp)


@dataclass(frozen=True, eq=False)
class PhaseP(Proc):
    t: int
    cont: Proc
    pp: int = field(default_factory=_pp)


def subst_term_names(s: dict, t):
    """Substitute for both Name and Var keys inside a source term."""
    if isinstance(t, (Name, Var)):
        return s.get(t, t)
    if isinstance(t, App):
        return App(t.symbol, tuple(subst_term_names(s, a) for a in t.args))
    return t


def subst_proc(s: dict, p: Proc) -> Proc:
    """Capture-avoidance is not needed: bound names/variables are pairwise
    distinct after parsing, and interpreter substitutions only map to
    closed terms."""
    st = lambda t: subst_term_names(s, t)
    if isinstance(p, Nil):
        return p
    if isinstance(p, Output):
        return Output(st(p.channel), st(p.msg), subst_proc(s, p.cont), pp=p.pp)
    if isinstance(p, Input):
        return Input(st(p.channel), p.var, subst_proc(s, p.cont), pp=p.pp)
    if isinstance(p, Par):
        return Par(subst_proc(s, p.left), subst_proc(s, p.right), pp=p.pp)
    if isinstance(p, Repl):
        return Repl(subst_proc(s, p.body), p.sid, pp=p.pp)
    if isinstance(p, Restr):
        lbl = p.label
        if lbl is not None:
            lbl = (lbl[0], tuple(st(t) for t in lbl[1]), lbl[2])
        return Restr(p.name, subst_proc(s, p.cont), lbl, pp=p.pp)
    if isinstance(p, LetDestr):
        return LetDestr(p.var, p.destructor, tuple(st(a) for a in p.args),
                        subst_proc(s, p.then), subst_proc(s, p.orelse), pp=p.pp)
    if isinstance(p, IfEq):
        return IfEq(st(p.m1), st(p.m2), subst_proc(s, p.then),
                    subst_proc(s, p.orelse), pp=p.pp)
    if isinstance(p, EventP):
        return EventP(st(p.arg), subst_proc(s, p.cont), p.sid, pp=p.pp)
    if isinstance(p, PhaseP):
        return PhaseP(p.t, subst_proc(s, p.cont), pp=p.pp)
    raise TypeError(p)


def proc_nodes(p: Proc):
    yield p
    for child in _children(p):
        yield from proc_nodes(child)


def _children(p: Proc):
    if isinstance(p, (Output, Input, EventP, PhaseP, Restr)):
        return [p.cont]
    if isinstance(p, Par):
        return [p.left, p.right]
    if isinstance(p, Repl):
        return [p.body]
    if isinstance(p, (LetDestr, IfEq)):
        return [p.then, p.orelse]
    return []


# ---------------------------------------------------------------------------
# builtin signature (standard cryptographic primitives)

def builtin_signature() -> Signature:
    sig = Signature()
    x, y, z = Var("x"), Var("y"), Var("z")
    sig.declare_fun("sencrypt", 2)
    sig.declare_destructor("sdecrypt", [
        RewriteRule("sdecrypt", (App("sencrypt", (x, y)), y), x)])
    sig.declare_fun("sencrypt_p", 3)
    sig.declare_destructor("sdecrypt_p", [
        RewriteRule("sdecrypt_p", (App("sencrypt_p", (x, y, z)), y), x)])
    sig.declare_fun("pk", 1)
    sig.declare_fun("pencrypt_p", 3)
    sig.declare_destructor("pdecrypt_p", [
        RewriteRule("pdecrypt_p",
                    (App("pencrypt_p", (x, App("pk", (y,)), z)), y), x)])
    sig.declare_fun("sign", 2)
    sig.declare_destructor("checksignature", [
        RewriteRule("checksignature",
                    (App("sign", (x, y)), App("pk", (y,))), x)])
    sig.declare_destructor("getmessage", [
        RewriteRule("getmessage", (App("sign", (x, y)),), x)])
    sig.declare_fun("nmrsign", 2)
    sig.declare_fun("true", 0)
    sig.declare_destructor("nmrchecksign", [
        RewriteRule("nmrchecksign",
                    (App("nmrsign", (x, y)), App("pk", (y,)), x),
                    App("true", ()))])
    sig.declare_fun("h", 1)
    sig.declare_fun("mac", 2)
    sig.declare_fun("host", 1)
    sig.declare_destructor("getkey", [
        RewriteRule("getkey", (App("host", (x,)),), x)], public=False)
    return sig


EQUAL = "equal"   # virtual destructor for conditionals; equal(x,x) -> x


# ---------------------------------------------------------------------------
# parsed model

@dataclass
class Model:
    sig: Signature
    process: Proc
    queries: list          # list of (source text, Correspondence)
    init: set              # public free names
    free_names: set        # all free names
    not_facts: list        # secrecy assumptions, closed attacker facts
    event_arities: dict
    max_phase: int = 0
    compromise_names: tuple = ()   # restrictions whose honest-session
                                   # secrecy is queried under compromise


# ---------------------------------------------------------------------------
# tokenizer

TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<op>==>|~>|->|&&|[().,;=|!/])
  | (?P<ident>[0-9]+th[0-9]+|inj-event|[A-Za-z_][A-Za-z0-9_']*|[0-9]+)
""", re.X)

KEYWORDS = {"fun", "reduc", "equation", "free", "private", "not", "query",
            "process", "out", "in", "new", "let", "if", "then", "else",
            "event", "phase", "data", "compromise"}


class ParseError(ValueError):
    pass


class Tokens:
    def __init__(self, text: str):
        self.toks = []
        pos = 0
        line = 1
        while pos < len(text):
            m = TOKEN_RE.match(text, pos)
            if m is None:
                raise ParseError("line %d: unexpected character %r"
                                 % (line, text[pos]))
            line += text[pos:m.end()].count("\n")
            if m.lastgroup != "ws":
                self.toks.append((m.group(), line))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i][0] if self.i < len(self.toks) else None

    def peek2(self):
        return self.toks[self.i + 1][0] if self.i + 1 < len(self.toks) else None

    def line(self):
        return self.toks[self.i][1] if self.i < len(self.toks) else -1

    def next(self):
        if self.i >= len(self.toks):
            raise ParseError("unexpected end of input")
        tok = self.toks[self.i][0]
        self.i += 1
        return tok

    def expect(self, tok):
        got = self.next()
        if got != tok:
            raise ParseError("line %d: expected %r, got %r"
                             % (self.toks[self.i - 1][1], tok, got))
        return got


# ---------------------------------------------------------------------------
# parser

class Parser:
    def __init__(self, text: str):
        self.tk = Tokens(text)
        self.sig = builtin_signature()
        self.init = set()
        self.free_names = set()
        self.not_raw = []
        self.query_raw = []
        self.compromise_names = []
        self.event_arities = {}
        self.bound_seen = set()
        self.max_phase = 0

    def err(self, msg):
        raise ParseError("line %d: %s" % (self.tk.line(), msg))

    def parse(self) -> Model:
        process = None
        while True:
            tok = self.tk.peek()
            if tok is None:
                self.err("missing process declaration")
            if tok == "process":
                self.tk.next()
                env = {a: Name(a) for a in self.free_names}
                process = self.parse_process(env)
                if self.tk.peek() == ".":
                    self.tk.next()
                if self.tk.peek() is not None:
                    self.err("trailing input after process")
                break
            self.parse_decl()
        model = Model(self.sig, process, [], self.init, self.free_names,
                      [], self.event_arities, self.max_phase,
                      tuple(self.compromise_names))
        from .query import parse_not_fact, parse_query
        for raw in self.not_raw:
            model.not_facts.append(parse_not_fact(raw, model))
        for raw in self.query_raw:
            model.queries.append((raw, parse_query(raw, model)))
        return model

    # declarations ---------------------------------------------------------

    def parse_decl(self):
        tok = self.tk.next()
        private = False
        if tok == "private":
            private = True
            tok = self.tk.next()
        if tok == "fun":
            name = self.tk.next()
            self.tk.expect("/")
            arity = int(self.tk.next())
            data = False
            while self.tk.peek() in ("data", "private"):
                opt = self.tk.next()
                if opt == "data":
                    data = True
                else:
                    private = True
            self.tk.expect(".")
            self.sig.declare_fun(name, arity, public=not private, data=data)
        elif tok == "reduc":
            rules = []
            name = None
            while True:
                rule = self.parse_rewrite_rule()
                if name is None:
                    name = rule.destructor
                elif rule.destructor != name:
                    self.err("all rules of a reduc must define one destructor")
                rules.append(rule)
                if self.tk.peek() == ";":
                    self.tk.next()
                    continue
                self.tk.expect(".")
                break
            self.sig.declare_destructor(name, rules, public=not private)
        elif tok == "equation":
            lhs = self.parse_term({}, rule_mode=True)
            self.tk.expect("=")
            rhs = self.parse_term({}, rule_mode=True)
            self.tk.expect(".")
            self.sig.declare_equation(lhs, rhs)
        elif tok == "free":
            while True:
                name = self.tk.next()
                if name in self.free_names:
                    self.err("duplicate free name %s" % name)
                self.free_names.add(name)
                if not private:
                    self.init.add(name)
                if self.tk.peek() == ",":
                    self.tk.next()
                    continue
                self.tk.expect(".")
                break
        elif tok == "compromise":
            while True:
                self.compromise_names.append(self.tk.next())
                if self.tk.peek() == ",":
                    self.tk.next()
                    continue
                self.tk.expect(".")
                break
        elif tok == "not":
            self.not_raw.append(self.raw_until_dot())
        elif tok == "query":
            self.query_raw.append(self.raw_until_dot())
        else:
            self.err("unknown declaration %r" % tok)

    def raw_until_dot(self):
        out = ""
        while True:
            tok = self.tk.next()
            if tok == ".":
                return out
            sep = bool(out) and tok not in (",", ")") and not out.endswith("(")
            if tok == "(" and out and (out[-1].isalnum() or out[-1] == "_"):
                sep = False
            if sep:
                out += " "
            out += tok

    def parse_rewrite_rule(self) -> RewriteRule:
        name = self.tk.next()
        self.tk.expect("(")
        args = []
        if self.tk.peek() != ")":
            while True:
                args.append(self.parse_term({}, rule_mode=True))
                if self.tk.peek() == ",":
                    self.tk.next()
                    continue
                break
        self.tk.expect(")")
        self.tk.expect("->")
        rhs = self.parse_term({}, rule_mode=True)
        return RewriteRule(name, tuple(args), rhs)

    # terms ----------------------------------------------------------------

    def parse_term(self, env: dict, rule_mode=False):
        """In rule_mode, unknown identifiers become variables (rewrite
        rules and equations are name-free); otherwise they are errors."""
        tok = self.tk.next()
        if tok == "(":
            args = []
            if self.tk.peek() != ")":
                while True:
                    args.append(self.parse_term(env, rule_mode))
                    if self.tk.peek() == ",":
                        self.tk.next()
                        continue
                    break
            self.tk.expect(")")
            if len(args) == 1:
                return args[0]
            self.sig.ensure_tuple(len(args))
            return mk_tuple(args)
        if not re.match(r"[0-9]*[A-Za-z_]", tok):
            self.err("expected a term, got %r" % tok)
        if self.tk.peek() == "(":
            self.tk.next()
            args = []
            if self.tk.peek() != ")":
                while True:
                    args.append(self.parse_term(env, rule_mode))
                    if self.tk.peek() == ",":
                        self.tk.next()
                        continue
                    break
            self.tk.expect(")")
            decl = self.sig.constructors.get(tok)
            if decl is None:
                self.err("unknown constructor %r" % tok)
            if decl.arity != len(args):
                self.err("constructor %s expects %d arguments, got %d"
                         % (tok, decl.arity, len(args)))
            return App(tok, tuple(args))
        if rule_mode:
            return Var(tok)
        if tok in env:
            return env[tok]
        decl = self.sig.constructors.get(tok)
        if decl is not None and decl.arity == 0:
            return App(tok, ())
        self.err("unknown identifier %r" % tok)

    # processes ------------------------------------------------------------

    def parse_process(self, env: dict) -> Proc:
        left = self.parse_process_seq(env)
        while self.tk.peek() == "|":
            self.tk.next()
            right = self.parse_process_seq(env)
            left = Par(left, right)
        return left

    def bind(self, env, ident, value):
        if ident in self.bound_seen or ident in self.free_names:
            # keep bound identifiers pairwise distinct (instrumentation
            # assumes it); rename silently with a fresh suffix
            new = "%s_%d" % (ident, next(_pp_counter))
            env = dict(env)
            env[ident] = Var(new) if isinstance(value, Var) else Name(new)
            self.bound_seen.add(new)
            return env, (new if isinstance(value, Var) else new)
        env = dict(env)
        env[ident] = value
        self.bound_seen.add(ident)
        return env, ident

    def parse_process_seq(self, env: dict) -> Proc:
        tok = self.tk.peek()
        if tok is None:
            return Nil()
        if tok == "0":
            self.tk.next()
            return Nil()
        if tok == "(":
            self.tk.next()
            p = self.parse_process(env)
            self.tk.expect(")")
            return p
        if tok == "!":
            self.tk.next()
            return Repl(self.parse_process_seq(env))
        if tok == "out":
            self.tk.next()
            self.tk.expect("(")
            chan = self.parse_term(env)
            self.tk.expect(",")
            msg = self.parse_term(env)
            self.tk.expect(")")
            return Output(chan, msg, self.maybe_cont(env))
        if tok == "in":
            self.tk.next()
            self.tk.expect("(")
            chan = self.parse_term(env)
            self.tk.expect(",")
            ident = self.tk.next()
            self.tk.expect(")")
            env2, ident2 = self.bind(env, ident, Var(ident))
            var = env2[ident]
            return Input(chan, var, self.maybe_cont(env2))
        if tok == "new":
            self.tk.next()
            ident = self.tk.next()
            env2, ident2 = self.bind(env, ident, Name(ident))
            name = env2[ident].symbol
            self.tk.expect(";")
            return Restr(name, self.parse_process_seq(env2))
        if tok == "event":
            self.tk.next()
            sym = self.tk.next()
            self.tk.expect("(")
            args = []
            if self.tk.peek() != ")":
                while True:
                    args.append(self.parse_term(env))
                    if self.tk.peek() == ",":
                        self.tk.next()
                        continue
                    break
            self.tk.expect(")")
            arity = self.event_arities.setdefault(sym, len(args))
            if arity != len(args):
                self.err("event %s used with arities %d and %d"
                         % (sym, arity, len(args)))
            return EventP(App(sym, tuple(args)), self.maybe_cont(env))
        if tok == "phase":
            self.tk.next()
            t = int(self.tk.next())
            self.max_phase = max(self.max_phase, t)
            self.tk.expect(";")
            return PhaseP(t, self.parse_process_seq(env))
        if tok == "if":
            self.tk.next()
            m1 = self.parse_term(env)
            self.tk.expect("=")
            m2 = self.parse_term(env)
            self.tk.expect("then")
            then = self.parse_process_seq(env)
            orelse = Nil()
            if self.tk.peek() == "else":
                self.tk.next()
                orelse = self.parse_process_seq(env)
            return IfEq(m1, m2, then, orelse)
        if tok == "let":
            self.tk.next()
            return self.parse_let(env)
        self.err("expected a process, got %r" % tok)

    def maybe_cont(self, env) -> Proc:
        if self.tk.peek() == ";":
            self.tk.next()
            return self.parse_process_seq(env)
        return Nil()

    def parse_let(self, env) -> Proc:
        # pattern: ident or (component, ...); component: ident or =term
        pats = None
        single = None
        if self.tk.peek() == "(":
            self.tk.next()
            pats = []
            while True:
                if self.tk.peek() == "=":
                    self.tk.next()
                    pats.append(("eq", self.parse_term(env)))
                else:
                    pats.append(("var", self.tk.next()))
                if self.tk.peek() == ",":
                    self.tk.next()
                    continue
                break
            self.tk.expect(")")
        else:
            single = self.tk.next()
        self.tk.expect("=")
        # right-hand side: destructor application or plain term
        head = self.tk.peek()
        if head in self.sig.destructors and self.tk.peek2() == "(":
            self.tk.next()
            self.tk.expect("(")
            args = []
            if self.tk.peek() != ")":
                while True:
                    args.append(self.parse_term(env))
                    if self.tk.peek() == ",":
                        self.tk.next()
                        continue
                    break
            self.tk.expect(")")
            decl = self.sig.destructors[head]
            arity = len(decl.rules[0].lhs)
            if len(args) != arity:
                self.err("destructor %s expects %d arguments" % (head, arity))
            destr = (head, tuple(args))
        else:
            destr = None
            value = self.parse_term(env)
        self.tk.expect("in")
        if destr is None:
            # plain binding: syntactic sugar for substitution
            if pats is not None:
                self.err("pattern let requires a destructor application")
            env2, _ = self.bind(env, single, Var(single))
            body = self.parse_process_seq(env2)
            if self.tk.peek() == "else":
                self.err("plain let cannot fail, no else allowed")
            return subst_proc({env2[single]: value}, body)
        if pats is None:
            env2, _ = self.bind(env, single, Var(single))
            var = env2[single]
            then = self.parse_process_seq(env2)
            orelse = Nil()
            if self.tk.peek() == "else":
                self.tk.next()
                orelse = self.parse_process_seq(env)
            return LetDestr(var, destr[0], destr[1], then, orelse)
        # pattern let: bind a fresh result variable, project every
        # component, then run the equality tests in component order
        res = fresh_var("y")
        n = len(pats)
        if n > 1:
            self.sig.ensure_tuple(n)
        env2 = dict(env)
        comps = []
        tests = []
        for idx, (kind, payload) in enumerate(pats, start=1):
            if kind == "var":
                env2, _ = self.bind(env2, payload, Var(payload))
                comps.append((idx, env2[payload]))
            else:
                v = fresh_var("x")
                comps.append((idx, v))
                tests.append((v, payload))
        then = self.parse_process_seq(env2)
        orelse = Nil()
        if self.tk.peek() == "else":
            self.tk.next()
            orelse = self.parse_process_seq(env)
        if n == 1:
            # a 1-component pattern matches the bare result, no projection
            kind, payload = pats[0]
            if kind == "var":
                return LetDestr(env2[payload], destr[0], destr[1], then, orelse)
            return LetDestr(res, destr[0], destr[1],
                            IfEq(res, payload, then, orelse), orelse)
        for v, t in reversed(tests):
            then = IfEq(v, t, then, orelse)
        for idx, v in reversed(comps):
            then = LetDestr(v, proj_symbol(idx, n), (res,), then, orelse)
        return LetDestr(res, destr[0], destr[1], then, orelse)


def parse(text: str) -> Model:
    return Parser(text).parse()


def parse_file(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------------------
# destructor evaluation on closed terms

def reduce_destructor(sig: Signature, g: str, args) -> list:
    if g == EQUAL:
        return [args[0]] if args[0] == args[1] else []
    out = []
    for rule in sig.destructors[g].rules:
        r = rename_rule(rule)
        s = {}
        ok = True
        for pat, arg in zip(r.lhs, args):
            s = match_under(s, pat, arg)
            if s is None:
                ok = False
                break
        if ok:
            res = subst_apply(s, r.rhs)
            if res not in out:
                out.append(res)
    return out


# ---------------------------------------------------------------------------
# reference interpreter (plain semantics)

@dataclass(frozen=True)
class Config:
    names: frozenset       # names created so far plus free names
    procs: tuple           # multiset of closed processes
    events: tuple          # executed events, in execution order
    executed: tuple        # program points executed, in order


def initial_config(model: Model, extra_procs=()) -> Config:
    return Config(frozenset(model.free_names),
                  (model.process,) + tuple(extra_procs), (), ())


def step(sig: Signature, c: Config) -> list:
    """All configurations reachable in one reduction."""
    out = []
    procs = list(c.procs)
    for idx, p in enumerate(procs):
        rest = tuple(procs[:idx] + procs[idx + 1:])

        def done(new_procs, event=None, pp=None):
            evs = c.events + ((event,) if event is not None else ())
            pps = c.executed + ((pp,) if pp is not None else ())
            out.append(Config(c.names, rest + tuple(new_procs), evs, pps))

        if isinstance(p, Nil):
            done([], pp=p.pp)
        elif isinstance(p, Par):
            done([p.left, p.right], pp=p.pp)
        elif isinstance(p, Repl):
            done([p.body, p], pp=p.pp)
        elif isinstance(p, Restr):
            base = p.name
            fresh = base
            k = 0
            while fresh in c.names:
                k += 1
                fresh = "%s~%d" % (base, k)
            body = subst_proc({Name(base): Name(fresh)}, p.cont)
            out.append(Config(c.names | {fresh}, rest + (body,),
                              c.events, c.executed + (p.pp,)))
        elif isinstance(p, LetDestr):
            results = reduce_destructor(sig, p.destructor, p.args)
            if results:
                for res in results:
                    done([subst_proc({p.var: res}, p.then)], pp=p.pp)
            else:
                done([p.orelse], pp=p.pp)
        elif isinstance(p, IfEq):
            done([p.then if p.m1 == p.m2 else p.orelse], pp=p.pp)
        elif isinstance(p, EventP):
            done([p.cont], event=p.arg, pp=p.pp)
        elif isinstance(p, PhaseP):
            done([p.cont], pp=p.pp)
        elif isinstance(p, Output):
            for jdx, q in enumerate(procs):
                if jdx == idx or not isinstance(q, Input):
                    continue
                if q.channel != p.channel:
                    continue
                rest2 = tuple(r for n, r in enumerate(procs)
                              if n not in (idx, jdx))
                cont_in = subst_proc({q.var: p.msg}, q.cont)
                out.append(Config(c.names, rest2 + (p.cont, cont_in),
                                  c.events, c.executed + (p.pp, q.pp)))
    return out


def strip_replications(p: Proc) -> Proc:
    if isinstance(p, Repl):
        return strip_replications(p.body)
    if isinstance(p, Par):
        return Par(strip_replications(p.left), strip_replications(p.right),
                   pp=p.pp)
    if isinstance(p, (Output, Input, EventP, PhaseP, Restr)):
        q = strip_replications(p.cont)
        if isinstance(p, Output):
            return Output(p.channel, p.msg, q, pp=p.pp)
        if isinstance(p, Input):
            return Input(p.channel, p.var, q, pp=p.pp)
        if isinstance(p, EventP):
            return EventP(p.arg, q, p.sid, pp=p.pp)
        if isinstance(p, PhaseP):
            return PhaseP(p.t, q, pp=p.pp)
        return Restr(p.name, q, p.label, pp=p.pp)
    if isinstance(p, LetDestr):
        return LetDestr(p.var, p.destructor, p.args,
                        strip_replications(p.then),
                        strip_replications(p.orelse), pp=p.pp)
    if isinstance(p, IfEq):
        return IfEq(p.m1, p.m2, strip_replications(p.then),
                    strip_replications(p.orelse), pp=p.pp)
    return p


class SearchBudget(Exception):
    pass


def explore_replication_free(model: Model, cap: int = 100000):
    """Search for a trace of the replication-stripped process in which
    every program point executes exactly once and the multiset empties.

    Returns the list of executed program points, or None.  Raises
    SearchBudget when the state cap is hit before an answer is found.
    """
    stripped = strip_replications(model.process)
    start = Config(frozenset(model.free_names), (stripped,), (), ())
    visited = 0
    stack = [start]
    while stack:
        c = stack.pop()
        visited += 1
        if visited > cap:
            raise SearchBudget("state cap exceeded")
        if not c.procs:
            if len(set(c.executed)) == len(c.executed):
                return list(c.executed)
            continue
        for succ in step(model.sig, c):
            if len(set(succ.executed)) == len(succ.executed):
                stack.append(succ)
    return None
