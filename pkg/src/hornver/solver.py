"""Resolution prover over the generated Horn clauses.

Two phases: saturation combines clauses by resolution on selected facts
until a fixpoint, keeping only clauses whose conclusion is selected;
a backward depth-first search then enumerates the ways a goal fact can
be derived from the saturated set.  Simplifications (data-constructor
decomposition, duplicate/tautology/redundancy elimination, secrecy
assumptions) keep the clause base small.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .clausegen import Clause
from .terms import (ATTACKER, COMP, MEVENT, App, Fact, NameFun, Var,
                    canonical_rename, fact_vars, match_facts, rename_term,
                    subst_fact, unify_facts)


def fact_key(f: Fact) -> App:
    """A fact as a plain term, for canonical renaming and hashing."""
    return App("@%s:%d" % (f.pred, f.phase), f.args)


class SolverError(Exception):
    """A secrecy assumption turned out to be derivable."""


class BudgetExceeded(Exception):
    """Resolution step or clause count budget exhausted."""


@dataclass
class SolverOptions:
    select: str = "sel2"            # sel0 | sel1 | sel2
    elim_redundant: str = "off"     # off | mevent | all
    max_steps: int = 10 ** 6
    max_clauses: int = 10 ** 5


# ---------------------------------------------------------------------------
# clause helpers

def rename_clause(c: Clause) -> Clause:
    ren = {}
    hyps = tuple(Fact(f.pred, tuple(rename_term(a, ren) for a in f.args),
                      f.phase) for f in c.hyps)
    concl = Fact(c.concl.pred,
                 tuple(rename_term(a, ren) for a in c.concl.args),
                 c.concl.phase)
    return Clause(hyps, concl)


def clause_vars(c: Clause) -> set:
    acc = set()
    for f in c.hyps:
        fact_vars(f, acc)
    fact_vars(c.concl, acc)
    return acc


def unselectable(f: Fact) -> bool:
    if f.pred == MEVENT:
        return True
    if f.pred in (ATTACKER, COMP):
        return len(f.args) == 1 and isinstance(f.args[0], Var)
    return False


def fact_size(f: Fact) -> int:
    def sz(t):
        if isinstance(t, (App, NameFun)):
            return 1 + sum(sz(a) for a in t.args)
        return 1
    return 1 + sum(sz(a) for a in f.args)


def _cached_vars(c: Clause) -> frozenset:
    v = getattr(c, "_vars", None)
    if v is None:
        v = frozenset(clause_vars(c))
        c._vars = v
    return v


def resolve(r: Clause, rp: Clause, idx: int):
    """r composed with rp at hypothesis rp.hyps[idx]: apply r to derive
    that hypothesis.  The clauses are renamed apart first; generated
    variables are globally fresh, so renaming is only needed when the
    two clauses happen to share one."""
    if _cached_vars(r) & _cached_vars(rp):
        r = rename_clause(r)
    s = unify_facts(r.concl, rp.hyps[idx])
    if s is None:
        return None
    hyps = tuple(subst_fact(s, f) for f in r.hyps) + \
        tuple(subst_fact(s, f) for i, f in enumerate(rp.hyps) if i != idx)
    return Clause(hyps, subst_fact(s, rp.concl))


def subsumes(c1: Clause, c2: Clause, node_cap: int = 500) -> bool:
    """c1 subsumes c2: some substitution maps c1's conclusion onto c2's
    and c1's hypotheses into c2's (as a multiset).

    The multiset matching always branches on the most constrained
    hypothesis first and gives up (answering False, which is safe) past
    node_cap search nodes, so one check cannot blow up.
    """
    if len(c1.hyps) > len(c2.hyps):
        return False
    s0 = match_facts(c1.concl, c2.concl)
    if s0 is None:
        return False
    n = len(c1.hyps)
    budget = [node_cap]

    def go(todo, s, used):
        if not todo:
            return True
        # fail-first: branch on the hypothesis with fewest viable targets
        best = None
        for i in todo:
            opts = []
            for j, h2 in enumerate(c2.hyps):
                if j in used:
                    continue
                budget[0] -= 1
                if budget[0] < 0:
                    return False
                s2 = match_facts(c1.hyps[i], h2, dict(s))
                if s2 is not None:
                    opts.append((j, s2))
                    if best is not None and len(opts) >= len(best[1]):
                        break
            if best is None or len(opts) < len(best[1]):
                best = (i, opts)
                if not opts:
                    return False
        i, opts = best
        rest = [k for k in todo if k != i]
        for j, s2 in opts:
            if go(rest, s2, used | {j}):
                return True
        return False

    return go(list(range(n)), s0, frozenset())


# ---------------------------------------------------------------------------
# simplification steps

def _is_data_shape(c: Clause, sig) -> bool:
    """Constructor and projection clauses for data constructors are kept
    as is (decomposition would reduce them to tautologies)."""
    cc = c.concl
    if cc.pred != ATTACKER or len(cc.args) != 1:
        return False
    # attacker(x1) && ... && attacker(xn) => attacker(f(x1, ..., xn))
    if isinstance(cc.args[0], App) and sig.is_data(cc.args[0].symbol):
        xs = cc.args[0].args
        if all(isinstance(x, Var) for x in xs) and len(set(xs)) == len(xs):
            want = tuple(Fact(ATTACKER, (x,), cc.phase) for x in xs)
            if c.hyps == want:
                return True
    # attacker(f(x1, ..., xn)) => attacker(xi)
    if len(c.hyps) == 1:
        h = c.hyps[0]
        if (h.pred == ATTACKER and len(h.args) == 1
                and isinstance(h.args[0], App)
                and sig.is_data(h.args[0].symbol)):
            xs = h.args[0].args
            if (all(isinstance(x, Var) for x in xs)
                    and len(set(xs)) == len(xs)
                    and isinstance(cc.args[0], Var)
                    and cc.args[0] in xs and h.phase == cc.phase):
                return True
    return False


def _decomp_term(t, sig, phase, out):
    """Flatten attacker(f(...)) for data f into atomic attacker facts."""
    if isinstance(t, App) and sig.is_data(t.symbol):
        for a in t.args:
            _decomp_term(a, sig, phase, out)
    else:
        out.append(Fact(ATTACKER, (t,), phase))


def _decomp_fact(f: Fact, sig) -> list:
    if (f.pred == ATTACKER and len(f.args) == 1
            and isinstance(f.args[0], App) and sig.is_data(f.args[0].symbol)):
        out = []
        _decomp_term(f.args[0], sig, f.phase, out)
        return out
    return [f]


def decomp(c: Clause, sig, hyp_only=False) -> list:
    if _is_data_shape(c, sig):
        return [c]
    hyps = []
    for h in c.hyps:
        hyps.extend(_decomp_fact(h, sig))
    hyps = tuple(hyps)
    if hyp_only:
        return [Clause(hyps, c.concl)]
    concls = _decomp_fact(c.concl, sig)
    return [Clause(hyps, cc) for cc in concls]


def elimdup(c: Clause) -> Clause:
    seen = []
    for h in c.hyps:
        if h not in seen:
            seen.append(h)
    return Clause(tuple(seen), c.concl)


def elimredundanthyp(c: Clause, mode: str) -> Clause:
    """Drop a hypothesis h when a substitution that leaves the rest of
    the clause untouched maps h onto another hypothesis."""
    if mode == "off" or len(c.hyps) < 2:
        return c
    hyps = list(c.hyps)
    changed = True
    while changed:
        changed = False
        for i, h in enumerate(hyps):
            if mode == "mevent" and h.pred != MEVENT:
                continue
            rest = hyps[:i] + hyps[i + 1:]
            keep_vars = set()
            for f in rest:
                fact_vars(f, keep_vars)
            fact_vars(c.concl, keep_vars)
            for h2 in rest:
                if h2 == h:
                    continue
                s = match_facts(h, h2)
                if s is None:
                    continue
                if all(v not in keep_vars or t == v for v, t in s.items()):
                    hyps = rest
                    changed = True
                    break
            if changed:
                break
    return Clause(tuple(hyps), c.concl)


def elimtaut(c: Clause) -> bool:
    return c.concl in c.hyps


def elimnot(c: Clause, not_facts) -> bool:
    for h in c.hyps:
        for fn in not_facts:
            if match_facts(fn, h) is not None:
                return True
    return False


def elimattx(c: Clause) -> Clause:
    kept = []
    for i, h in enumerate(c.hyps):
        if (h.pred in (ATTACKER, COMP) and len(h.args) == 1
                and isinstance(h.args[0], Var)):
            x = h.args[0]
            elsewhere = set()
            for j, h2 in enumerate(c.hyps):
                if j != i:
                    fact_vars(h2, elsewhere)
            fact_vars(c.concl, elsewhere)
            if x not in elsewhere:
                continue
        kept.append(h)
    return Clause(tuple(kept), c.concl)


# ---------------------------------------------------------------------------
# selection functions

def sel0(c: Clause):
    for i, h in enumerate(c.hyps):
        if not unselectable(h):
            return i
    return None


@dataclass
class _LoopShape:
    """A fact with a rigidity marker per variable, representing the set
    of its instances under substitutions whose support avoids the rigid
    variables (up to renaming)."""
    fact: Fact
    rigid: frozenset

    def contains(self, f: Fact) -> bool:
        s = match_facts(self.fact, f)
        if s is None:
            return False
        return all(isinstance(s.get(v, v), Var) for v in self.rigid)


class Selector:
    """sel1/sel2 weighted selection with the loop-avoidance sets."""

    def __init__(self, mode: str):
        self.mode = mode
        self.s_hyp = []
        self.s_concl = []
        self.warned_negative = False

    def _w_hyp(self, f: Fact, c: Clause):
        if unselectable(f):
            return None
        if match_facts(f, c.concl) is not None:
            return -2
        if any(sh.contains(f) for sh in self.s_hyp):
            return -1
        return fact_size(f) if self.mode == "sel2" else 0

    def _w_concl(self, c: Clause):
        if any(match_facts(c.concl, h) is not None for h in c.hyps):
            return -2
        if any(sc.contains(c.concl) for sc in self.s_concl):
            return -1
        return 0

    def select(self, c: Clause):
        if self.mode == "sel0":
            idx = sel0(c)
            # the divergence diagnostic is useful whatever the heuristic
            if idx is not None and self._w_hyp(c.hyps[idx], c) < 0:
                self.warned_negative = True
            return idx
        weights = [self._w_hyp(h, c) for h in c.hyps]
        wc = self._w_concl(c)
        usable = [w for w in weights if w is not None]
        if not usable or all(w < wc for w in usable):
            return None
        best = max(usable)
        idx = next(i for i, w in enumerate(weights) if w == best)
        if best < 0:
            self.warned_negative = True
        return idx

    def note_clause(self, c: Clause, sel_idx):
        """Update the loop-avoidance sets after selecting in a new clause."""
        if sel_idx is None:
            # conclusion selected; look for  H && F => sigma F
            for h in c.hyps:
                s = match_facts(h, c.concl)
                if s is not None and any(not isinstance(t, Var)
                                         for t in s.values()):
                    shape = _LoopShape(h, frozenset(
                        v for v, t in s.items() if not isinstance(t, Var)))
                    if not any(sh.fact == shape.fact and sh.rigid == shape.rigid
                               for sh in self.s_hyp):
                        self.s_hyp.append(shape)
        else:
            # hypothesis sigma F selected; look for  H && sigma F => F
            h = c.hyps[sel_idx]
            s = match_facts(c.concl, h)
            if s is not None and any(not isinstance(t, Var)
                                     for t in s.values()):
                shape = _LoopShape(c.concl, frozenset(
                    v for v, t in s.items() if not isinstance(t, Var)))
                if not any(sc.fact == shape.fact and sc.rigid == shape.rigid
                           for sc in self.s_concl):
                    self.s_concl.append(shape)


# ---------------------------------------------------------------------------
# solver

class Solver:
    def __init__(self, clauses, sig, not_facts=(), options=None):
        self.sig = sig
        self.not_facts = tuple(not_facts)
        self.opts = options or SolverOptions()
        self.selector = Selector(self.opts.select)
        self.steps = 0
        self.initial = list(clauses)
        self.saturated = None
        self.warned_divergence = False
        self._concl_sizes = {}   # canonical conclusion -> min/max hyp count

    # -- simplification pipelines

    def simplify(self, c: Clause) -> list:
        out = []
        for c1 in decomp(c, self.sig):
            c1 = elimdup(c1)
            c1 = elimredundanthyp(c1, self.opts.elim_redundant)
            if elimnot(c1, self.not_facts):
                continue
            if elimtaut(c1):
                continue
            out.append(elimattx(c1))
        return out

    def simplify_deriv(self, c: Clause) -> list:
        out = []
        for c1 in decomp(c, self.sig, hyp_only=True):
            c1 = elimdup(c1)
            c1 = elimredundanthyp(c1, self.opts.elim_redundant)
            if elimnot(c1, self.not_facts):
                continue
            out.append(elimattx(c1))
        return out

    def _tick(self):
        self.steps += 1
        if self.steps > self.opts.max_steps:
            raise BudgetExceeded("resolution step budget exceeded")

    def _note_growth(self, c: Clause):
        """Loop alarm: kept clauses proving the same conclusion with more
        and more hypotheses are the telltale of a diverging saturation."""
        if self.warned_divergence or not c.hyps:
            return
        key = canonical_rename((fact_key(c.concl),))
        lo, hi = self._concl_sizes.get(key, (len(c.hyps), len(c.hyps)))
        lo = min(lo, len(c.hyps))
        hi = max(hi, len(c.hyps))
        self._concl_sizes[key] = (lo, hi)
        if hi - lo >= 6:
            self.warned_divergence = True

    # -- saturation

    def saturate(self):
        if self.saturated is not None:
            return self.saturated
        active = []          # list of [clause, sel_idx]
        queue = deque()
        dropped = set()      # ids of clauses removed by subsumption

        def push(c):
            for entry in active:
                if id(entry[0]) not in dropped and subsumes(entry[0], c):
                    return
            for q in queue:
                if id(q) not in dropped and subsumes(q, c):
                    return
            for entry in active:
                if id(entry[0]) not in dropped and subsumes(c, entry[0]):
                    dropped.add(id(entry[0]))
            for q in queue:
                if id(q) not in dropped and subsumes(c, q):
                    dropped.add(id(q))
            queue.append(c)
            self._note_growth(c)
            if len(queue) + len(active) > self.opts.max_clauses:
                raise BudgetExceeded("clause budget exceeded")

        for c in self.initial:
            for c1 in self.simplify(c):
                push(c1)

        while queue:
            c = queue.popleft()
            if id(c) in dropped:
                continue
            self._tick()
            sel_idx = self.selector.select(c)
            self.selector.note_clause(c, sel_idx)
            partners = [e for e in active if id(e[0]) not in dropped]
            active.append([c, sel_idx])
            if sel_idx is None:
                pairs = [(c, e[0], e[1]) for e in partners
                         if e[1] is not None]
            else:
                pairs = [(e[0], c, sel_idx) for e in partners if e[1] is None]
            for r, rp, idx in pairs:
                self._tick()
                res = resolve(r, rp, idx)
                if res is None:
                    continue
                for c1 in self.simplify(res):
                    push(c1)

        self.saturated = [e[0] for e in active
                          if id(e[0]) not in dropped and e[1] is None]
        return self.saturated

    # -- backward search

    def derivable(self, goal: Fact) -> list:
        rules = self.saturate()
        seen = []
        out = []

        def emit(r):
            for r2 in out:
                if subsumes(r2, r):
                    return
            out[:] = [r2 for r2 in out if not subsumes(r, r2)]
            out.append(r)

        def deriv(r):
            self._tick()
            if any(subsumes(rp, r) for rp in seen):
                return
            sel_idx = sel0(r)
            if sel_idx is None:
                emit(r)
                return
            seen.append(r)
            for rp in rules:
                res = resolve(rp, r, sel_idx)
                if res is None:
                    continue
                for c1 in self.simplify_deriv(res):
                    deriv(c1)

        deriv(Clause((goal,), goal))
        return out

    def solve(self, goal: Fact) -> list:
        rules = self.saturate()
        if not getattr(self, "_not_checked", False):
            for fn in self.not_facts:
                if self.derivable(fn):
                    raise SolverError(
                        "secrecy assumption %r is derivable" % (fn,))
            self._not_checked = True
        return self.derivable(goal)
