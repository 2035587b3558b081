"""Session-identifier instrumentation.

Replications get labeled with session-id variables; each restriction
gets a label recording the enclosing input variables, results of
non-deterministic destructor applications, and session identifiers.
Restriction labels are triples (symbol, term arguments, session ids);
adversary labels use the reserved symbol prefix "@b0:".
"""

from __future__ import annotations

from .terms import SID, Signature, Var, fresh_index
from .calculus import (EventP, IfEq, Input, LetDestr, Nil, Output, Par,
                       PhaseP, Proc, Repl, Restr)

B0 = "b0"


class InstrumentError(ValueError):
    pass


def _instr(p: Proc, sig: Signature, sids, tvars, adversary, inj) -> Proc:
    if isinstance(p, Nil):
        return p
    if isinstance(p, Par):
        return Par(_instr(p.left, sig, sids, tvars, adversary, inj),
                   _instr(p.right, sig, sids, tvars, adversary, inj), pp=p.pp)
    if isinstance(p, Repl):
        sid = Var("i_%d" % fresh_index(), SID)
        return Repl(_instr(p.body, sig, sids + [sid], tvars, adversary, inj),
                    sid, pp=p.pp)
    if isinstance(p, Restr):
        if adversary:
            label = ("@b0:" + p.name, (), tuple(sids))
        else:
            label = (p.name, tuple(tvars), tuple(sids))
        return Restr(p.name, _instr(p.cont, sig, sids, tvars, adversary, inj),
                     label, pp=p.pp)
    if isinstance(p, Input):
        return Input(p.channel, p.var,
                     _instr(p.cont, sig, sids, tvars + [p.var], adversary, inj),
                     pp=p.pp)
    if isinstance(p, Output):
        return Output(p.channel, p.msg,
                      _instr(p.cont, sig, sids, tvars, adversary, inj), pp=p.pp)
    if isinstance(p, LetDestr):
        # only non-deterministic destructor results are recorded in labels;
        # deterministic results are determined by the other label entries
        tv = tvars + [p.var] if sig.nondeterministic_destructor(p.destructor) \
            else tvars
        return LetDestr(p.var, p.destructor, p.args,
                        _instr(p.then, sig, sids, tv, adversary, inj),
                        _instr(p.orelse, sig, sids, tvars, adversary, inj),
                        pp=p.pp)
    if isinstance(p, IfEq):
        return IfEq(p.m1, p.m2,
                    _instr(p.then, sig, sids, tvars, adversary, inj),
                    _instr(p.orelse, sig, sids, tvars, adversary, inj),
                    pp=p.pp)
    if isinstance(p, EventP):
        sid = None
        if inj:
            if not sids:
                raise InstrumentError(
                    "event %s is not under a replication; injective "
                    "correspondences need a session identifier" % p.arg)
            sid = sids[-1]
        return EventP(p.arg, _instr(p.cont, sig, sids, tvars, adversary, inj),
                      sid, pp=p.pp)
    if isinstance(p, PhaseP):
        return PhaseP(p.t, _instr(p.cont, sig, sids, tvars, adversary, inj),
                      pp=p.pp)
    raise TypeError(p)


def instr(p: Proc, sig: Signature) -> Proc:
    return _instr(p, sig, [], [], adversary=False, inj=False)


def instr_adv(p: Proc, sig: Signature) -> Proc:
    return _instr(p, sig, [], [], adversary=True, inj=False)


def instr_inj(p: Proc, sig: Signature) -> Proc:
    """Instrumentation for injective correspondences: events also carry
    the session id of the innermost enclosing replication, and distinct
    event occurrences must have distinct root symbols."""
    seen = {}

    def check(q):
        if isinstance(q, EventP):
            sym = q.arg.symbol
            if sym in seen:
                raise InstrumentError(
                    "event symbol %s occurs more than once; injective "
                    "correspondences need distinct root symbols" % sym)
            seen[sym] = q
        for child in _kids(q):
            check(child)

    check(p)
    return _instr(p, sig, [], [], adversary=False, inj=True)


def _kids(p: Proc):
    if isinstance(p, (Output, Input, EventP, PhaseP, Restr)):
        return [p.cont]
    if isinstance(p, Par):
        return [p.left, p.right]
    if isinstance(p, Repl):
        return [p.body]
    if isinstance(p, (LetDestr, IfEq)):
        return [p.then, p.orelse]
    return []


def un_instr(p: Proc) -> Proc:
    if isinstance(p, Nil):
        return p
    if isinstance(p, Par):
        return Par(un_instr(p.left), un_instr(p.right), pp=p.pp)
    if isinstance(p, Repl):
        return Repl(un_instr(p.body), None, pp=p.pp)
    if isinstance(p, Restr):
        return Restr(p.name, un_instr(p.cont), None, pp=p.pp)
    if isinstance(p, Input):
        return Input(p.channel, p.var, un_instr(p.cont), pp=p.pp)
    if isinstance(p, Output):
        return Output(p.channel, p.msg, un_instr(p.cont), pp=p.pp)
    if isinstance(p, LetDestr):
        return LetDestr(p.var, p.destructor, p.args, un_instr(p.then),
                        un_instr(p.orelse), pp=p.pp)
    if isinstance(p, IfEq):
        return IfEq(p.m1, p.m2, un_instr(p.then), un_instr(p.orelse), pp=p.pp)
    if isinstance(p, EventP):
        return EventP(p.arg, un_instr(p.cont), None, pp=p.pp)
    if isinstance(p, PhaseP):
        return PhaseP(p.t, un_instr(p.cont), pp=p.pp)
    raise TypeError(p)
