"""Protocol verifier: pi-calculus models compiled to Horn clauses and
checked by resolution, for secrecy and correspondence properties over an
unbounded number of sessions."""

from .calculus import Model, parse, parse_file
from .clausegen import Clause, attacker_clauses, generate, translate_protocol
from .instrument import instr, instr_adv, instr_inj
from .query import Query, parse_query, prove_correspondence, prove_secrecy
from .solver import BudgetExceeded, Solver, SolverError, SolverOptions

__all__ = [
    "Model", "parse", "parse_file", "Clause", "attacker_clauses",
    "generate", "translate_protocol", "instr", "instr_adv", "instr_inj",
    "Query", "parse_query", "prove_correspondence", "prove_secrecy",
    "BudgetExceeded", "Solver", "SolverError", "SolverOptions",
]
