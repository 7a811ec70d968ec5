"""Property formulas: state predicates combined by propositional connectives.

Agent and session arguments are kept as names; term-formula bodies may
mention protocol names (roles, fresh values, macros, evidence).  They are
resolved against a protocol and scenario by :mod:`nrcheck.properties`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .knowledge import TermFormula, render_term_formula
from .terms import Term, render


@dataclass(frozen=True)
class Aknows:
    agent: str
    session: Optional[str]
    body: TermFormula


@dataclass(frozen=True)
class Deduce:
    agent: str
    session: Optional[str]
    body: TermFormula


@dataclass(frozen=True)
class Auth:
    """Non-injective agreement: every ``request`` by ``agent`` on ``data`` from
    ``peer`` is preceded by a matching ``witness``."""

    agent: str
    peer: str
    data: Term
    session: Optional[str] = None


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


Formula = Union[Aknows, Deduce, Auth, Const, Not, And, Or, Implies, Iff]
Atomic = (Aknows, Deduce, Auth, Const)
_CONNECTIVES = (Not, And, Or, Implies, Iff)

_PREC = {Iff: 1, Implies: 2, Or: 3, And: 4}
_OPS = {Iff: "<=>", Implies: "=>", Or: "|", And: "&"}


def render_formula(f: Formula, parent: int = 0) -> str:
    """ASCII concrete syntax accepted back by the property parser."""
    if isinstance(f, (Aknows, Deduce)):
        name = "aknows" if isinstance(f, Aknows) else "deduce"
        if f.session is None:
            return f"{name}({f.agent},{render_term_formula(f.body)})"
        return f"{name}({f.agent},{f.session},{render_term_formula(f.body)})"
    if isinstance(f, Auth):
        tail = f",{f.session}" if f.session else ""
        return f"auth({f.agent},{f.peer},{render(f.data)}{tail})"
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        return "~" + render_formula(f.arg, 5)
    prec = _PREC[type(f)]
    # implication is right-associative, the others left-associative
    if isinstance(f, Implies):
        lp, rp = prec + 1, prec
    else:
        lp, rp = prec, prec + 1
    s = f"{render_formula(f.left, lp)} {_OPS[type(f)]} {render_formula(f.right, rp)}"
    return f"({s})" if prec < parent else s


def atoms_of(f: Formula) -> list[Formula]:
    if not isinstance(f, _CONNECTIVES):
        return [f]
    if isinstance(f, Not):
        return atoms_of(f.arg)
    return atoms_of(f.left) + atoms_of(f.right)


def map_atoms(f: Formula, fn) -> Formula:
    if not isinstance(f, _CONNECTIVES):
        return fn(f)
    if isinstance(f, Not):
        return Not(map_atoms(f.arg, fn))
    return type(f)(map_atoms(f.left, fn), map_atoms(f.right, fn))


def evaluate(f: Formula, atom) -> bool:
    """Propositional evaluation with ``atom`` deciding the predicates."""
    if isinstance(f, Const):
        return f.value
    if not isinstance(f, _CONNECTIVES):
        return atom(f)
    if isinstance(f, Not):
        return not evaluate(f.arg, atom)
    if isinstance(f, And):
        return evaluate(f.left, atom) and evaluate(f.right, atom)
    if isinstance(f, Or):
        return evaluate(f.left, atom) or evaluate(f.right, atom)
    if isinstance(f, Implies):
        return (not evaluate(f.left, atom)) or evaluate(f.right, atom)
    return evaluate(f.left, atom) == evaluate(f.right, atom)
