"""Dolev-Yao knowledge: analysis to fixpoint, then synthesis by recursion.

A :class:`KnowledgeBase` holds a decomposition-saturated set of ground
terms.  ``can_deduce`` answers whether a term can be composed from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

from .terms import (
    AEnc,
    Atom,
    Inv,
    Pair,
    Pk,
    SEnc,
    Sign,
    Term,
    Var,
    inverse_key,
    iter_subterms,
    render,
    sorted_terms,
)


class KnowledgeBase:
    """Immutable, decomposition-saturated set of ground terms."""

    __slots__ = ("facts", "_memo", "_hash", "_cands", "_by_class")

    def __init__(self, terms: Iterable[Term] = ()):
        self.facts: frozenset[Term] = _saturate(frozenset(), terms)
        self._memo: dict[Term, bool] = {}
        self._hash = hash(self.facts)
        self._cands = None
        self._by_class = None

    @classmethod
    def _from_saturated(cls, facts: frozenset[Term]) -> KnowledgeBase:
        kb = object.__new__(cls)
        kb.facts = facts
        kb._memo = {}
        kb._hash = hash(facts)
        kb._cands = None
        kb._by_class = None
        return kb

    def add(self, *terms: Term) -> KnowledgeBase:
        new = [t for t in terms if t not in self.facts]
        if not new:
            return self
        return KnowledgeBase._from_saturated(_saturate(self.facts, new))

    def can_deduce(self, t: Term) -> bool:
        memo = self._memo
        hit = memo.get(t)
        if hit is None:
            hit = _compose(self.facts, t, memo)
        return hit

    def candidates(self) -> tuple[Term, ...]:
        """Deducible subterms of the facts, in canonical order."""
        if self._cands is None:
            closure: set[Term] = set()
            for f in self.facts:
                closure.update(iter_subterms(f))
            self._cands = tuple(sorted_terms(t for t in closure if self.can_deduce(t)))
        return self._cands

    def facts_of(self, cls: type) -> tuple[Term, ...]:
        """Facts built with constructor ``cls``, in canonical order."""
        if self._by_class is None:
            groups: dict[type, list[Term]] = {}
            for f in self.facts:
                groups.setdefault(type(f), []).append(f)
            self._by_class = {k: tuple(sorted_terms(v)) for k, v in groups.items()}
        return self._by_class.get(cls, ())

    def __contains__(self, t: Term) -> bool:
        return t in self.facts

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.facts == other.facts

    def __hash__(self) -> int:
        return self._hash

    def __le__(self, other: KnowledgeBase) -> bool:
        return self.facts <= other.facts

    def sorted(self) -> list[Term]:
        return sorted_terms(self.facts)

    def __repr__(self) -> str:
        return "KnowledgeBase{" + ", ".join(render(t) for t in self.sorted()) + "}"


def _compose(facts: frozenset, t: Term, memo: dict) -> bool:
    if t in facts:
        ok = True
    elif isinstance(t, (Atom, Inv, Var)):
        ok = False
    elif isinstance(t, Pk):
        ok = _compose(facts, t.agent, memo)
    else:
        ok = all(_compose(facts, c, memo) for c in t.children)
    memo[t] = ok
    return ok


def _saturate(base: frozenset, new: Iterable[Term]) -> frozenset:
    facts = set(base)
    pending = [t for t in base if isinstance(t, (SEnc, AEnc)) and t.body not in base]
    work = list(new)
    while True:
        while work:
            t = work.pop()
            if t in facts:
                continue
            if not t.is_ground:
                raise ValueError(f"knowledge must be ground: {render(t)}")
            facts.add(t)
            if isinstance(t, Pair):
                work.append(t.left)
                work.append(t.right)
            elif isinstance(t, Sign):
                work.append(t.body)
            elif isinstance(t, (SEnc, AEnc)):
                pending.append(t)
        frozen = frozenset(facts)
        memo: dict = {}
        still = []
        for enc in pending:
            if enc.body in facts:
                continue
            if _compose(frozen, inverse_key(enc.key), memo):
                work.append(enc.body)
            else:
                still.append(enc)
        pending = still
        if not work:
            return frozen


def add(kb: KnowledgeBase, t: Term) -> KnowledgeBase:
    return kb.add(t)


def can_deduce(kb: KnowledgeBase, t: Term) -> bool:
    return kb.can_deduce(t)


# ---------------------------------------------------------------------------
# term formulas


@dataclass(frozen=True)
class TAnd:
    left: "TermFormula"
    right: "TermFormula"


@dataclass(frozen=True)
class TOr:
    left: "TermFormula"
    right: "TermFormula"


@dataclass(frozen=True)
class TNot:
    arg: "TermFormula"


TermFormula = Union[Term, TAnd, TOr, TNot]


def conj(*parts: TermFormula) -> TermFormula:
    out = parts[0]
    for p in parts[1:]:
        out = TAnd(out, p)
    return out


def disj(*parts: TermFormula) -> TermFormula:
    out = parts[0]
    for p in parts[1:]:
        out = TOr(out, p)
    return out


def eval_term_formula(kb: KnowledgeBase, f: TermFormula) -> bool:
    """Homomorphic evaluation; a leaf holds iff ``kb`` can deduce it."""
    return eval_with(f, kb.can_deduce)


def eval_with(f: TermFormula, leaf) -> bool:
    if isinstance(f, TAnd):
        return eval_with(f.left, leaf) and eval_with(f.right, leaf)
    if isinstance(f, TOr):
        return eval_with(f.left, leaf) or eval_with(f.right, leaf)
    if isinstance(f, TNot):
        return not eval_with(f.arg, leaf)
    return leaf(f)


def map_leaves(f: TermFormula, fn) -> TermFormula:
    if isinstance(f, TAnd):
        return TAnd(map_leaves(f.left, fn), map_leaves(f.right, fn))
    if isinstance(f, TOr):
        return TOr(map_leaves(f.left, fn), map_leaves(f.right, fn))
    if isinstance(f, TNot):
        return TNot(map_leaves(f.arg, fn))
    return fn(f)


def leaves(f: TermFormula, positive: bool = True) -> list[tuple[Term, bool]]:
    """All leaves with their polarity (True when under an even number of negations)."""
    if isinstance(f, (TAnd, TOr)):
        return leaves(f.left, positive) + leaves(f.right, positive)
    if isinstance(f, TNot):
        return leaves(f.arg, not positive)
    return [(f, positive)]


def render_term_formula(f: TermFormula, parent: str = "") -> str:
    if isinstance(f, TAnd):
        s = f"{render_term_formula(f.left, 'and')} & {render_term_formula(f.right, 'and')}"
        return s if parent in ("", "and") else f"({s})"
    if isinstance(f, TOr):
        s = f"{render_term_formula(f.left, 'or')} | {render_term_formula(f.right, 'or')}"
        return s if parent in ("", "or") else f"({s})"
    if isinstance(f, TNot):
        return "~" + render_term_formula(f.arg, "not")
    return render(f)
