"""Static protocol, scenario and bound descriptions produced by the DSL."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .terms import Atom, Term

SERVICES = ("origin", "receipt", "submission", "delivery")
CHANNEL_KINDS = ("dy", "secure")
STORE_PREDICATES = ("aborted", "resolved")


# ---------------------------------------------------------------------------
# role script steps


@dataclass(frozen=True)
class Send:
    peer: str
    template: Term
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RecvCase:
    pattern: Term
    where: tuple[tuple[str, Term], ...] = ()
    body: tuple["Step", ...] = ()


@dataclass(frozen=True)
class Recv:
    peer: str
    cases: tuple[RecvCase, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Fresh:
    names: tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Annotate:
    """``aknows`` annotation: the executing agent knows each term."""

    terms: tuple[Term, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Emit:
    """Authentication event: ``witness`` (claim) or ``request`` (acceptance)."""

    event: str
    peer: str
    data: Term
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class StoreUpdate:
    predicate: str
    term: Term
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Branch:
    predicate: str
    term: Term
    then: tuple["Step", ...]
    orelse: tuple["Step", ...] = ()
    line: int = field(default=0, compare=False)


Step = Union[Send, Recv, Fresh, Annotate, Emit, StoreUpdate, Branch]


@dataclass(frozen=True)
class StepGroup:
    """The statements a role performs for one numbered protocol message."""

    number: int
    body: tuple[Step, ...]


@dataclass(frozen=True)
class Entry:
    """Sub-protocol entry window: after step ``after`` of ``parent`` completed,
    and before step ``until`` of it was executed."""

    parent: str
    after: int
    until: int


@dataclass(frozen=True)
class Script:
    role: str
    sub: str
    steps: tuple[StepGroup, ...]
    entry: Optional[Entry] = None
    for_role: Optional[str] = None

    @property
    def thread(self) -> str:
        return self.sub if self.for_role is None else f"{self.sub}[{self.for_role}]"

    def step_numbers(self) -> list[int]:
        return [g.number for g in self.steps]


# ---------------------------------------------------------------------------
# declarations


@dataclass(frozen=True)
class FreshDecl:
    name: str
    kind: str
    owner: str


@dataclass(frozen=True)
class EvidenceSpec:
    """Evidence of a non-repudiation service, as a term formula over protocol names."""

    name: str
    service: str
    owner: str
    peer: str
    message: str
    formula: object  # TermFormula over Var placeholders


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    roles: tuple[str, ...]
    store_role: Optional[str] = None
    channels: tuple[tuple[tuple[str, str], str], ...] = ()
    fresh: tuple[FreshDecl, ...] = ()
    sorts: tuple[tuple[str, str], ...] = ()
    constants: tuple[tuple[str, str], ...] = ()
    lets: tuple[tuple[str, Term], ...] = ()
    evidence: tuple[EvidenceSpec, ...] = ()
    subprotocols: tuple[str, ...] = ()
    scripts: tuple[Script, ...] = ()

    def fresh_decl(self, name: str) -> Optional[FreshDecl]:
        for d in self.fresh:
            if d.name == name:
                return d
        return None

    def sort_of(self, name: str) -> Optional[str]:
        if name in self.roles:
            return "agent"
        d = self.fresh_decl(name)
        if d is not None:
            return d.kind
        return dict(self.sorts).get(name)

    def let_map(self) -> dict[str, Term]:
        return dict(self.lets)

    def evidence_named(self, name: str) -> Optional[EvidenceSpec]:
        for ev in self.evidence:
            if ev.name == name:
                return ev
        return None

    def evidence_for(self, service: str) -> list[EvidenceSpec]:
        return [ev for ev in self.evidence if ev.service == service]

    def channel_kind(self, r1: str, r2: str) -> str:
        return dict(self.channels).get(tuple(sorted((r1, r2))), "dy")

    def scripts_of(self, role: str) -> list[Script]:
        return [s for s in self.scripts if s.role == role]

    def message_steps(self) -> dict[str, int]:
        """Number of distinct numbered messages per sub-protocol."""
        seen: dict[str, set[int]] = {}
        for s in self.scripts:
            seen.setdefault(s.sub, set()).update(s.step_numbers())
        return {sub: len(nums) for sub, nums in seen.items()}

    def constant_atoms(self) -> list[Atom]:
        """Every constant (label) occurring in the protocol's messages."""
        from .terms import iter_subterms

        out: set[Atom] = set()

        def scan(steps):
            for st in steps:
                for t in _step_terms(st):
                    out.update(
                        a
                        for a in iter_subterms(t)
                        if isinstance(a, Atom) and a.origin is None and a.kind != "agent"
                    )
                for sub in _step_children(st):
                    scan(sub)

        for s in self.scripts:
            for g in s.steps:
                scan(g.body)
        for _, t in self.lets:
            out.update(
                a for a in iter_subterms(t) if isinstance(a, Atom) and a.origin is None and a.kind != "agent"
            )
        return sorted(out)


def _step_terms(st) -> list[Term]:
    if isinstance(st, Send):
        return [st.template]
    if isinstance(st, Recv):
        return [c.pattern for c in st.cases] + [p for c in st.cases for _, p in c.where]
    if isinstance(st, Annotate):
        return list(st.terms)
    if isinstance(st, Emit):
        return [st.data]
    if isinstance(st, (StoreUpdate, Branch)):
        return [st.term]
    return []


def _step_children(st) -> list[tuple]:
    if isinstance(st, Recv):
        return [c.body for c in st.cases]
    if isinstance(st, Branch):
        return [st.then, st.orelse]
    return []


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Bounds:
    max_states: int = 1_000_000
    max_depth: int = 100
    intruder_fresh_budget: int = 1

    def __post_init__(self):
        if self.max_states <= 0 or self.max_depth <= 0 or self.intruder_fresh_budget < 0:
            raise ValueError(f"bounds must be positive: {self}")


@dataclass(frozen=True)
class Session:
    name: str
    roles: tuple[tuple[str, str], ...]  # role -> agent

    def agent(self, role: str) -> str:
        return dict(self.roles)[role]

    def role_of(self, agent: str) -> list[str]:
        return [r for r, a in self.roles if a == agent]


@dataclass(frozen=True)
class Scenario:
    name: str
    protocol: str
    sessions: tuple[Session, ...] = ()
    dishonest: frozenset[str] = frozenset()
    channels: tuple[tuple[tuple[str, str], str], ...] = ()
    bounds: Bounds = Bounds()

    def agents(self) -> list[str]:
        names = {a for s in self.sessions for _, a in s.roles} | set(self.dishonest)
        return sorted(names)

    def session(self, name: str) -> Session:
        for s in self.sessions:
            if s.name == name:
                return s
        raise KeyError(name)

    def with_bounds(self, **changes) -> Scenario:
        from dataclasses import replace

        return replace(self, bounds=replace(self.bounds, **changes))


@dataclass(frozen=True)
class Property:
    name: str
    mode: str
    formula: object  # formulas.Formula

    def __post_init__(self):
        if self.mode not in ("invariant", "terminal"):
            raise ValueError(f"unknown property mode {self.mode!r}")


@dataclass(frozen=True)
class PropertyFile:
    properties: tuple[Property, ...] = ()

    def get(self, name: str) -> Property:
        for p in self.properties:
            if p.name == name:
                return p
        raise KeyError(name)

    def names(self) -> list[str]:
        return [p.name for p in self.properties]
