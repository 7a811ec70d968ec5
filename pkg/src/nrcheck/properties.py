"""Evaluating formulas on states, generating service properties, and
checking evidence well-formedness."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from . import formulas as F
from .knowledge import (
    TermFormula,
    eval_term_formula,
    eval_with,
    leaves,
    map_leaves,
)
from .model import EvidenceSpec, Property, PropertyFile, ProtocolSpec
from .runtime import AknowsFact, GlobalState, RequestFact, System
from .terms import Atom, Hash, Term, Var, variables as _vars


class PropertyError(ValueError):
    """A formula refers to an unknown agent, session or name."""


# ---------------------------------------------------------------------------
# resolution against a scenario


@dataclass(frozen=True)
class _RAknows:
    agent: str
    session: str
    body: TermFormula
    intruder: bool


@dataclass(frozen=True)
class _RDeduce:
    agent: str
    session: str
    role: Optional[str]
    body: TermFormula


@dataclass(frozen=True)
class _RAuth:
    agent: str
    peer: str
    data: Term
    session: Optional[str]


class Resolver:
    """Turns symbolic formulas into ground ones for one system."""

    def __init__(self, system: System):
        self.sys = system
        self.spec = system.spec
        self.agents = set(system.scn.agents())
        self._cache: dict = {}
        self._lock = threading.Lock()

    def session(self, name: Optional[str]) -> str:
        sessions = sorted(self.sys.sessions)
        if name is None:
            if len(sessions) != 1:
                raise PropertyError(f"formula needs an explicit session (scenario has {len(sessions)})")
            return sessions[0]
        if name not in self.sys.sessions:
            raise PropertyError(f"unknown session {name!r}")
        return name

    def agent(self, name: str, session: str) -> str:
        if name in self.spec.roles:
            return self.sys.agent(session, name)
        if name in self.agents:
            return name
        raise PropertyError(f"unknown agent {name!r}")

    def term(self, t: Term, session: str, stack: tuple = ()) -> Term:
        if isinstance(t, Var):
            if t.name in self.spec.roles or self.spec.fresh_decl(t.name) is not None:
                return self.sys.session_binding(session)[t.name]
            lets = self.spec.let_map()
            if t.name in lets:
                return self.term(lets[t.name], session, stack)
            if self.spec.evidence_named(t.name) is not None:
                raise PropertyError(f"evidence {t.name} used inside a term")
            raise PropertyError(f"unknown name {t.name!r}")
        if isinstance(t, Atom):
            if t.origin is None and t.kind == "constant" and t.name in self.agents:
                return Atom("agent", t.name)
            return t
        if t.is_ground:
            return t
        return t.rebuild(self.term(c, session, stack) for c in t.children)

    def body(self, f: TermFormula, session: str, stack: tuple = ()) -> TermFormula:
        def leaf(t: Term):
            if isinstance(t, Var):
                ev = self.spec.evidence_named(t.name)
                if ev is not None:
                    if t.name in stack:
                        raise PropertyError(f"evidence {t.name} refers to itself")
                    return self.body(ev.formula, session, stack + (t.name,))
            return self.term(t, session)

        return map_leaves(f, leaf)

    def resolve(self, f: F.Formula) -> F.Formula:
        with self._lock:
            hit = self._cache.get(f)
        if hit is not None:
            return hit

        def atom(a):
            if isinstance(a, F.Const):
                return a
            if isinstance(a, F.Auth):
                s = self.session(a.session) if a.session or len(self.sys.sessions) == 1 else None
                if s is None:
                    raise PropertyError("auth needs a session when the scenario has several")
                return _RAuth(self.agent(a.agent, s), self.agent(a.peer, s), self.term(a.data, s), a.session and s)
            s = self.session(a.session)
            agent = self.agent(a.agent, s)
            body = self.body(a.body, s)
            if isinstance(a, F.Aknows):
                return _RAknows(agent, s, body, agent in self.sys.dishonest)
            roles = self.sys.sessions[s]
            role = next((r for r, ag in roles.items() if ag == agent), None)
            if role is None and agent not in self.sys.dishonest:
                raise PropertyError(f"agent {agent} plays no role in session {s}")
            return _RDeduce(agent, s, None if agent in self.sys.dishonest else role, body)

        out = F.map_atoms(f, atom)
        with self._lock:
            self._cache[f] = out
        return out


_resolvers: dict = {}
_resolvers_lock = threading.Lock()


def resolver_for(system: System) -> Resolver:
    with _resolvers_lock:
        r = _resolvers.get(id(system))
        if r is None or r.sys is not system:
            r = _resolvers[id(system)] = Resolver(system)
        return r


# ---------------------------------------------------------------------------
# evaluation


def eval_formula(state: GlobalState, f: F.Formula, facts=None) -> bool:
    """Truth of ``f`` at ``state``.

    ``aknows`` of an honest agent is read from the logged annotations; for a
    dishonest agent it is what the intruder can deduce.  ``deduce`` uses the
    agent's knowledge in the session.  ``auth`` fails once a request was
    accepted without a matching earlier witness.
    """
    resolved = resolver_for(state.system).resolve(f)
    fact_set = frozenset(facts) if facts is not None else state.fact_set()

    def atom(a) -> bool:
        if isinstance(a, _RAknows):
            if a.intruder:
                return eval_term_formula(state.intruder, a.body)
            return eval_with(a.body, lambda t: AknowsFact(a.agent, a.session, t) in fact_set)
        if isinstance(a, _RDeduce):
            kb = state.intruder if a.role is None else state.kb(a.session, a.role)
            return eval_term_formula(kb, a.body)
        if isinstance(a, _RAuth):
            for r in state.unwitnessed:
                if (
                    r.agent == a.agent
                    and r.peer == a.peer
                    and r.data is a.data
                    and (a.session is None or r.session == a.session)
                ):
                    return False
            return True
        raise TypeError(a)

    return F.evaluate(resolved, atom)


def resolve_body(system: System, body: TermFormula, session: Optional[str] = None) -> TermFormula:
    """Ground instance of a term formula (evidence names allowed) in a session."""
    r = resolver_for(system)
    return r.body(body, r.session(session))


def auth_holds(facts, agent: str, peer: str, data: Term) -> bool:
    """Non-injective agreement read directly off an ordered fact log."""
    from .runtime import WitnessFact

    seen = set()
    for f in facts:
        if isinstance(f, WitnessFact):
            seen.add((f.agent, f.peer, f.data))
        elif isinstance(f, RequestFact) and f.agent == agent and f.peer == peer and f.data is data:
            if (peer, agent, data) not in seen:
                return False
    return True


# ---------------------------------------------------------------------------
# generators


def _names_only(t: Term) -> Term:
    # in formulas a variable is just a name resolved per session; sorts
    # from the protocol would only keep printed formulas from reparsing equal
    if isinstance(t, Var):
        return Var(t.name)
    if t.is_ground:
        return t
    return t.rebuild(_names_only(c) for c in t.children)


def nr_service_properties(ev: EvidenceSpec, session: str = "s") -> list[Property]:
    """The two implications of a non-repudiation service: evidence held by
    the owner implies the peer knows the message, and evidence the owner
    can deduce was obtained through the protocol."""
    tag = ev.name.lower()
    body = map_leaves(ev.formula, _names_only)
    held = F.Aknows(ev.owner, session, body)
    return [
        Property(f"{tag}_service", "terminal", F.Implies(held, F.Aknows(ev.peer, session, Var(ev.message)))),
        Property(f"{tag}_valid", "terminal", F.Implies(F.Deduce(ev.owner, session, body), held)),
    ]


def fairness_property(nro: EvidenceSpec, nrr: EvidenceSpec, session: str = "s", mode: str = "terminal") -> Property:
    """Each party holds its evidence exactly when the other holds its own.

    In ``terminal`` mode this is a biconditional checked on complete runs;
    in ``invariant`` mode it is the pair of implications checked everywhere.
    """
    a = F.Aknows(nrr.owner, session, Var(nrr.name))
    b = F.Aknows(nro.owner, session, Var(nro.name))
    if mode == "terminal":
        return Property("fairness", "terminal", F.Iff(a, b))
    if mode == "invariant":
        return Property("fairness", "invariant", F.And(F.Implies(a, b), F.Implies(b, a)))
    raise ValueError(f"unknown fairness mode {mode!r}")


def _conj(fs: list) -> F.Formula:
    out = fs[0]
    for f in fs[1:]:
        out = F.And(out, f)
    return out


def builtin_properties(spec: ProtocolSpec, sessions: list[str], fairness_mode: str = "terminal") -> PropertyFile:
    """``fairness``, ``nro``, ``nrr`` and ``nr`` generated from the evidence
    declarations, conjoined over every session of the scenario."""
    props: list[Property] = []
    if not sessions:
        return PropertyFile(
            tuple(Property(n, "terminal", F.Const(True)) for n in ("fairness", "nro", "nrr", "nr"))
        )
    origin = spec.evidence_for("origin")
    receipt = spec.evidence_for("receipt")
    if origin and receipt:
        per = [fairness_property(origin[0], receipt[0], s, fairness_mode) for s in sessions]
        props.append(Property("fairness", per[0].mode, _conj([p.formula for p in per])))
    groups = {}
    for name, evs in (("nro", origin), ("nrr", receipt)):
        fs = [p.formula for ev in evs for s in sessions for p in nr_service_properties(ev, s)]
        if fs:
            groups[name] = fs
            props.append(Property(name, "terminal", _conj(fs)))
    every = [f for fs in groups.values() for f in fs]
    if every:
        props.append(Property("nr", "terminal", _conj(every)))
    return PropertyFile(tuple(props))


# ---------------------------------------------------------------------------
# well-formedness


@dataclass
class WellFormedness:
    ok: bool
    diagnostics: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def _expand(spec: ProtocolSpec, f: TermFormula, stack=()) -> TermFormula:
    lets = spec.let_map()

    def term(t: Term) -> Term:
        if isinstance(t, Var) and t.name in lets:
            return lets[t.name]
        if t.is_ground or isinstance(t, Var):
            return t
        return t.rebuild(term(c) for c in t.children)

    def leaf(t: Term):
        if isinstance(t, Var):
            ev = spec.evidence_named(t.name)
            if ev is not None and t.name not in stack:
                return _expand(spec, ev.formula, stack + (t.name,))
        return term(t)

    return map_leaves(f, leaf)


def _message_depths(t: Term, name: str, hashes: int = 0) -> list[int]:
    """Hash-nesting depth of each occurrence of variable ``name`` in ``t``."""
    if isinstance(t, Var):
        return [hashes] if t.name == name else []
    inner = hashes + 1 if isinstance(t, Hash) else hashes
    return [d for c in t.children for d in _message_depths(c, name, inner)]


def check_well_formed(ev: EvidenceSpec, spec: ProtocolSpec) -> WellFormedness:
    """Syntactic check that the evidence identifies its session and binds
    the protected message.

    (a) some positive leaf contains a session-fresh value other than the
    message itself; (b) some positive leaf contains the message under
    pairing, encryption, signature or at most one hash.
    """
    body = _expand(spec, ev.formula)
    positive = [t for t, pos in leaves(body) if pos]
    fresh = {d.name for d in spec.fresh} - {ev.message}
    result = WellFormedness(True)
    if not any(v.name in fresh for t in positive for v in _vars(t)):
        result.ok = False
        result.diagnostics.append(
            f"{ev.name}: no positive leaf contains a session-fresh value, so the evidence "
            "does not identify its session"
        )
    depths = [d for t in positive for d in _message_depths(t, ev.message)]
    if not depths:
        result.ok = False
        result.diagnostics.append(f"{ev.name}: no positive leaf depends on the message {ev.message}")
    elif min(depths) >= 2:
        result.warnings.append(
            f"{ev.name}: {ev.message} only occurs under nested hashes; injectivity is assumed"
        )
    return result
