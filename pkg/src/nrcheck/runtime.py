"""Operational semantics of protocol sessions under a Dolev-Yao intruder.

Each honest (session, role) pair has one knowledge base and one or more
threads.  A thread of an initiating script may switch into a sub-protocol
whose entry window is open; the store role runs every sub-protocol it
serves as an independent one-shot thread.

A transition is a macro step: a thread performs one blocking action (its
first run, a receive, or a sub-protocol entry) and then every following
non-blocking instruction up to the next receive.  TTP store checks and
updates therefore happen atomically with the request that triggers them.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

from .dsl import check_scenario
from .knowledge import KnowledgeBase
from .model import (
    Annotate,
    Branch,
    Emit,
    Fresh,
    ProtocolSpec,
    Recv,
    Scenario,
    Script,
    Send,
    StoreUpdate,
)
from .terms import (
    INTRUDER_ORIGIN,
    Atom,
    Inv,
    Pair,
    Pk,
    SortError,
    Term,
    TermError,
    Var,
    iter_subterms,
    match,
    render,
    sorted_terms,
    substitute,
    term_key,
)


class ModelError(RuntimeError):
    """The protocol model asked an agent to do something impossible."""


class AnnotationUnsound(ModelError):
    """An ``annotate`` fired on a term the agent cannot deduce."""


class NotEnabled(ModelError):
    """A transition was applied in a state where it is not enabled."""


# ---------------------------------------------------------------------------
# facts


@dataclass(frozen=True)
class AknowsFact:
    agent: str
    session: str
    term: Term

    def __str__(self) -> str:
        return f"aknows({self.agent},{self.session},{render(self.term)})"


@dataclass(frozen=True)
class WitnessFact:
    agent: str
    peer: str
    data: Term
    session: str = ""

    def __str__(self) -> str:
        return f"witness({self.agent},{self.peer},{render(self.data)})"


@dataclass(frozen=True)
class RequestFact:
    agent: str
    peer: str
    data: Term
    session: str = ""

    def __str__(self) -> str:
        return f"request({self.agent},{self.peer},{render(self.data)})"


Fact = object  # AknowsFact | WitnessFact | RequestFact


# ---------------------------------------------------------------------------
# state


class ThreadState(NamedTuple):
    session: str
    role: str
    thread: str
    script: str  # sub-protocol currently executed
    pc: int
    binding: tuple  # sorted (name, term) pairs


@dataclass(frozen=True)
class Transition:
    """One macro step of one thread.

    ``action`` is ``start`` (first run up to the first receive), ``recv``
    (consume ``message``) or ``enter`` (switch into sub-protocol ``entry``).
    """

    session: str
    role: str
    thread: str
    action: str
    message: Optional[Term] = None
    entry: Optional[str] = None

    kind = "honest-step"

    def sort_key(self) -> tuple:
        return (
            self.session,
            self.role,
            self.thread,
            _ACTION_ORDER[self.action],
            term_key(self.message) if self.message is not None else (),
            self.entry or "",
        )

    def describe(self) -> str:
        who = f"{self.role}@{self.session}/{self.thread}"
        if self.action == "recv":
            return f"{who} receives {render(self.message)}"
        if self.action == "enter":
            return f"{who} enters {self.entry}"
        return f"{who} starts"


_ACTION_ORDER = {"start": 0, "recv": 1, "enter": 2}


@dataclass(frozen=True, eq=False)
class GlobalState:
    threads: tuple[ThreadState, ...]
    kbs: tuple[tuple[tuple[str, str], KnowledgeBase], ...]
    intruder: KnowledgeBase
    store: frozenset  # of (predicate, Term)
    network: tuple  # sorted ((session, sender, receiver), (Term, ...)) of non-empty queues
    facts: tuple  # ordered fact log
    unwitnessed: frozenset  # requests not preceded by a matching witness
    fresh_used: int
    system: "System" = field(repr=False, compare=False)
    _key: list = field(default_factory=list, repr=False, compare=False)

    def key(self) -> tuple:
        """Canonical identity of the state (the fact log is taken as a set)."""
        if not self._key:
            self._key.append(
                (
                    self.threads,
                    self.kbs,
                    self.intruder,
                    self.store,
                    self.network,
                    frozenset(self.facts),
                    self.unwitnessed,
                    self.fresh_used,
                )
            )
        return self._key[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, GlobalState) and self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    # -- accessors ------------------------------------------------------
    def kb(self, session: str, role: str) -> KnowledgeBase:
        for k, kb in self.kbs:
            if k == (session, role):
                return kb
        raise KeyError((session, role))

    def thread(self, session: str, role: str, thread: str) -> ThreadState:
        for th in self.threads:
            if th.session == session and th.role == role and th.thread == thread:
                return th
        raise KeyError((session, role, thread))

    def fact_set(self) -> frozenset:
        return self.key()[5]

    @property
    def ttp_store(self) -> dict[str, frozenset]:
        out: dict[str, set] = {"aborted": set(), "resolved": set()}
        for pred, t in self.store:
            out.setdefault(pred, set()).add(t)
        return {k: frozenset(v) for k, v in out.items()}

    def canonical_text(self) -> str:
        """Deterministic rendering of every component, sets sorted."""
        lines = []
        for th in self.threads:
            b = ",".join(f"{n}={_crender(t)}" for n, t in th.binding)
            lines.append(f"T {th.session} {th.role} {th.thread} {th.script} {th.pc} [{b}]")
        for (s, r), kb in self.kbs:
            lines.append(f"K {s} {r} " + ",".join(_crender(t) for t in kb.sorted()))
        lines.append("I " + ",".join(_crender(t) for t in self.intruder.sorted()))
        for pred, t in sorted(self.store, key=lambda e: (e[0], term_key(e[1]))):
            lines.append(f"S {pred} {_crender(t)}")
        for (s, a, b), msgs in self.network:
            lines.append(f"N {s} {a} {b} " + ",".join(_crender(t) for t in msgs))
        for f in sorted(self.fact_set(), key=_fact_key):
            lines.append("F " + _fact_text(f))
        for f in sorted(self.unwitnessed, key=_fact_key):
            lines.append("U " + _fact_text(f))
        lines.append(f"C {self.fresh_used}")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.blake2b(self.canonical_text().encode(), digest_size=16).hexdigest()


def _crender(t: Term) -> str:
    # full origin and kind, so distinct atoms never render alike
    return repr(term_key(t))


def _fact_key(f) -> tuple:
    if isinstance(f, AknowsFact):
        return (0, f.agent, f.session, term_key(f.term))
    return (1 if isinstance(f, WitnessFact) else 2, f.agent, f.peer, term_key(f.data), f.session)


def _fact_text(f) -> str:
    if isinstance(f, AknowsFact):
        return f"aknows {f.agent} {f.session} {_crender(f.term)}"
    kind = "witness" if isinstance(f, WitnessFact) else "request"
    return f"{kind} {f.agent} {f.peer} {f.session} {_crender(f.data)}"


# ---------------------------------------------------------------------------
# compiled scripts


@dataclass
class Compiled:
    script: Script
    code: tuple
    group_start: dict[int, int]
    group_end: dict[int, int]

    def rests_at(self, pc: int) -> bool:
        return pc >= len(self.code) or self.code[pc][0] == "recv"


def compile_script(script: Script) -> Compiled:
    code: list = []
    starts, ends = {}, {}

    def emit(steps) -> None:
        for st in steps:
            if isinstance(st, Send):
                code.append(("send", st.peer, st.template, st.line))
            elif isinstance(st, Fresh):
                code.append(("fresh", st.names, st.line))
            elif isinstance(st, Annotate):
                code.append(("annotate", st.terms, st.line))
            elif isinstance(st, Emit):
                code.append(("emit", st.event, st.peer, st.data, st.line))
            elif isinstance(st, StoreUpdate):
                code.append(("insert", st.predicate, st.term, st.line))
            elif isinstance(st, Recv):
                at = len(code)
                code.append(None)
                targets, jumps = [], []
                for i, case in enumerate(st.cases):
                    targets.append(len(code))
                    emit(case.body)
                    if i < len(st.cases) - 1:
                        jumps.append(len(code))
                        code.append(None)
                end = len(code)
                for j in jumps:
                    code[j] = ("jump", end)
                cases = tuple((c.pattern, c.where, t) for c, t in zip(st.cases, targets))
                code[at] = ("recv", st.peer, cases, st.line)
            elif isinstance(st, Branch):
                at = len(code)
                code.append(None)
                emit(st.then)
                jump = len(code)
                code.append(None)
                else_pc = len(code)
                emit(st.orelse)
                code[jump] = ("jump", len(code))
                code[at] = ("branch", st.predicate, st.term, else_pc, st.line)

    for g in script.steps:
        starts[g.number] = len(code)
        emit(g.body)
        ends[g.number] = len(code)
    return Compiled(script, tuple(code), starts, ends)


# ---------------------------------------------------------------------------
# the system


class System:
    """A protocol instantiated by a scenario: compiled code, initial
    knowledge, channel kinds and caches shared by every state."""

    def __init__(self, spec: ProtocolSpec, scn: Scenario):
        check_scenario(scn, spec)
        self.spec = spec
        self.scn = scn
        self.fresh_budget = scn.bounds.intruder_fresh_budget
        self.compiled: dict[tuple[str, str], Compiled] = {}
        self.entries: dict[str, list[tuple[str, str, int, int]]] = {}
        for s in spec.scripts:
            self.compiled[(s.role, s.sub if s.entry else s.thread)] = compile_script(s)
        for s in spec.scripts:
            if s.entry is not None:
                parent = self.compiled[(s.role, s.entry.parent)]
                lo = parent.group_end[s.entry.after]
                hi = parent.group_start[s.entry.until]
                self.entries.setdefault(s.role, []).append((s.sub, s.entry.parent, lo, hi))
        self.sessions = {s.name: dict(s.roles) for s in scn.sessions}
        self.dishonest = frozenset(scn.dishonest)
        overrides = dict(scn.channels)
        self._channel = {}
        for r1 in spec.roles:
            for r2 in spec.roles:
                pair = tuple(sorted((r1, r2)))
                self._channel[(r1, r2)] = overrides.get(pair, spec.channel_kind(r1, r2))
        self.constants = spec.constant_atoms()
        self._explicit_fresh = {r: self._fresh_steps(r) for r in spec.roles}
        self._enum_cache: dict = {}
        self._cache_lock = threading.Lock()
        self._initial: Optional[GlobalState] = None

    def _fresh_steps(self, role: str) -> set[str]:
        names: set[str] = set()
        for s in self.spec.scripts_of(role):
            for c in [self.compiled[(role, s.sub if s.entry else s.thread)]]:
                for ins in c.code:
                    if ins and ins[0] == "fresh":
                        names.update(ins[1])
        return names

    # -- naming -------------------------------------------------------------
    def agent(self, session: str, role: str) -> str:
        return self.sessions[session][role]

    def is_honest(self, session: str, role: str) -> bool:
        return self.agent(session, role) not in self.dishonest

    def channel(self, session: str, sender: str, receiver: str) -> str:
        kind = self._channel[(sender, receiver)]
        if kind == "secure" and not (self.is_honest(session, sender) and self.is_honest(session, receiver)):
            # a compromised endpoint hands the channel to the intruder
            return "dy"
        return kind

    def fresh_atom(self, session: str, name: str) -> Atom:
        d = self.spec.fresh_decl(name)
        if d is None:
            raise KeyError(name)
        return Atom(d.kind, name, (session, d.owner, name))

    def session_binding(self, session: str) -> dict[str, Term]:
        """Every role and fresh name of the protocol, as seen in ``session``."""
        b: dict[str, Term] = {r: Atom("agent", a) for r, a in self.sessions[session].items()}
        for d in self.spec.fresh:
            b[d.name] = self.fresh_atom(session, d.name)
        return b

    def code_of(self, th: ThreadState) -> Compiled:
        return self.compiled[(th.role, th.script)]

    # -- initial state ------------------------------------------------------
    def initial_state(self) -> GlobalState:
        if self._initial is not None:
            return self._initial
        agents = self.scn.agents()
        agent_atoms = [Atom("agent", a) for a in agents]
        pks = [Pk(a) for a in agent_atoms]
        threads, kbs = [], []
        for sname, roles in sorted(self.sessions.items()):
            peers = [Atom("agent", a) for a in roles.values()]
            for role in self.spec.roles:
                agent = roles[role]
                if agent in self.dishonest:
                    continue
                me = Atom("agent", agent)
                binding = {r: Atom("agent", a) for r, a in roles.items()}
                for d in self.spec.fresh:
                    if d.owner == role and d.name not in self._explicit_fresh[role]:
                        binding[d.name] = self.fresh_atom(sname, d.name)
                seed = [me, Inv(Pk(me)), *pks, *peers, *self.constants]
                seed += [t for n, t in binding.items() if n not in roles]
                kbs.append(((sname, role), KnowledgeBase(seed)))
                items = tuple(sorted(binding.items()))
                for s in self.spec.scripts_of(role):
                    if s.entry is None:
                        threads.append(ThreadState(sname, role, s.thread, s.thread, 0, items))
        seed = [*agent_atoms, *pks, *self.constants]
        seed += [Inv(Pk(Atom("agent", d))) for d in sorted(self.dishonest)]
        state = GlobalState(
            threads=tuple(sorted(threads)),
            kbs=tuple(sorted(kbs, key=lambda e: e[0])),
            intruder=KnowledgeBase(seed),
            store=frozenset(),
            network=(),
            facts=(),
            unwitnessed=frozenset(),
            fresh_used=0,
            system=self,
        )
        self._initial = state
        return state

    # -- enabled transitions --------------------------------------------------
    def enabled(self, state: GlobalState) -> list[Transition]:
        out: list[Transition] = []
        queues = dict(state.network)
        for th in state.threads:
            comp = self.code_of(th)
            if not comp.rests_at(th.pc):
                out.append(Transition(th.session, th.role, th.thread, "start"))
                continue
            if th.pc < len(comp.code):
                ins = comp.code[th.pc]
                peer = ins[1]
                if self.channel(th.session, peer, th.role) == "secure":
                    q = queues.get((th.session, peer, th.role))
                    if q and self._match_cases(ins[2], q[0], dict(th.binding)) is not None:
                        out.append(Transition(th.session, th.role, th.thread, "recv", q[0]))
                else:
                    for m in self._dy_messages(th, ins, state):
                        out.append(Transition(th.session, th.role, th.thread, "recv", m))
            for sub, parent, lo, hi in self.entries.get(th.role, ()):
                if th.script == parent and lo <= th.pc <= hi:
                    out.append(Transition(th.session, th.role, th.thread, "enter", entry=sub))
        out.sort(key=Transition.sort_key)
        return out

    def _match_cases(self, cases, msg: Term, binding: dict):
        for i, (pattern, where, target) in enumerate(cases):
            b = match(pattern, msg, binding)
            if b is None:
                continue
            for name, p in where:
                if name not in b:
                    b = None
                    break
                b = match(p, b[name], b)
                if b is None:
                    break
            if b is not None:
                return i, b, target
        return None

    def _dy_messages(self, th: ThreadState, ins, state: GlobalState) -> tuple[Term, ...]:
        key = (th.role, th.script, th.pc, th.binding, state.intruder, state.fresh_used)
        hit = self._enum_cache.get(key)
        if hit is not None:
            return hit
        binding = dict(th.binding)
        left = max(0, self.fresh_budget - state.fresh_used)
        found: set[Term] = set()
        for pattern, _, _ in ins[2]:
            p = substitute(pattern, binding)
            for b, _minted in _instances(p, {}, state.intruder, left, (), state.fresh_used, {}):
                try:
                    m = substitute(p, b)
                except TermError:
                    continue
                if m.is_ground:
                    found.add(m)
        msgs = tuple(
            m for m in sorted_terms(found) if self._match_cases(ins[2], m, binding) is not None
        )
        with self._cache_lock:
            self._enum_cache[key] = msgs
        return msgs

    # -- applying transitions ---------------------------------------------------
    def step(self, state: GlobalState, t: Transition, effects: Optional[list] = None) -> GlobalState:
        ex = _Exec(self, state, effects)
        return ex.run(t)


# ---------------------------------------------------------------------------
# intruder message enumeration


def _mint(kind: str, index: int) -> Atom:
    return Atom(kind, f"{kind}{index}", (INTRUDER_ORIGIN,))


def _instances(p: Term, b: dict, kb: KnowledgeBase, left: int, minted: tuple, used: int, kbs: dict) -> Iterator:
    """Bindings ``b`` under which ``p`` becomes a message the intruder can
    build, together with the intruder-fresh atoms that message needs."""
    try:
        t = substitute(p, b)
    except TermError:  # e.g. a public key bound under a symmetric cipher
        return
    if t.is_ground:
        ext = kb
        if minted:
            ext = kbs.get(minted)
            if ext is None:
                ext = kbs[minted] = kb.add(*minted)
        if ext.can_deduce(t):
            yield b, minted
        return
    if isinstance(t, Var):
        for c in kb.candidates():
            if t.accepts(c):
                yield {**b, t.name: c}, minted
        for a in minted:
            if t.accepts(a):
                yield {**b, t.name: a}, minted
        if len(minted) < left:
            a = _mint(t.sort or "nonce", used + len(minted) + 1)
            if t.accepts(a):
                yield {**b, t.name: a}, minted + (a,)
        return
    if isinstance(t, Pair):
        first, second = t.left, t.right
        if isinstance(first, Var) and not isinstance(second, Var):
            first, second = second, first
        for b1, m1 in _instances(first, b, kb, left, minted, used, kbs):
            yield from _instances(second, b1, kb, left, m1, used, kbs)
        return
    # an already known term of the same shape
    for f in kb.facts_of(type(t)):
        r = match(t, f, b)
        if r is not None:
            yield r, minted
    if isinstance(t, Inv):
        return
    # or a fresh composition; ground arguments first, for early pruning
    children = sorted(t.children, key=lambda c: not c.is_ground)
    if any(c.is_ground and not kb.can_deduce(c) for c in children):
        return

    def compose(i: int, b1: dict, m1: tuple):
        if i == len(children):
            yield b1, m1
            return
        for b2, m2 in _instances(children[i], b1, kb, left, m1, used, kbs):
            yield from compose(i + 1, b2, m2)

    yield from compose(0, b, minted)


# ---------------------------------------------------------------------------
# execution


class _Exec:
    def __init__(self, system: System, state: GlobalState, effects: Optional[list]):
        self.sys = system
        self.state = state
        self.effects = effects
        self.intruder = state.intruder
        self.store = set(state.store)
        self.network = {k: list(v) for k, v in state.network}
        self.facts = list(state.facts)
        self.fact_set = set(state.fact_set())
        self.unwitnessed = set(state.unwitnessed)
        self.fresh_used = state.fresh_used
        self.kbs = dict(state.kbs)

    def note(self, *effect) -> None:
        if self.effects is not None:
            self.effects.append(effect)

    def run(self, t: Transition) -> GlobalState:
        sys = self.sys
        try:
            th = self.state.thread(t.session, t.role, t.thread)
        except KeyError:
            raise NotEnabled(f"no thread {t.role}/{t.thread} in session {t.session}") from None
        comp = sys.code_of(th)
        binding = dict(th.binding)
        kbkey = (th.session, th.role)
        kb = self.kbs[kbkey]
        pc, script = th.pc, th.script
        agent = sys.agent(th.session, th.role)

        if t.action == "start":
            if comp.rests_at(pc):
                raise NotEnabled(f"{t.describe()}: thread is waiting")
        elif t.action == "enter":
            ok = any(
                sub == t.entry and parent == script and lo <= pc <= hi
                for sub, parent, lo, hi in sys.entries.get(th.role, ())
            )
            if not ok or not comp.rests_at(pc):
                raise NotEnabled(f"{t.describe()}: entry window closed")
            script, pc = t.entry, 0
            comp = sys.compiled[(th.role, script)]
            self.note("enter", agent, th.role, t.entry)
        elif t.action == "recv":
            if pc >= len(comp.code) or comp.code[pc][0] != "recv" or t.message is None:
                raise NotEnabled(f"{t.describe()}: thread is not receiving")
            ins = comp.code[pc]
            peer = ins[1]
            msg = t.message
            if sys.channel(th.session, peer, th.role) == "secure":
                q = self.network.get((th.session, peer, th.role))
                if not q or q[0] is not msg:
                    raise NotEnabled(f"{t.describe()}: message not at the head of the channel")
                q.pop(0)
                if not q:
                    del self.network[(th.session, peer, th.role)]
                source = "secure"
            else:
                self._admit_intruder_message(t, msg)
                source = "dy"
            hit = sys._match_cases(ins[2], msg, binding)
            if hit is None:
                raise NotEnabled(f"{t.describe()}: message does not match")
            _, newb, target = hit
            kb = kb.add(msg)
            for name, value in newb.items():
                if name not in binding and not kb.can_deduce(value):
                    raise ModelError(
                        f"{agent} cannot read {name} = {render(value)} from {render(msg)} "
                        f"({th.role}/{th.script}, line {ins[3]})"
                    )
            binding = newb
            pc = target
            self.note("recv", agent, th.role, sys.agent(th.session, peer), peer, msg, source)
        else:
            raise NotEnabled(f"unknown action {t.action!r}")

        code = comp.code
        while pc < len(code) and code[pc][0] != "recv":
            ins = code[pc]
            op = ins[0]
            pc += 1
            if op == "send":
                term = self._ground(ins[2], binding, th, ins[3], "send")
                if not kb.can_deduce(term):
                    raise ModelError(
                        f"{agent} cannot compose {render(term)} ({th.role}/{script}, line {ins[3]})"
                    )
                peer = ins[1]
                kind = sys.channel(th.session, th.role, peer)
                if kind == "secure":
                    self.network.setdefault((th.session, th.role, peer), []).append(term)
                else:
                    self.intruder = self.intruder.add(term)
                self.note("send", agent, th.role, sys.agent(th.session, peer), peer, term, kind)
            elif op == "fresh":
                atoms = [sys.fresh_atom(th.session, n) for n in ins[1]]
                binding.update(zip(ins[1], atoms))
                kb = kb.add(*atoms)
                self.note("fresh", agent, th.role, tuple(atoms))
            elif op == "annotate":
                for tmpl in ins[1]:
                    try:
                        term = substitute(tmpl, binding)
                    except SortError as exc:
                        raise AnnotationUnsound(str(exc)) from exc
                    if not term.is_ground or not kb.can_deduce(term):
                        raise AnnotationUnsound(
                            f"{agent} cannot deduce annotated {render(term)} "
                            f"({th.role}/{script}, line {ins[2]})"
                        )
                    self._log(AknowsFact(agent, th.session, term))
            elif op == "emit":
                data = self._ground(ins[3], binding, th, ins[4], ins[1])
                peer_agent = sys.agent(th.session, ins[2])
                if ins[1] == "witness":
                    self._log(WitnessFact(agent, peer_agent, data, th.session))
                else:
                    fact = RequestFact(agent, peer_agent, data, th.session)
                    witnessed = any(
                        isinstance(f, WitnessFact) and f.agent == peer_agent and f.peer == agent and f.data is data
                        for f in self.fact_set
                    )
                    self._log(fact)
                    if not witnessed:
                        self.unwitnessed.add(fact)
            elif op == "insert":
                term = self._ground(ins[2], binding, th, ins[3], "insert")
                self.store.add((ins[1], term))
                self.note("insert", agent, ins[1], term)
            elif op == "branch":
                term = self._ground(ins[2], binding, th, ins[4], "branch")
                taken = (ins[1], term) in self.store
                self.note("branch", agent, ins[1], term, taken)
                if not taken:
                    pc = ins[3]
            elif op == "jump":
                pc = ins[1]

        self.kbs[kbkey] = kb
        new_th = ThreadState(th.session, th.role, th.thread, script, pc, tuple(sorted(binding.items())))
        threads = tuple(new_th if x is th else x for x in self.state.threads)
        return GlobalState(
            threads=threads,
            kbs=tuple(sorted(self.kbs.items(), key=lambda e: e[0])),
            intruder=self.intruder,
            store=frozenset(self.store),
            network=tuple(sorted((k, tuple(v)) for k, v in self.network.items() if v)),
            facts=tuple(self.facts),
            unwitnessed=frozenset(self.unwitnessed),
            fresh_used=self.fresh_used,
            system=self.sys,
        )

    def _admit_intruder_message(self, t: Transition, msg: Term) -> None:
        new = sorted_terms(
            {
                a
                for a in iter_subterms(msg)
                if isinstance(a, Atom) and a.origin == (INTRUDER_ORIGIN,) and a not in self.intruder
            }
        )
        for i, a in enumerate(new):
            expected = _mint(a.kind, self.fresh_used + i + 1)
            if a is not expected:
                raise NotEnabled(f"{t.describe()}: unexpected intruder atom {render(a)}")
        if self.fresh_used + len(new) > self.sys.fresh_budget:
            raise NotEnabled(f"{t.describe()}: intruder fresh budget exhausted")
        if new:
            self.intruder = self.intruder.add(*new)
            self.fresh_used += len(new)
            self.note("intruder-fresh", tuple(new))
        if not self.intruder.can_deduce(msg):
            raise NotEnabled(f"{t.describe()}: the intruder cannot build this message")

    def _ground(self, tmpl: Term, binding: dict, th: ThreadState, line: int, what: str) -> Term:
        try:
            term = substitute(tmpl, binding)
        except SortError as exc:
            raise ModelError(str(exc)) from exc
        if not term.is_ground:
            raise ModelError(f"unbound variable in {what} at {th.role}/{th.script} line {line}: {render(term)}")
        return term

    def _log(self, fact) -> None:
        if fact not in self.fact_set:
            self.fact_set.add(fact)
            self.facts.append(fact)
            self.note("fact", fact)


# ---------------------------------------------------------------------------
# functional interface


_systems: dict = {}
_systems_lock = threading.Lock()


def system_for(spec: ProtocolSpec, scn: Scenario) -> System:
    key = (id(spec), id(scn))
    with _systems_lock:
        entry = _systems.get(key)
        if entry is None or entry[0] is not spec or entry[1] is not scn:
            entry = (spec, scn, System(spec, scn))
            _systems[key] = entry
        return entry[2]


def initial_state(spec: ProtocolSpec, scn: Scenario) -> GlobalState:
    return system_for(spec, scn).initial_state()


def enabled(state: GlobalState, spec: ProtocolSpec | None = None, scn: Scenario | None = None) -> list[Transition]:
    return state.system.enabled(state)


def step(state: GlobalState, t: Transition) -> GlobalState:
    return state.system.step(state, t)


def is_terminal(state: GlobalState, spec: ProtocolSpec | None = None, scn: Scenario | None = None) -> bool:
    return not state.system.enabled(state)
