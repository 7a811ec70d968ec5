"""Text formats: protocol (.proto), scenario (.scn) and property (.prop) files.

The grammar is keyword driven and insensitive to line breaks; ``#`` starts a
comment.  See ``docs/grammar.md`` for the full description.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

from . import formulas as F
from .knowledge import TAnd, TNot, TOr, TermFormula, leaves, map_leaves, render_term_formula
from .model import (
    CHANNEL_KINDS,
    SERVICES,
    STORE_PREDICATES,
    Annotate,
    Bounds,
    Branch,
    Emit,
    Entry,
    EvidenceSpec,
    Fresh,
    FreshDecl,
    Property,
    PropertyFile,
    ProtocolSpec,
    Recv,
    RecvCase,
    Scenario,
    Script,
    Send,
    Session,
    StepGroup,
    StoreUpdate,
)
from .terms import (
    ATOM_KINDS,
    INTRUDER_ORIGIN,
    AEnc,
    Atom,
    Hash,
    Inv,
    Pair,
    Pk,
    SEnc,
    Sign,
    Term,
    TermError,
    Var,
    render,
    sig,
    variables,
)


class DSLError(ValueError):
    """Parse or static-check failure, located at ``line``:``col`` when known."""

    def __init__(self, message: str, line: int = 0, col: int = 0, source: str | None = None):
        self.message = message
        self.line = line
        self.col = col
        self.source = source
        where = f"{source or '<input>'}:{line}:{col}: " if line else (f"{source}: " if source else "")
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# lexing

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>\#[^\n]*)"
    r"|(?P<num>\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=>|=>|--|[{}().,:=&|~@$]|⇔|⇒|∧|∨|¬)"
)
_UNICODE_OPS = {"⇔": "<=>", "⇒": "=>", "∧": "&", "∨": "|", "¬": "~"}


@dataclass(frozen=True)
class Token:
    kind: str  # ident, num, op, eof
    value: str
    line: int
    col: int


def tokenize(text: str, source: str | None = None) -> list[Token]:
    out: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DSLError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1, source)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("num", "ident", "op"):
            value = _UNICODE_OPS.get(m.group(), m.group())
            out.append(Token(kind, value, line, pos - line_start + 1))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


class TokenStream:
    def __init__(self, text: str, source: str | None = None):
        self.source = source
        self.tokens = tokenize(text, source)
        self.pos = 0

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def at(self, *values: str) -> bool:
        tok = self.peek()
        return tok.kind in ("ident", "op") and tok.value in values

    def accept(self, value: str) -> Optional[Token]:
        if self.at(value):
            return self.next()
        return None

    def expect(self, value: str) -> Token:
        tok = self.peek()
        if not self.at(value):
            self.error(f"expected {value!r}, found {describe(tok)}", tok)
        return self.next()

    def ident(self, what: str = "identifier") -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            self.error(f"expected {what}, found {describe(tok)}", tok)
        return self.next()

    def number(self) -> int:
        tok = self.peek()
        if tok.kind != "num":
            self.error(f"expected a number, found {describe(tok)}", tok)
        return int(self.next().value)

    def ident_list(self, what: str = "identifier") -> list[Token]:
        out = [self.ident(what)]
        while self.accept(","):
            out.append(self.ident(what))
        return out

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise DSLError(message, tok.line, tok.col, self.source)


def describe(tok: Token) -> str:
    return "end of input" if tok.kind == "eof" else repr(tok.value)


# ---------------------------------------------------------------------------
# terms

FUNCTIONS = ("sig", "sign", "h", "pk", "inv")


@dataclass
class TermContext:
    """How identifiers turn into terms."""

    upper: Callable[[str, Token], Term]
    lower: Callable[[str, Token], Term]
    fresh_atom: Callable[[str, str, Token], Term] | None = None

    @staticmethod
    def symbolic(agents: frozenset[str] = frozenset()) -> TermContext:
        return TermContext(
            upper=lambda name, tok: Var(name),
            lower=lambda name, tok: Atom("agent" if name in agents else "constant", name),
        )


def intruder_atom(name: str) -> Atom:
    """Atom minted by the intruder; the kind is read off the name prefix."""
    stem = name.rstrip("0123456789")
    kind = stem if stem in ATOM_KINDS and stem != "agent" else "nonce"
    return Atom(kind, name, (INTRUDER_ORIGIN,))


def parse_term_from(ts: TokenStream, ctx: TermContext) -> Term:
    first = _unit(ts, ctx)
    if ts.accept("."):
        return Pair(first, parse_term_from(ts, ctx))
    return first


def _unit(ts: TokenStream, ctx: TermContext) -> Term:
    tok = ts.peek()
    try:
        if ts.accept("{"):
            body = parse_term_from(ts, ctx)
            ts.expect("}")
            key = _unit(ts, ctx)
            return AEnc(body, key) if isinstance(key, (Pk, Inv)) else SEnc(body, key)
        if ts.accept("("):
            inner = parse_term_from(ts, ctx)
            ts.expect(")")
            return inner
        if ts.accept("$"):
            return intruder_atom(ts.ident("intruder atom name").value)
        if tok.kind == "ident" and tok.value in FUNCTIONS and ts.peek(1).value == "(":
            ts.next()
            ts.expect("(")
            a = parse_term_from(ts, ctx)
            if tok.value in ("sig", "sign"):
                ts.expect(",")
                b = parse_term_from(ts, ctx)
                ts.expect(")")
                return sig(a, b) if tok.value == "sig" else Sign(a, b)
            ts.expect(")")
            return {"h": Hash, "pk": Pk, "inv": Inv}[tok.value](a)
        if tok.kind == "ident":
            ts.next()
            if ts.at("@"):
                ts.next()
                session = ts.ident("session name").value
                if ctx.fresh_atom is None:
                    ts.error("session-fresh atoms need a protocol context", tok)
                return ctx.fresh_atom(tok.value, session, tok)
            if tok.value[0].isupper():
                return ctx.upper(tok.value, tok)
            return ctx.lower(tok.value, tok)
    except TermError as exc:
        ts.error(str(exc), tok)
    ts.error(f"expected a term, found {describe(tok)}", tok)


def parse_term(text: str, ctx: TermContext | None = None) -> Term:
    ts = TokenStream(text)
    t = parse_term_from(ts, ctx or TermContext.symbolic())
    if ts.peek().kind != "eof":
        ts.error(f"unexpected {describe(ts.peek())} after term")
    return t


def parse_term_formula_from(ts: TokenStream, ctx: TermContext) -> TermFormula:
    left = _tand(ts, ctx)
    while ts.accept("|"):
        left = TOr(left, _tand(ts, ctx))
    return left


def _tand(ts, ctx):
    left = _tnot(ts, ctx)
    while ts.accept("&"):
        left = TAnd(left, _tnot(ts, ctx))
    return left


def _tnot(ts, ctx):
    if ts.accept("~"):
        return TNot(_tnot(ts, ctx))
    if ts.at("("):
        # either a grouped term formula or a parenthesised term
        ts.next()
        inner = parse_term_formula_from(ts, ctx)
        ts.expect(")")
        if isinstance(inner, Term) and ts.accept("."):
            return Pair(inner, parse_term_from(ts, ctx))
        return inner
    return parse_term_from(ts, ctx)


# ---------------------------------------------------------------------------
# formulas

PREDICATES = ("aknows", "deduce", "auth")


def parse_formula_from(ts: TokenStream, ctx: TermContext) -> F.Formula:
    left = _fimp(ts, ctx)
    while ts.accept("<=>"):
        left = F.Iff(left, _fimp(ts, ctx))
    return left


def _fimp(ts, ctx):
    left = _for(ts, ctx)
    if ts.accept("=>"):
        return F.Implies(left, _fimp(ts, ctx))
    return left


def _for(ts, ctx):
    left = _fand(ts, ctx)
    while ts.accept("|"):
        left = F.Or(left, _fand(ts, ctx))
    return left


def _fand(ts, ctx):
    left = _fnot(ts, ctx)
    while ts.accept("&"):
        left = F.And(left, _fnot(ts, ctx))
    return left


def _fnot(ts, ctx):
    if ts.accept("~"):
        return F.Not(_fnot(ts, ctx))
    if ts.accept("("):
        inner = parse_formula_from(ts, ctx)
        ts.expect(")")
        return inner
    tok = ts.peek()
    if ts.accept("true"):
        return F.Const(True)
    if ts.accept("false"):
        return F.Const(False)
    if tok.kind != "ident" or tok.value not in PREDICATES:
        ts.error(f"expected aknows, deduce, auth or '(', found {describe(tok)}", tok)
    ts.next()
    ts.expect("(")
    agent = ts.ident("agent").value
    if not ts.at(","):
        arity = "3 or 4" if tok.value == "auth" else "2 or 3"
        ts.error(f"{tok.value} takes {arity} arguments", tok)
    ts.expect(",")
    if tok.value == "auth":
        peer = ts.ident("agent").value
        if not ts.at(","):
            ts.error("auth takes 3 or 4 arguments", tok)
        ts.expect(",")
        data = parse_term_from(ts, ctx)
        session = ts.ident("session").value if ts.accept(",") else None
        ts.expect(")")
        return F.Auth(agent, peer, data, session)
    session = None
    if ts.peek().kind == "ident" and ts.peek(1).value == ",":
        session = ts.next().value
        ts.next()
    body = parse_term_formula_from(ts, ctx)
    ts.expect(")")
    cls = F.Aknows if tok.value == "aknows" else F.Deduce
    return cls(agent, session, body)


def parse_formula(text: str, ctx: TermContext | None = None) -> tuple[str, F.Formula]:
    """Parse ``[invariant:|terminal:] formula``; returns ``(mode, formula)``."""
    ts = TokenStream(text)
    mode = "terminal"
    if ts.at("invariant", "terminal") and ts.peek(1).value == ":":
        mode = ts.next().value
        ts.next()
    f = parse_formula_from(ts, ctx or TermContext.symbolic())
    if ts.peek().kind != "eof":
        ts.error(f"unexpected {describe(ts.peek())} after formula")
    return mode, f


# ---------------------------------------------------------------------------
# protocols

STATEMENTS = ("send", "recv", "fresh", "annotate", "witness", "request", "branch", "insert")
BLOCK_ENDS = ("case", "else", "end", "step", "sub", "role")


def _raw_context() -> TermContext:
    """Protocol bodies are first parsed with unsorted variables; sorts and
    macros are filled in once every declaration has been seen."""
    return TermContext(
        upper=lambda name, tok: Var(name),
        lower=lambda name, tok: Atom("constant", name),
    )


class _ProtocolParser:
    def __init__(self, text: str, source: str | None):
        self.ts = TokenStream(text, source)
        self.ctx = _raw_context()
        self.lines: dict[int, tuple[int, int]] = {}  # id(step) -> position

    # -- header ---------------------------------------------------------
    def parse(self) -> dict:
        ts = self.ts
        ts.expect("protocol")
        out = dict(
            name=ts.ident("protocol name").value,
            roles=[],
            store_role=None,
            channels=[],
            fresh=[],
            sorts=[],
            constants=[],
            lets=[],
            evidence=[],
            subprotocols=[],
            scripts=[],
            positions={},
        )
        while True:
            tok = ts.peek()
            if ts.accept("roles"):
                out["roles"] += [t.value for t in ts.ident_list("role name")]
            elif ts.accept("store"):
                out["store_role"] = ts.ident("role").value
                out["positions"]["store"] = tok
            elif ts.accept("channel"):
                r1 = ts.ident("role").value
                ts.expect("--")
                r2 = ts.ident("role").value
                ts.expect(":")
                kind = ts.ident("channel kind")
                if kind.value not in CHANNEL_KINDS:
                    ts.error(f"unknown channel kind {kind.value!r}", kind)
                out["channels"].append(((r1, r2), kind.value, tok))
            elif ts.accept("fresh"):
                names = ts.ident_list("name")
                ts.expect(":")
                kind = self._kind()
                ts.expect("@")
                owner = ts.ident("role").value
                out["fresh"] += [(n.value, kind, owner) for n in names]
            elif ts.accept("var"):
                names = ts.ident_list("variable")
                ts.expect(":")
                kind = self._kind()
                out["sorts"] += [(n.value, kind) for n in names]
            elif ts.accept("const"):
                names = ts.ident_list("constant")
                ts.expect(":")
                kind = self._kind()
                out["constants"] += [(n.value, kind) for n in names]
            elif ts.accept("let"):
                name = ts.ident("macro name")
                ts.expect("=")
                out["lets"].append((name, parse_term_from(ts, self.ctx)))
            elif ts.accept("evidence"):
                out["evidence"].append(self._evidence())
            elif ts.accept("subprotocol"):
                out["subprotocols"] += [t.value for t in ts.ident_list("sub-protocol")]
            elif ts.at("role"):
                break
            elif ts.at("end") or tok.kind == "eof":
                break
            else:
                ts.error(f"expected a declaration, found {describe(tok)}", tok)
        while ts.at("role"):
            out["scripts"] += self._role()
        ts.accept("end")
        if ts.peek().kind != "eof":
            ts.error(f"unexpected {describe(ts.peek())}")
        return out

    def _kind(self) -> str:
        tok = self.ts.ident("kind")
        if tok.value not in ATOM_KINDS:
            self.ts.error(f"unknown kind {tok.value!r}", tok)
        return tok.value

    def _evidence(self):
        ts = self.ts
        name = ts.ident("evidence name")
        ts.expect(":")
        service = ts.ident("service")
        if service.value not in SERVICES:
            ts.error(f"unknown service {service.value!r}", service)
        ts.expect("for")
        owner = ts.ident("role").value
        ts.expect("against")
        peer = ts.ident("role").value
        ts.expect("about")
        message = ts.ident("message name").value
        ts.expect("=")
        body = parse_term_formula_from(ts, self.ctx)
        return (name, service.value, owner, peer, message, body)

    # -- roles ----------------------------------------------------------
    def _role(self) -> list:
        ts = self.ts
        ts.expect("role")
        role = ts.ident("role name")
        scripts = []
        if ts.at("step"):
            scripts.append((role, "main", None, None, self._steps(), role))
        while ts.at("sub"):
            tok = ts.next()
            sub = ts.ident("sub-protocol name").value
            for_role = entry = None
            if ts.accept("for"):
                for_role = ts.ident("role").value
            if ts.accept("from"):
                parent = ts.ident("sub-protocol name").value
                ts.expect("after")
                after = ts.number()
                ts.expect("until")
                until = ts.number()
                entry = (parent, after, until)
            scripts.append((role, sub, for_role, entry, self._steps(), tok))
        return scripts

    def _steps(self) -> list:
        ts = self.ts
        groups = []
        while ts.at("step"):
            tok = ts.next()
            number = ts.number()
            groups.append((number, self._block(), tok))
        return groups

    def _block(self) -> tuple:
        ts = self.ts
        body = []
        while not ts.at(*BLOCK_ENDS) and ts.peek().kind != "eof":
            body.append(self._statement())
        return tuple(body)

    def _statement(self):
        ts = self.ts
        tok = ts.peek()
        line = tok.line
        if ts.accept("send"):
            peer = ts.ident("role").value
            ts.expect(":")
            st = Send(peer, parse_term_from(ts, self.ctx), line)
        elif ts.accept("recv"):
            peer = ts.ident("role").value
            if ts.accept(":"):
                pattern = parse_term_from(ts, self.ctx)
                st = Recv(peer, (RecvCase(pattern, self._where()),), line)
            else:
                cases = []
                while ts.accept("case"):
                    pattern = parse_term_from(ts, self.ctx)
                    where = self._where()
                    cases.append(RecvCase(pattern, where, self._block()))
                if not cases:
                    ts.error("expected ':' or 'case' after recv")
                ts.expect("end")
                st = Recv(peer, tuple(cases), line)
        elif ts.accept("fresh"):
            st = Fresh(tuple(t.value for t in ts.ident_list("fresh name")), line)
        elif ts.accept("annotate"):
            terms = [parse_term_from(ts, self.ctx)]
            while ts.accept(","):
                terms.append(parse_term_from(ts, self.ctx))
            st = Annotate(tuple(terms), line)
        elif ts.at("witness", "request"):
            event = ts.next().value
            peer = ts.ident("role").value
            ts.expect(":")
            st = Emit(event, peer, parse_term_from(ts, self.ctx), line)
        elif ts.accept("insert"):
            pred, term = self._store_atom()
            st = StoreUpdate(pred, term, line)
        elif ts.accept("branch"):
            pred, term = self._store_atom()
            then = self._block()
            orelse = self._block() if ts.accept("else") else ()
            ts.expect("end")
            st = Branch(pred, term, then, orelse, line)
        else:
            ts.error(f"expected a statement, found {describe(tok)}", tok)
        self.lines[id(st)] = (tok.line, tok.col)
        return st

    def _where(self) -> tuple:
        ts = self.ts
        out = []
        if ts.accept("where"):
            while True:
                name = ts.ident("variable").value
                ts.expect("=")
                out.append((name, parse_term_from(ts, self.ctx)))
                if not ts.accept(","):
                    break
        return tuple(out)

    def _store_atom(self):
        ts = self.ts
        pred = ts.ident("store predicate")
        if pred.value not in STORE_PREDICATES:
            ts.error(f"unknown store predicate {pred.value!r}", pred)
        ts.expect("(")
        term = parse_term_from(ts, self.ctx)
        ts.expect(")")
        return pred.value, term


def parse_protocol(text: str, source: str | None = None) -> ProtocolSpec:
    """Parse and statically check a protocol description."""
    p = _ProtocolParser(text, source)
    raw = p.parse()
    return _build_protocol(raw, p, source)


def _err(msg: str, tok=None, source=None, pos=None):
    if tok is not None:
        raise DSLError(msg, tok.line, tok.col, source)
    if pos is not None:
        raise DSLError(msg, pos[0], pos[1], source)
    raise DSLError(msg, source=source)


def _build_protocol(raw: dict, parser: _ProtocolParser, source) -> ProtocolSpec:
    roles = tuple(raw["roles"])
    if not roles:
        _err("protocol declares no roles", source=source)
    if len(set(roles)) != len(roles):
        _err("duplicate role name", source=source)
    for r in roles:
        if not r[0].isupper():
            _err(f"role names start with an upper-case letter: {r!r}", source=source)

    def need_role(r: str, tok=None, what="role"):
        if r not in roles:
            _err(f"unknown {what} {r!r}", tok, source)

    if raw["store_role"] is not None:
        need_role(raw["store_role"], raw["positions"].get("store"))
    channels = {}
    for (r1, r2), kind, tok in raw["channels"]:
        need_role(r1, tok)
        need_role(r2, tok)
        if r1 == r2:
            _err("a channel joins two different roles", tok, source)
        channels[tuple(sorted((r1, r2)))] = kind

    fresh = []
    names_seen: set[str] = set(roles)
    for n, kind, owner in raw["fresh"]:
        need_role(owner)
        if n in names_seen:
            _err(f"name {n!r} declared twice", source=source)
        names_seen.add(n)
        fresh.append(FreshDecl(n, kind, owner))
    sorts = {}
    for n, kind in raw["sorts"]:
        if n in names_seen:
            _err(f"name {n!r} declared twice", source=source)
        names_seen.add(n)
        sorts[n] = kind
    sort_of = {**sorts, **{d.name: d.kind for d in fresh}, **{r: "agent" for r in roles}}
    const_kinds = dict(raw["constants"])

    raw_lets = {}
    for tok, body in raw["lets"]:
        if tok.value in names_seen or tok.value in raw_lets:
            _err(f"name {tok.value!r} declared twice", tok, source)
        raw_lets[tok.value] = body
    lets: dict[str, Term] = {}

    def expand(t: Term, stack=(), macros=True) -> Term:
        if isinstance(t, Var):
            if macros and t.name in raw_lets:
                if t.name in stack:
                    _err(f"macro {t.name!r} refers to itself", source=source)
                if t.name not in lets:
                    lets[t.name] = expand(raw_lets[t.name], stack + (t.name,))
                return lets[t.name]
            return Var(t.name, sort_of.get(t.name))
        if isinstance(t, Atom):
            if t.origin is None and t.kind == "constant" and t.name in const_kinds:
                return Atom(const_kinds[t.name], t.name)
            return t
        try:
            return t.rebuild(expand(c, stack, macros) for c in t.children)
        except TermError as exc:
            _err(str(exc), source=source)

    for name in raw_lets:
        expand(Var(name))

    evidence = []
    for tok, service, owner, peer, message, body in raw["evidence"]:
        need_role(owner, tok)
        need_role(peer, tok)
        if owner == peer:
            _err("evidence owner and peer must differ", tok, source)
        if any(e.name == tok.value for e in evidence):
            _err(f"evidence {tok.value!r} declared twice", tok, source)
        known = set(sort_of) | set(raw_lets) | {e[0].value for e in raw["evidence"]}
        if message not in sort_of:
            _err(f"evidence is about an undeclared name {message!r}", tok, source)
        body = map_leaves(body, lambda t: expand(t, macros=False))
        for leaf, _ in leaves(body):
            for v in variables(leaf):
                if v.name not in known:
                    _err(f"unknown name {v.name!r} in evidence {tok.value}", tok, source)
        evidence.append(EvidenceSpec(tok.value, service, owner, peer, message, body))

    def conv(steps):
        out = []
        for st in steps:
            if isinstance(st, Send):
                new = Send(st.peer, expand(st.template), st.line)
            elif isinstance(st, Recv):
                cases = tuple(
                    RecvCase(
                        expand(c.pattern),
                        tuple((n, expand(p)) for n, p in c.where),
                        tuple(conv(c.body)),
                    )
                    for c in st.cases
                )
                new = Recv(st.peer, cases, st.line)
            elif isinstance(st, Annotate):
                new = Annotate(tuple(expand(t) for t in st.terms), st.line)
            elif isinstance(st, Emit):
                new = Emit(st.event, st.peer, expand(st.data), st.line)
            elif isinstance(st, StoreUpdate):
                new = StoreUpdate(st.predicate, expand(st.term), st.line)
            elif isinstance(st, Branch):
                new = Branch(st.predicate, expand(st.term), tuple(conv(st.then)), tuple(conv(st.orelse)), st.line)
            else:
                new = st
            parser.lines[id(new)] = parser.lines.get(id(st), (st.line, 1))
            out.append(new)
        return out

    scripts = []
    for role_tok, sub, for_role, entry, groups, tok in raw["scripts"]:
        need_role(role_tok.value, role_tok)
        if for_role is not None:
            need_role(for_role, tok)
        numbers = [g[0] for g in groups]
        if len(set(numbers)) != len(numbers):
            _err(f"duplicate step number in {role_tok.value}/{sub}", tok, source)
        if numbers != sorted(numbers):
            _err(f"steps of {role_tok.value}/{sub} must be in increasing order", tok, source)
        steps = tuple(StepGroup(n, tuple(conv(body))) for n, body, _ in groups)
        scripts.append(
            Script(role_tok.value, sub, steps, Entry(*entry) if entry else None, for_role)
        )

    spec = ProtocolSpec(
        name=raw["name"],
        roles=roles,
        store_role=raw["store_role"],
        channels=tuple(sorted(channels.items())),
        fresh=tuple(fresh),
        sorts=tuple(sorted(sorts.items())),
        constants=tuple(sorted(const_kinds.items())),
        lets=tuple((n, lets[n]) for n in raw_lets),
        evidence=tuple(evidence),
        subprotocols=tuple(raw["subprotocols"]),
        scripts=tuple(scripts),
    )
    check_protocol(spec, source, parser.lines)
    return spec


# ---------------------------------------------------------------------------
# static checks


def check_protocol(spec: ProtocolSpec, source: str | None = None, positions: dict | None = None) -> None:
    """Scope, role and structure checks; raises :class:`DSLError`."""
    positions = positions or {}

    def fail(msg, st=None):
        pos = positions.get(id(st)) if st is not None else None
        if pos is None and st is not None and getattr(st, "line", 0):
            pos = (st.line, 1)
        _err(msg, pos=pos, source=source)

    threads = set()
    for s in spec.scripts:
        key = (s.role, s.thread)
        if key in threads:
            fail(f"role {s.role} defines {s.thread} twice")
        threads.add(key)
        if spec.subprotocols and s.sub not in spec.subprotocols and s.sub != "main":
            fail(f"sub-protocol {s.sub!r} is not declared")
        if s.entry is not None:
            parents = [p for p in spec.scripts_of(s.role) if p.sub == s.entry.parent and p.entry is None]
            if not parents:
                fail(f"{s.role}/{s.sub} enters from unknown sub-protocol {s.entry.parent!r}")
            nums = parents[0].step_numbers()
            if s.entry.after not in nums or s.entry.until not in nums:
                fail(f"{s.role}/{s.sub}: entry window refers to missing steps of {s.entry.parent}")
            if s.entry.after >= s.entry.until:
                fail(f"{s.role}/{s.sub}: entry window must have after < until")

    for s in spec.scripts:
        owned_fresh = {d.name for d in spec.fresh if d.owner == s.role}
        explicit = _fresh_in_role(spec, s.role)
        bound0 = set(spec.roles) | (owned_fresh - explicit)
        if s.entry is not None:
            parent = next(p for p in spec.scripts_of(s.role) if p.sub == s.entry.parent and p.entry is None)
            ends = _bound_by_group(spec, parent, set(spec.roles) | (owned_fresh - explicit), fail)
            bound0 = ends[s.entry.after]
        _bound_by_group(spec, s, bound0, fail)


def _fresh_in_role(spec: ProtocolSpec, role: str) -> set[str]:
    out: set[str] = set()

    def scan(steps):
        for st in steps:
            if isinstance(st, Fresh):
                out.update(st.names)
            elif isinstance(st, Recv):
                for c in st.cases:
                    scan(c.body)
            elif isinstance(st, Branch):
                scan(st.then)
                scan(st.orelse)

    for s in spec.scripts_of(role):
        for g in s.steps:
            scan(g.body)
    return out


def _bound_by_group(spec: ProtocolSpec, script: Script, bound: set, fail) -> dict[int, set]:
    role = script.role
    where = f"{role}/{script.thread}"

    def need(t: Term, st, what: str):
        missing = sorted(v.name for v in variables(t) if v.name not in bound_now[0])
        if missing:
            fail(f"unbound variable {missing[0]} in {what} of {where}", st)

    def peer_ok(peer, st):
        if peer not in spec.roles:
            fail(f"unknown role {peer!r} in {where}", st)
        if peer == role:
            fail(f"{where} talks to itself", st)

    bound_now = [set(bound)]

    def walk(steps):
        for st in steps:
            if isinstance(st, Send):
                peer_ok(st.peer, st)
                need(st.template, st, "send")
            elif isinstance(st, Recv):
                peer_ok(st.peer, st)
                before = bound_now[0]
                outs = []
                for c in st.cases:
                    bound_now[0] = before | {v.name for v in variables(c.pattern)}
                    for name, p in c.where:
                        if name not in bound_now[0]:
                            fail(f"where-clause on unbound variable {name} in {where}", st)
                        bound_now[0] = bound_now[0] | {v.name for v in variables(p)}
                    walk(c.body)
                    outs.append(bound_now[0])
                bound_now[0] = set.intersection(*outs)
            elif isinstance(st, Fresh):
                for n in st.names:
                    d = spec.fresh_decl(n)
                    if d is None or d.owner != role:
                        fail(f"{where} generates {n}, which is not a fresh value of {role}", st)
                bound_now[0] = bound_now[0] | set(st.names)
            elif isinstance(st, Annotate):
                for t in st.terms:
                    need(t, st, "annotation")
            elif isinstance(st, Emit):
                peer_ok(st.peer, st)
                need(st.data, st, st.event)
            elif isinstance(st, (StoreUpdate, Branch)):
                if spec.store_role != role:
                    fail(f"store access outside the store role in {where}", st)
                need(st.term, st, "store access")
                if isinstance(st, Branch):
                    before = bound_now[0]
                    walk(st.then)
                    a = bound_now[0]
                    bound_now[0] = before
                    walk(st.orelse)
                    bound_now[0] = a & bound_now[0]

    ends = {}
    for g in script.steps:
        walk(g.body)
        ends[g.number] = set(bound_now[0])
    return ends


# ---------------------------------------------------------------------------
# render back


def render_protocol(spec: ProtocolSpec) -> str:
    """Text that parses back to an equal :class:`ProtocolSpec`."""
    out = [f"protocol {spec.name}", "roles " + ", ".join(spec.roles)]
    if spec.store_role:
        out.append(f"store {spec.store_role}")
    for (r1, r2), kind in spec.channels:
        out.append(f"channel {r1} -- {r2} : {kind}")
    for d in spec.fresh:
        out.append(f"fresh {d.name} : {d.kind} @ {d.owner}")
    for n, kind in spec.sorts:
        out.append(f"var {n} : {kind}")
    for n, kind in spec.constants:
        out.append(f"const {n} : {kind}")
    for n, t in spec.lets:
        out.append(f"let {n} = {render(t)}")
    for ev in spec.evidence:
        out.append(
            f"evidence {ev.name} : {ev.service} for {ev.owner} against {ev.peer} "
            f"about {ev.message} = {render_term_formula(ev.formula)}"
        )
    if spec.subprotocols:
        out.append("subprotocol " + ", ".join(spec.subprotocols))
    for role in spec.roles:
        scripts = spec.scripts_of(role)
        if not scripts:
            continue
        out.append("")
        out.append(f"role {role}")
        for s in scripts:
            head = f"sub {s.sub}"
            if s.for_role:
                head += f" for {s.for_role}"
            if s.entry:
                head += f" from {s.entry.parent} after {s.entry.after} until {s.entry.until}"
            out.append(head)
            for g in s.steps:
                out.append(f"  step {g.number}")
                _render_steps(g.body, out, "    ")
    out.append("end")
    return "\n".join(out) + "\n"


def _render_steps(steps, out: list, ind: str) -> None:
    for st in steps:
        if isinstance(st, Send):
            out.append(f"{ind}send {st.peer}: {render(st.template)}")
        elif isinstance(st, Recv):
            if len(st.cases) == 1 and not st.cases[0].body:
                c = st.cases[0]
                out.append(f"{ind}recv {st.peer}: {render(c.pattern)}{_render_where(c.where)}")
            else:
                out.append(f"{ind}recv {st.peer}")
                for c in st.cases:
                    out.append(f"{ind}case {render(c.pattern)}{_render_where(c.where)}")
                    _render_steps(c.body, out, ind + "  ")
                out.append(f"{ind}end")
        elif isinstance(st, Fresh):
            out.append(f"{ind}fresh " + ", ".join(st.names))
        elif isinstance(st, Annotate):
            out.append(f"{ind}annotate " + ", ".join(render(t) for t in st.terms))
        elif isinstance(st, Emit):
            out.append(f"{ind}{st.event} {st.peer}: {render(st.data)}")
        elif isinstance(st, StoreUpdate):
            out.append(f"{ind}insert {st.predicate}({render(st.term)})")
        elif isinstance(st, Branch):
            out.append(f"{ind}branch {st.predicate}({render(st.term)})")
            _render_steps(st.then, out, ind + "  ")
            if st.orelse:
                out.append(f"{ind}else")
                _render_steps(st.orelse, out, ind + "  ")
            out.append(f"{ind}end")


def _render_where(where) -> str:
    if not where:
        return ""
    return " where " + ", ".join(f"{n} = {render(p)}" for n, p in where)


# ---------------------------------------------------------------------------
# scenarios

BOUND_KEYS = {"max_states": "max_states", "max_depth": "max_depth", "fresh": "intruder_fresh_budget"}


def parse_scenario(text: str, source: str | None = None, protocol: ProtocolSpec | None = None) -> Scenario:
    ts = TokenStream(text, source)
    ts.expect("scenario")
    name = ts.ident("scenario name").value
    proto = None
    sessions: list[Session] = []
    dishonest: set[str] = set()
    channels = {}
    bounds = Bounds()
    positions: dict = {}
    while ts.peek().kind != "eof" and not ts.at("end"):
        tok = ts.peek()
        if ts.accept("protocol"):
            proto = ts.ident("protocol name").value
        elif ts.accept("session"):
            sname = ts.ident("session name")
            if any(s.name == sname.value for s in sessions):
                ts.error(f"session {sname.value!r} declared twice", sname)
            ts.expect(":")
            binding = []
            while True:
                role = ts.ident("role")
                ts.expect("=")
                agent = ts.ident("agent")
                if not agent.value[0].islower():
                    ts.error("agent names start with a lower-case letter", agent)
                if any(r == role.value for r, _ in binding):
                    ts.error(f"role {role.value} bound twice", role)
                binding.append((role.value, agent.value))
                if not ts.accept(","):
                    break
            sessions.append(Session(sname.value, tuple(binding)))
            positions[sname.value] = (sname.line, sname.col)
        elif ts.accept("dishonest"):
            dishonest.update(t.value for t in ts.ident_list("agent"))
        elif ts.accept("channel"):
            r1 = ts.ident("role").value
            ts.expect("--")
            r2 = ts.ident("role").value
            ts.expect(":")
            kind = ts.ident("channel kind")
            if kind.value not in CHANNEL_KINDS:
                ts.error(f"unknown channel kind {kind.value!r}", kind)
            channels[tuple(sorted((r1, r2)))] = kind.value
            positions[tuple(sorted((r1, r2)))] = (tok.line, tok.col)
        elif ts.accept("bounds"):
            values = {}
            if ts.peek().kind != "ident" or ts.peek().value not in BOUND_KEYS:
                ts.error("malformed bounds: expected max_states, max_depth or fresh")
            while ts.peek().kind == "ident" and ts.peek().value in BOUND_KEYS:
                key = ts.next().value
                values[BOUND_KEYS[key]] = ts.number()
            try:
                bounds = Bounds(**{**bounds.__dict__, **values})
            except ValueError as exc:
                ts.error(f"malformed bounds: {exc}", tok)
        else:
            ts.error(f"expected a scenario declaration, found {describe(tok)}", tok)
    ts.accept("end")
    if ts.peek().kind != "eof":
        ts.error(f"unexpected {describe(ts.peek())}")
    if proto is None:
        ts.error("scenario does not name its protocol")
    scn = Scenario(name, proto, tuple(sessions), frozenset(dishonest), tuple(sorted(channels.items())), bounds)
    if protocol is not None:
        check_scenario(scn, protocol, source, positions)
    return scn


def check_scenario(
    scn: Scenario, spec: ProtocolSpec, source: str | None = None, positions: dict | None = None
) -> None:
    # the protocol line is a label: variants sharing role names reuse scenarios
    where = (positions or {}).get
    for s in scn.sessions:
        bound = dict(s.roles)
        for r in bound:
            if r not in spec.roles:
                _err(f"session {s.name} binds unknown role {r!r}", source=source, pos=where(s.name))
        for r in spec.roles:
            if r not in bound:
                _err(f"session {s.name} does not bind role {r}", source=source, pos=where(s.name))
        if len(set(bound.values())) != len(bound):
            _err(f"session {s.name} gives one agent two roles", source=source, pos=where(s.name))
    for pair, _ in scn.channels:
        for r in pair:
            if r not in spec.roles:
                _err(f"channel override names unknown role {r!r}", source=source, pos=where(pair))
    # a dishonest agent without a role is an extra identity of the intruder


def render_scenario(scn: Scenario) -> str:
    out = [f"scenario {scn.name}", f"protocol {scn.protocol}"]
    for s in scn.sessions:
        out.append(f"session {s.name} : " + ", ".join(f"{r} = {a}" for r, a in s.roles))
    if scn.dishonest:
        out.append("dishonest " + ", ".join(sorted(scn.dishonest)))
    for (r1, r2), kind in scn.channels:
        out.append(f"channel {r1} -- {r2} : {kind}")
    b = scn.bounds
    out.append(f"bounds max_states {b.max_states} max_depth {b.max_depth} fresh {b.intruder_fresh_budget}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# property files


def parse_properties(text: str, source: str | None = None) -> PropertyFile:
    ts = TokenStream(text, source)
    ctx = TermContext.symbolic()
    props: list[Property] = []
    if ts.accept("properties"):
        ts.accept("for")
        ts.ident("protocol name")
    while ts.peek().kind != "eof":
        ts.expect("property")
        name = ts.ident("property name")
        mode = "terminal"
        if ts.at("invariant", "terminal"):
            mode = ts.next().value
        ts.expect(":")
        f = parse_formula_from(ts, ctx)
        if any(p.name == name.value for p in props):
            ts.error(f"property {name.value!r} defined twice", name)
        props.append(Property(name.value, mode, f))
        if ts.peek().kind != "eof" and not ts.at("property"):
            ts.error(f"unexpected {describe(ts.peek())} after formula")
    return PropertyFile(tuple(props))


def render_properties(pf: PropertyFile) -> str:
    return "".join(f"property {p.name} {p.mode}: {F.render_formula(p.formula)}\n" for p in pf.properties)


# ---------------------------------------------------------------------------
# files


def load_protocol(path) -> ProtocolSpec:
    from pathlib import Path

    path = Path(path)
    return parse_protocol(_read(path), str(path))


def load_scenario(path, protocol: ProtocolSpec | None = None) -> Scenario:
    from pathlib import Path

    path = Path(path)
    return parse_scenario(_read(path), str(path), protocol)


def load_properties(path) -> PropertyFile:
    from pathlib import Path

    path = Path(path)
    return parse_properties(_read(path), str(path))


def _read(path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DSLError(f"cannot read {path}: {exc.strerror or exc}") from exc
