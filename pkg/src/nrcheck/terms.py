"""Message terms: ground terms, patterns with variables, matching.

Terms are hash-consed: constructing the same tree twice returns the same
object, so equality is identity and hashing is O(1).  Every term is
immutable after construction.
"""

from __future__ import annotations

import threading
from typing import Iterable, Iterator, Mapping

ATOM_KINDS = ("agent", "nonce", "symkey", "payload", "label", "constant")

# origin session tag used for atoms minted by the intruder
INTRUDER_ORIGIN = "$"


class TermError(ValueError):
    pass


class SortError(TermError):
    """A variable was bound to a term outside its sort."""


_table: dict = {}
_table_lock = threading.Lock()


class Term:
    """Base class of all message terms (and pattern variables)."""

    __slots__ = ("_args", "_key", "_ground", "_size")
    tag = -1

    def __new__(cls, *args):
        ident = (cls, args)
        term = _table.get(ident)
        if term is not None:
            return term
        cls._check(args)
        term = object.__new__(cls)
        term._args = args
        term._key = None
        children = [a for a in args if isinstance(a, Term)]
        term._ground = cls is not Var and all(c._ground for c in children)
        term._size = 1 + sum(c._size for c in children)
        with _table_lock:
            return _table.setdefault(ident, term)

    @classmethod
    def _check(cls, args) -> None:
        for a in args:
            if not isinstance(a, Term):
                raise TermError(f"{cls.__name__} expects terms, got {a!r}")

    def __reduce__(self):
        return (self.__class__, self._args)

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    @property
    def children(self) -> tuple[Term, ...]:
        return tuple(a for a in self._args if isinstance(a, Term))

    @property
    def is_ground(self) -> bool:
        return self._ground

    @property
    def size(self) -> int:
        return self._size

    def rebuild(self, children: Iterable[Term]) -> Term:
        return self.__class__(*children)

    def __lt__(self, other: Term) -> bool:
        return term_key(self) < term_key(other)

    def __repr__(self) -> str:
        return render(self)


class Atom(Term):
    __slots__ = ()
    tag = 0

    def __new__(cls, kind: str, name: str, origin: tuple[str, ...] | None = None):
        return super().__new__(cls, kind, name, origin)

    @classmethod
    def _check(cls, args) -> None:
        kind, name, origin = args
        if kind not in ATOM_KINDS:
            raise TermError(f"unknown atom kind {kind!r}")
        if not isinstance(name, str) or not name:
            raise TermError("atom name must be a non-empty string")
        if origin is not None and not (
            isinstance(origin, tuple) and all(isinstance(o, str) for o in origin)
        ):
            raise TermError("atom origin must be a tuple of strings")

    @property
    def kind(self) -> str:
        return self._args[0]

    @property
    def name(self) -> str:
        return self._args[1]

    @property
    def origin(self) -> tuple[str, ...] | None:
        return self._args[2]

    def rebuild(self, children):
        return self


class Var(Term):
    """Pattern variable.  ``sort`` restricts bindings to atoms of one kind."""

    __slots__ = ()
    tag = 9

    def __new__(cls, name: str, sort: str | None = None):
        return super().__new__(cls, name, sort)

    @classmethod
    def _check(cls, args) -> None:
        name, sort = args
        if not isinstance(name, str) or not name:
            raise TermError("variable name must be a non-empty string")
        if sort is not None and sort not in ATOM_KINDS:
            raise TermError(f"unknown sort {sort!r}")

    @property
    def name(self) -> str:
        return self._args[0]

    @property
    def sort(self) -> str | None:
        return self._args[1]

    def accepts(self, t: Term) -> bool:
        return self.sort is None or (isinstance(t, Atom) and t.kind == self.sort)

    def rebuild(self, children):
        return self


class Pair(Term):
    __slots__ = ()
    tag = 1

    def __new__(cls, left: Term, right: Term):
        return super().__new__(cls, left, right)

    @property
    def left(self) -> Term:
        return self._args[0]

    @property
    def right(self) -> Term:
        return self._args[1]


class SEnc(Term):
    __slots__ = ()
    tag = 2

    @classmethod
    def _check(cls, args) -> None:
        super()._check(args)
        if isinstance(args[1], (Pk, Inv)):
            raise TermError("symmetric encryption under an asymmetric key; use AEnc")

    def __new__(cls, body: Term, key: Term):
        return super().__new__(cls, body, key)

    @property
    def body(self) -> Term:
        return self._args[0]

    @property
    def key(self) -> Term:
        return self._args[1]


class AEnc(Term):
    __slots__ = ()
    tag = 3

    @classmethod
    def _check(cls, args) -> None:
        super()._check(args)
        if not isinstance(args[1], (Pk, Inv)):
            raise TermError("asymmetric encryption needs a pk(...) or inv(...) key")

    def __new__(cls, body: Term, key: Term):
        return super().__new__(cls, body, key)

    @property
    def body(self) -> Term:
        return self._args[0]

    @property
    def key(self) -> Term:
        return self._args[1]


class Sign(Term):
    __slots__ = ()
    tag = 4

    def __new__(cls, body: Term, key: Term):
        return super().__new__(cls, body, key)

    @property
    def body(self) -> Term:
        return self._args[0]

    @property
    def key(self) -> Term:
        return self._args[1]

    @property
    def signer(self) -> Term | None:
        """The agent whose private key made this signature, if recognisable."""
        if isinstance(self.key, Inv) and isinstance(self.key.key, Pk):
            return self.key.key.agent
        return None


class Hash(Term):
    __slots__ = ()
    tag = 5

    def __new__(cls, body: Term):
        return super().__new__(cls, body)

    @property
    def body(self) -> Term:
        return self._args[0]


class Pk(Term):
    __slots__ = ()
    tag = 6

    def __new__(cls, agent: Term):
        return super().__new__(cls, agent)

    @property
    def agent(self) -> Term:
        return self._args[0]


class Inv(Term):
    __slots__ = ()
    tag = 7

    def __new__(cls, key: Term):
        return super().__new__(cls, key)

    @classmethod
    def _check(cls, args) -> None:
        super()._check(args)
        if not isinstance(args[0], (Pk, Var)):
            raise TermError("inv applies only to pk(...) or a variable")

    @property
    def key(self) -> Term:
        return self._args[0]


def sig(agent: Term, body: Term) -> Sign:
    """Signature of ``body`` with the private key of ``agent``."""
    return Sign(body, Inv(Pk(agent)))


def tup(*parts: Term) -> Term:
    """Right-associated pairing: ``tup(a, b, c) == Pair(a, Pair(b, c))``."""
    if not parts:
        raise TermError("tup() needs at least one component")
    out = parts[-1]
    for p in reversed(parts[:-1]):
        out = Pair(p, out)
    return out


def inverse_key(key: Term) -> Term:
    """The key that opens an encryption made with ``key``."""
    if isinstance(key, Pk):
        return Inv(key)
    if isinstance(key, Inv):
        return key.key
    return key


# ---------------------------------------------------------------------------
# ordering


def term_key(t: Term) -> tuple:
    """Total order on terms: constructor tag, then children lexicographically."""
    key = t._key
    if key is None:
        if isinstance(t, Atom):
            key = (0, t.kind, t.name, t.origin or ())
        elif isinstance(t, Var):
            key = (9, t.name, t.sort or "")
        else:
            key = (t.tag,) + tuple(term_key(c) for c in t._args)
        t._key = key
    return key


def sorted_terms(terms: Iterable[Term]) -> list[Term]:
    return sorted(terms, key=term_key)


# ---------------------------------------------------------------------------
# structural operations


def iter_subterms(t: Term) -> Iterator[Term]:
    stack = [t]
    while stack:
        s = stack.pop()
        yield s
        stack.extend(s.children)


def subterms(t: Term) -> frozenset[Term]:
    return frozenset(iter_subterms(t))


def variables(t: Term) -> frozenset[Var]:
    return frozenset(s for s in iter_subterms(t) if isinstance(s, Var))


def atoms(t: Term) -> frozenset[Atom]:
    return frozenset(s for s in iter_subterms(t) if isinstance(s, Atom))


Binding = Mapping[str, Term]


def substitute(p: Term, b: Binding) -> Term:
    """Replace every variable of ``p`` bound in ``b``."""
    if p._ground:
        return p
    if isinstance(p, Var):
        t = b.get(p.name)
        if t is None:
            return p
        if not p.accepts(t):
            raise SortError(f"{p.name}:{p.sort} cannot bind {render(t)}")
        return t
    return p.rebuild(substitute(c, b) for c in p.children)


def match(p: Term, t: Term, b: Binding | None = None) -> dict[str, Term] | None:
    """One-way matching of pattern ``p`` against ground ``t``.

    Returns the extension of ``b`` that makes ``p`` equal to ``t`` or None.
    A variable already bound in ``b`` must match its bound value.
    """
    out = dict(b) if b else {}
    return out if _match(p, t, out) else None


def _match(p: Term, t: Term, out: dict) -> bool:
    if p._ground:
        return p is t
    if isinstance(p, Var):
        bound = out.get(p.name)
        if bound is not None:
            return bound is t
        if not p.accepts(t):
            return False
        out[p.name] = t
        return True
    if p.__class__ is not t.__class__:
        return False
    return all(_match(pc, tc, out) for pc, tc in zip(p._args, t._args))


# ---------------------------------------------------------------------------
# rendering


def render_atom(a: Atom) -> str:
    if a.origin is None:
        return a.name
    if a.origin[0] == INTRUDER_ORIGIN:
        return "$" + a.name
    return f"{a.name}@{a.origin[0]}"


def render(t: Term) -> str:
    """Canonical text: ``a.b`` pairs, ``{t}k`` encryption, ``sig(a, t)``, ``h(t)``."""
    if isinstance(t, Atom):
        return render_atom(t)
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Pair):
        left = render(t.left)
        if isinstance(t.left, Pair):
            left = f"({left})"
        return f"{left}.{render(t.right)}"
    if isinstance(t, (SEnc, AEnc)):
        return "{" + render(t.body) + "}" + _render_key(t.key)
    if isinstance(t, Sign):
        signer = t.signer
        if signer is not None:
            return f"sig({render(signer)}, {render(t.body)})"
        return f"sign({render(t.body)}, {render(t.key)})"
    if isinstance(t, Hash):
        return f"h({render(t.body)})"
    if isinstance(t, Pk):
        return f"pk({render(t.agent)})"
    if isinstance(t, Inv):
        return f"inv({render(t.key)})"
    raise TermError(f"cannot render {type(t).__name__}")


def _render_key(k: Term) -> str:
    s = render(k)
    return f"({s})" if isinstance(k, Pair) else s
