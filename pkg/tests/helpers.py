"""Shared test utilities: corpus access, a brute-force deduction oracle,
random term generators and a plain reachable-state enumerator."""

from __future__ import annotations

import random
from collections import deque
from pathlib import Path

from nrcheck.dsl import load_properties, load_protocol, load_scenario
from nrcheck.runtime import system_for
from nrcheck.terms import AEnc, Atom, Hash, Inv, Pair, Pk, SEnc, Sign, Term, term_key

CORPUS = Path(__file__).resolve().parents[1] / "src" / "nrcheck" / "corpus"


def proto(name: str):
    return load_protocol(CORPUS / f"{name}.proto")


def scenario(name: str, spec=None):
    return load_scenario(CORPUS / f"{name}.scn", spec)


def props(name: str):
    return load_properties(CORPUS / f"{name}.prop")


def model(proto_name: str, scn_name: str):
    spec = proto(proto_name)
    return spec, scenario(scn_name, spec)


SHIPPED = [
    ("ccd", "ccd_honest"),
    ("ccd", "ccd_b_dishonest"),
    ("ccd_secure_ttp", "ccd_honest"),
    ("fairzg", "fairzg_honest"),
    ("ccd", "empty"),
]


def reachable(spec, scn, limit: int = 100_000):
    """Every reachable state with its parent edge, by plain BFS.

    Independent of the search module: no bounds other than ``limit``.
    Yields ``(state, successors)`` where successors is a list of
    ``(transition, child)``.
    """
    system = system_for(spec, scn)
    init = system.initial_state()
    seen = {init}
    queue = deque([init])
    while queue:
        s = queue.popleft()
        succ = [(t, system.step(s, t)) for t in system.enabled(s)]
        yield s, succ
        for _, c in succ:
            if c not in seen:
                seen.add(c)
                if len(seen) > limit:
                    raise RuntimeError("state space larger than expected")
                queue.append(c)


# ---------------------------------------------------------------------------
# deduction oracle


def _children(t: Term):
    return t.children


def _all_subterms(terms) -> set:
    out = set()
    stack = list(terms)
    while stack:
        t = stack.pop()
        if t not in out:
            out.add(t)
            stack.extend(_children(t))
    return out


def _opening_key(t: Term):
    """Key needed to open an encryption, written out independently."""
    if isinstance(t, SEnc):
        return t.key
    k = t.key
    if isinstance(k, Pk):
        return Inv(k)
    return k.key  # inv(x) is opened with x


def oracle_closure(seeds, query=None) -> set:
    """Brute-force Dolev-Yao closure restricted to a finite universe.

    Every rule is applied to the current set until nothing changes:
    projections of pairs, bodies of signatures, bodies of encryptions whose
    opening key is in the set, and every constructor application (pair,
    encryptions, signature, hash, pk) whose result lies in the universe and
    whose arguments are in the set.  The universe is all subterms of the
    seeds and the query, which suffices for free constructors.
    """
    universe = _all_subterms(list(seeds) + ([query] if query is not None else []))
    known = set(seeds)
    changed = True
    while changed:
        changed = False
        new = set()
        for t in known:
            if isinstance(t, Pair):
                new.update((t.left, t.right))
            elif isinstance(t, Sign):
                new.add(t.body)
            elif isinstance(t, (SEnc, AEnc)) and _opening_key(t) in known:
                new.add(t.body)
        for u in universe:
            if u in known or isinstance(u, (Atom, Inv)):
                continue
            if all(c in known for c in u.children):
                new.add(u)
        new -= known
        if new:
            known |= new
            changed = True
    return known


def oracle_deduce(seeds, query) -> bool:
    return query in oracle_closure(seeds, query)


# ---------------------------------------------------------------------------
# random terms

ATOM_POOL = [Atom("constant", n) for n in "abcde"] + [Atom("symkey", "k1"), Atom("symkey", "k2")]
AGENTS = [Atom("agent", n) for n in ("a", "b")]


def random_term(rng: random.Random, depth: int, pool=None) -> Term:
    pool = pool or ATOM_POOL
    if depth <= 0 or rng.random() < 0.3:
        return rng.choice(pool + AGENTS)
    d = depth - 1
    op = rng.randrange(7)
    if op == 0:
        return Pair(random_term(rng, d, pool), random_term(rng, d, pool))
    if op == 1:
        key = rng.choice(pool + [random_term(rng, d, pool)])
        if isinstance(key, (Pk, Inv)):
            return AEnc(random_term(rng, d, pool), key)
        return SEnc(random_term(rng, d, pool), key)
    if op == 2:
        return AEnc(random_term(rng, d, pool), Pk(rng.choice(AGENTS)))
    if op == 3:
        return Sign(random_term(rng, d, pool), Inv(Pk(rng.choice(AGENTS))))
    if op == 4:
        return Hash(random_term(rng, d, pool))
    if op == 5:
        return Inv(Pk(rng.choice(AGENTS)))
    return Pk(rng.choice(AGENTS))


def random_kb_seeds(rng: random.Random, max_seeds: int = 6, depth: int = 3) -> list[Term]:
    return [random_term(rng, depth) for _ in range(rng.randint(1, max_seeds))]


def random_query(rng: random.Random, seeds, depth: int = 3) -> Term:
    """Queries biased towards the seeds' neighbourhood, where answers vary."""
    subs = sorted(_all_subterms(seeds), key=term_key)
    r = rng.random()
    if r < 0.4:
        return rng.choice(subs)
    if r < 0.7:
        a, b = rng.choice(subs), rng.choice(subs)
        return rng.choice([Pair(a, b), Hash(a), SEnc(a, b) if not isinstance(b, (Pk, Inv)) else AEnc(a, b)])
    return random_term(rng, depth)
