"""Bounded exhaustive exploration with minimal counterexamples."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .model import Bounds, Property, PropertyFile, ProtocolSpec, Scenario
from .properties import eval_formula
from .runtime import GlobalState, ModelError, System, Transition, system_for

SAFE = "safe_within_bounds"
ATTACK = "attack"
BOUNDED = "bound_exhausted"
MODEL_ERROR = "model_error"


class DivergenceError(RuntimeError):
    """A trace does not replay against the given protocol and scenario."""


@dataclass(frozen=True)
class Trace:
    initial_digest: str
    transitions: tuple[Transition, ...] = ()

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class Stats:
    states: int = 0
    terminals: int = 0
    transitions: int = 0
    max_depth: int = 0
    wall_ms: float = 0.0
    workers: int = 1
    search: str = "bfs"

    def as_record(self) -> dict:
        return {
            "states": self.states,
            "terminals": self.terminals,
            "transitions": self.transitions,
            "depth": self.max_depth,
            "milliseconds": round(self.wall_ms, 1),
            "workers": self.workers,
            "search": self.search,
        }


@dataclass
class ExplorationResult:
    verdict: str
    stats: Stats
    trace: Optional[Trace] = None
    violated: Optional[Property] = None
    bound: Optional[str] = None
    error: Optional[str] = None
    final_state: Optional[GlobalState] = field(default=None, repr=False)
    # for runs without a violation: the path to a deepest terminal state
    witness: Optional[Trace] = None

    @property
    def is_attack(self) -> bool:
        return self.verdict == ATTACK


def canonical_digest(state: GlobalState) -> str:
    """Digest of the canonical rendering: equal for structurally equal states."""
    return state.digest()


def _properties(props) -> list[Property]:
    if props is None:
        return []
    if isinstance(props, PropertyFile):
        return list(props.properties)
    if isinstance(props, Property):
        return [props]
    return list(props)


def _violated(state: GlobalState, props: list[Property], terminal: bool) -> Optional[Property]:
    for p in props:
        if p.mode == "invariant" or terminal:
            if not eval_formula(state, p.formula):
                return p
    return None


def _expand(system: System, state: GlobalState):
    """Successors in transition order; a model error ends the expansion."""
    out = []
    try:
        for t in system.enabled(state):
            out.append((t, system.step(state, t)))
    except ModelError as exc:
        return out, (t, exc)
    return out, None


def explore(
    spec: ProtocolSpec,
    scn: Scenario,
    props=None,
    bounds: Optional[Bounds] = None,
    *,
    workers: int = 1,
    search: str = "bfs",
) -> ExplorationResult:
    """Explore every reachable state within ``bounds``.

    Invariant properties are checked at each state and terminal ones at each
    state without enabled transitions.  Breadth-first search proceeds level
    by level, so the first violation found has minimal depth; ties are
    broken by the order on transitions, independently of ``workers``.
    """
    if bounds is not None and bounds != scn.bounds:
        scn = scn.with_bounds(**bounds.__dict__)
    system = system_for(spec, scn)
    bounds = scn.bounds
    plist = _properties(props)
    if search == "bfs":
        return _bfs(system, plist, bounds, max(1, workers))
    if search == "dfs":
        return _dfs(system, plist, bounds)
    raise ValueError(f"unknown search strategy {search!r}")


def _trace_to(parents: dict, state: GlobalState, initial: GlobalState, extra: Iterable[Transition] = ()) -> Trace:
    path = []
    while parents[state] is not None:
        state, t = parents[state]
        path.append(t)
    path.reverse()
    path.extend(extra)
    return Trace(initial.digest(), tuple(path))


def _bfs(system: System, props: list[Property], bounds: Bounds, workers: int) -> ExplorationResult:
    t0 = time.perf_counter()
    stats = Stats(workers=workers, search="bfs")
    initial = system.initial_state()
    parents: dict = {initial: None}
    frontier = [initial]
    depth = 0
    bound_hit = None
    deepest, deepest_depth = None, -1
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def finish(verdict, **kw) -> ExplorationResult:
        if pool is not None:
            pool.shutdown()
        stats.states = len(parents)
        stats.wall_ms = (time.perf_counter() - t0) * 1000
        if verdict != ATTACK and deepest is not None:
            kw.setdefault("witness", _trace_to(parents, deepest, initial))
            kw.setdefault("final_state", deepest)
        return ExplorationResult(verdict, stats, **kw)

    try:
        while frontier:
            stats.max_depth = depth
            if pool is not None and len(frontier) > 1:
                expansions = list(pool.map(lambda s: _expand(system, s), frontier))
            else:
                expansions = [_expand(system, s) for s in frontier]
            nxt = []
            for state, (succ, failure) in zip(frontier, expansions):
                terminal = not succ and failure is None
                if terminal:
                    stats.terminals += 1
                    if depth > deepest_depth:
                        deepest, deepest_depth = state, depth
                bad = _violated(state, props, terminal)
                if bad is not None:
                    return finish(ATTACK, trace=_trace_to(parents, state, initial), violated=bad, final_state=state)
                if failure is not None:
                    t, exc = failure
                    return finish(
                        MODEL_ERROR,
                        trace=_trace_to(parents, state, initial, (t,)),
                        error=f"{type(exc).__name__}: {exc}",
                        final_state=state,
                    )
                if not succ:
                    continue
                if depth >= bounds.max_depth:
                    bound_hit = bound_hit or "max_depth"
                    continue
                for t, child in succ:
                    stats.transitions += 1
                    if child in parents:
                        continue
                    if len(parents) >= bounds.max_states:
                        bound_hit = "max_states"
                        return finish(BOUNDED, bound=bound_hit)
                    parents[child] = (state, t)
                    nxt.append(child)
            frontier = nxt
            depth += 1
    finally:
        if pool is not None:
            pool.shutdown()
    if bound_hit:
        return finish(BOUNDED, bound=bound_hit)
    return finish(SAFE)


def _dfs(system: System, props: list[Property], bounds: Bounds) -> ExplorationResult:
    t0 = time.perf_counter()
    stats = Stats(search="dfs")
    initial = system.initial_state()
    parents: dict = {initial: None}
    depth_of = {initial: 0}
    stack = [initial]
    bound_hit = None
    deepest, deepest_depth = None, -1

    def finish(verdict, **kw) -> ExplorationResult:
        stats.states = len(parents)
        stats.wall_ms = (time.perf_counter() - t0) * 1000
        if verdict != ATTACK and deepest is not None:
            kw.setdefault("witness", _trace_to(parents, deepest, initial))
            kw.setdefault("final_state", deepest)
        return ExplorationResult(verdict, stats, **kw)

    while stack:
        state = stack.pop()
        d = depth_of[state]
        stats.max_depth = max(stats.max_depth, d)
        succ, failure = _expand(system, state)
        terminal = not succ and failure is None
        if terminal:
            stats.terminals += 1
            if d > deepest_depth:
                deepest, deepest_depth = state, d
        bad = _violated(state, props, terminal)
        if bad is not None:
            return finish(ATTACK, trace=_trace_to(parents, state, initial), violated=bad, final_state=state)
        if failure is not None:
            t, exc = failure
            return finish(
                MODEL_ERROR,
                trace=_trace_to(parents, state, initial, (t,)),
                error=f"{type(exc).__name__}: {exc}",
                final_state=state,
            )
        if succ and d >= bounds.max_depth:
            bound_hit = bound_hit or "max_depth"
            continue
        for t, child in reversed(succ):
            stats.transitions += 1
            if child in parents:
                continue
            if len(parents) >= bounds.max_states:
                return finish(BOUNDED, bound="max_states")
            parents[child] = (state, t)
            depth_of[child] = d + 1
            stack.append(child)
    if bound_hit:
        return finish(BOUNDED, bound=bound_hit)
    return finish(SAFE)


def replay(spec: ProtocolSpec, scn: Scenario, trace: Trace) -> GlobalState:
    """Re-execute ``trace``; every transition must be enabled when applied."""
    system = system_for(spec, scn)
    state = system.initial_state()
    if trace.initial_digest and trace.initial_digest != state.digest():
        raise DivergenceError("initial state digest differs: trace was produced for another model or scenario")
    for i, t in enumerate(trace.transitions, 1):
        if t not in system.enabled(state):
            raise DivergenceError(f"transition {i} is not enabled: {t.describe()}")
        state = system.step(state, t)
    return state


def walk(spec: ProtocolSpec, scn: Scenario, trace: Trace):
    """Replay yielding ``(transition, effects, state)`` for each step."""
    system = system_for(spec, scn)
    state = replay(spec, scn, Trace(trace.initial_digest, ()))
    for i, t in enumerate(trace.transitions, 1):
        if t not in system.enabled(state):
            raise DivergenceError(f"transition {i} is not enabled: {t.describe()}")
        effects: list = []
        state = system.step(state, t, effects)
        yield t, effects, state
