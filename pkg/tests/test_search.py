from __future__ import annotations

import random
from dataclasses import replace

import pytest

from helpers import SHIPPED, model, reachable
from nrcheck import formulas as F
from nrcheck.dsl import parse_protocol, parse_scenario
from nrcheck.knowledge import eval_term_formula
from nrcheck.model import Bounds, Property
from nrcheck.properties import builtin_properties, eval_formula, resolve_body
from nrcheck.runtime import system_for
from nrcheck.search import (
    ATTACK,
    BOUNDED,
    MODEL_ERROR,
    SAFE,
    DivergenceError,
    Trace,
    canonical_digest,
    explore,
    replay,
    walk,
)
from nrcheck.terms import Atom, Var, tup


def fairness(spec, scn):
    return builtin_properties(spec, [s.name for s in scn.sessions]).get("fairness")


@pytest.fixture(scope="module")
def attack1():
    spec, scn = model("ccd", "ccd_honest")
    return spec, scn, explore(spec, scn, fairness(spec, scn))


# -- digests ---------------------------------------------------------------


def test_digest_ignores_set_construction_order():
    spec, scn = model("ccd", "ccd_honest")
    s = system_for(spec, scn).initial_state()
    a, b = Atom("constant", "x"), Atom("constant", "y")
    one = replace(s, store=frozenset([("aborted", a), ("resolved", b)]), _key=[])
    two = replace(s, store=frozenset([("resolved", b), ("aborted", a)]), _key=[])
    assert canonical_digest(one) == canonical_digest(two)


def test_digest_sees_one_store_entry():
    spec, scn = model("ccd", "ccd_honest")
    s = system_for(spec, scn).initial_state()
    t = replace(s, store=frozenset([("aborted", Atom("constant", "x"))]), _key=[])
    assert canonical_digest(s) != canonical_digest(t)


def test_random_distinct_states_have_distinct_digests():
    """Reachable states perturbed with random stores and counters; any digest
    collision must come with structural equality."""
    rng = random.Random(7)
    base = []
    for proto_name, scn_name in SHIPPED:
        base.extend(s for s, _ in reachable(*model(proto_name, scn_name)))
    pool = [Atom("constant", n) for n in "pqrstu"]
    by_digest: dict = {}
    made = 0
    while made < 1000:
        s = rng.choice(base)
        store = frozenset(
            (rng.choice(["aborted", "resolved"]), tup(*rng.sample(pool, rng.randint(1, 3))))
            for _ in range(rng.randint(0, 3))
        )
        s = replace(s, store=store, fresh_used=rng.randint(0, 3), _key=[])
        d = canonical_digest(s)
        other = by_digest.setdefault(d, s)
        if other is not s:
            assert other == s, "digest collision between distinct states"
            continue
        made += 1
    assert len(by_digest) == 1000


# -- replay ------------------------------------------------------------------


def test_replay_of_empty_trace_is_the_initial_state():
    spec, scn = model("ccd", "ccd_honest")
    init = system_for(spec, scn).initial_state()
    assert replay(spec, scn, Trace(init.digest())) == init


def test_replay_against_another_scenario_diverges(attack1):
    spec, _, result = attack1
    _, other = model("ccd", "ccd_b_dishonest")
    with pytest.raises(DivergenceError):
        replay(spec, other, result.trace)


def test_replay_names_the_first_bad_transition(attack1):
    spec, scn, result = attack1
    ts = list(result.trace.transitions)
    ts[2], ts[3] = ts[3], ts[2]
    with pytest.raises(DivergenceError, match="transition"):
        replay(spec, scn, Trace(result.trace.initial_digest, tuple(ts)))


def test_attack_one_replays_to_unfair_knowledge(attack1):
    spec, scn, result = attack1
    assert result.verdict == ATTACK
    final = replay(spec, scn, result.trace)
    assert final == result.final_state
    sys = final.system
    nro = resolve_body(sys, spec.evidence_named("NRO").formula, "s1")
    nrr = resolve_body(sys, spec.evidence_named("NRR").formula, "s1")
    assert eval_term_formula(final.kb("s1", "B"), nro)
    assert not eval_term_formula(final.kb("s1", "A"), nrr)
    assert not sys.enabled(final)


def test_attack_one_resolve_reaches_ttp_before_abort(attack1):
    spec, scn, result = attack1
    order = [
        t.thread
        for t, effects, _ in walk(spec, scn, result.trace)
        if t.role == "TTP" and t.action == "recv"
    ]
    first_resolve = min(i for i, th in enumerate(order) if th.startswith("resolve"))
    assert first_resolve < order.index("abort[A]")


def test_attack_traces_falsify_the_violated_property():
    for proto_name, scn_name in [("ccd", "ccd_honest"), ("ccd", "ccd_b_dishonest")]:
        spec, scn = model(proto_name, scn_name)
        r = explore(spec, scn, fairness(spec, scn))
        final = replay(spec, scn, r.trace)
        assert not eval_formula(final, r.violated.formula)


# -- exploration ---------------------------------------------------------------


@pytest.mark.parametrize("proto_name,scn_name", SHIPPED)
def test_workers_do_not_change_the_outcome(proto_name, scn_name):
    spec, scn = model(proto_name, scn_name)
    p = fairness(spec, scn)
    one = explore(spec, scn, p, workers=1)
    many = explore(spec, scn, p, workers=8)
    assert one.verdict == many.verdict
    assert one.trace == many.trace
    assert one.stats.states == many.stats.states


@pytest.mark.parametrize("proto_name,scn_name", SHIPPED)
def test_full_exploration_matches_plain_enumeration(proto_name, scn_name):
    spec, scn = model(proto_name, scn_name)
    r = explore(spec, scn)
    states = list(reachable(spec, scn))
    assert r.verdict == SAFE
    assert r.stats.states == len(states)
    assert r.stats.terminals == sum(1 for _, succ in states if not succ)


def test_bfs_counterexample_is_minimal(attack1):
    spec, scn, result = attack1
    # no state at a smaller depth violates fairness at termination
    bounded = explore(spec, scn, fairness(spec, scn), Bounds(max_depth=len(result.trace) - 1))
    assert bounded.verdict != ATTACK


def test_depth_bound_is_reported():
    spec, scn = model("ccd", "ccd_honest")
    r = explore(spec, scn, None, Bounds(max_depth=1))
    assert r.verdict == BOUNDED and r.bound == "max_depth"


def test_state_bound_is_reported():
    spec, scn = model("ccd", "ccd_honest")
    r = explore(spec, scn, None, Bounds(max_states=10))
    assert r.verdict == BOUNDED and r.bound == "max_states"
    assert r.stats.states <= 10


def test_empty_scenario_is_one_terminal_state():
    spec, scn = model("ccd", "empty")
    r = explore(spec, scn, fairness(spec, scn))
    assert r.verdict == SAFE
    assert (r.stats.states, r.stats.terminals) == (1, 1)


def test_dfs_agrees_on_verdicts():
    for proto_name, scn_name in SHIPPED:
        spec, scn = model(proto_name, scn_name)
        p = fairness(spec, scn)
        b, d = explore(spec, scn, p), explore(spec, scn, p, search="dfs")
        assert b.verdict == d.verdict
        if d.verdict == ATTACK:
            assert len(d.trace) >= len(b.trace)
            assert not eval_formula(replay(spec, scn, d.trace), p.formula)


def test_unknown_search_strategy():
    spec, scn = model("ccd", "empty")
    with pytest.raises(ValueError):
        explore(spec, scn, search="random")


def test_safe_run_has_a_replayable_witness():
    spec, scn = model("fairzg", "fairzg_honest")
    r = explore(spec, scn, fairness(spec, scn))
    assert r.verdict == SAFE and r.witness is not None
    final = replay(spec, scn, r.witness)
    assert final == r.final_state and not final.system.enabled(final)
    assert eval_formula(final, fairness(spec, scn).formula)


def test_invariant_properties_are_checked_at_every_state():
    spec, scn = model("ccd", "ccd_honest")
    never_abort = F.Not(F.Aknows("A", "s1", Var("E_TTP")))
    r = explore(spec, scn, Property("p", "invariant", never_abort))
    assert r.verdict == ATTACK
    # terminal mode would need a complete run, which is longer
    t = explore(spec, scn, Property("p", "terminal", never_abort))
    assert t.verdict == ATTACK and len(t.trace) >= len(r.trace)


LEAK = """
protocol leak
roles A, B
fresh N : symkey @ B
role A
sub main
  step 1
    recv B: {X}Y
role B
sub main
  step 1
    fresh N
    send A: {B}N
"""


def test_model_errors_surface_with_their_trace():
    spec = parse_protocol(LEAK)
    scn = parse_scenario("scenario x protocol leak session s1 : A = a, B = b", None, spec)
    r = explore(spec, scn)
    assert r.verdict == MODEL_ERROR and "cannot read" in r.error
    last = r.trace.transitions[-1]
    assert last.role == "A" and last.action == "recv"
    with pytest.raises(Exception, match="cannot read"):
        replay(spec, scn, r.trace)
