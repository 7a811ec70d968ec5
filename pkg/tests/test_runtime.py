from __future__ import annotations

import random
from dataclasses import replace

import pytest

from helpers import SHIPPED, model, reachable
from nrcheck.dsl import parse_protocol, parse_scenario
from nrcheck.model import Annotate
from nrcheck.runtime import (
    AknowsFact,
    AnnotationUnsound,
    ModelError,
    NotEnabled,
    enabled,
    initial_state,
    is_terminal,
    step,
    system_for,
)
from nrcheck.terms import AEnc, Atom, Hash, Inv, Pair, Pk, SEnc, Var, render, sig, tup

A, B, T = Atom("agent", "a"), Atom("agent", "b"), Atom("agent", "ttp")
M = Atom("payload", "M", ("s1", "A", "M"))
K = Atom("symkey", "K", ("s1", "A", "K"))
C = SEnc(M, K)
KA = AEnc(Pair(K, A), Pk(T))
EOO_M = sig(A, tup(B, T, Hash(C), KA))
EOR_M = sig(B, EOO_M)
EOR_K = sig(B, tup(A, Hash(C), K))
E_TTP = sig(T, tup(A, B, K, Hash(C)))


def first(ts, **attrs):
    for t in ts:
        if all(getattr(t, k) == v for k, v in attrs.items()):
            return t
    raise AssertionError(f"no transition with {attrs}")


def run(state, *choices):
    for attrs in choices:
        state = step(state, first(enabled(state), **attrs))
    return state


@pytest.fixture(scope="module")
def ccd():
    return model("ccd", "ccd_honest")


# -- initial state -------------------------------------------------------


def test_initial_intruder_knows_public_keys_only(ccd):
    s = initial_state(*ccd)
    for ag in (A, B, T):
        assert s.intruder.can_deduce(Pk(ag))
        assert not s.intruder.can_deduce(Inv(Pk(ag)))


def test_dishonest_agent_keys_seed_the_intruder():
    s = initial_state(*model("ccd", "ccd_b_dishonest"))
    assert s.intruder.can_deduce(Inv(Pk(B)))
    assert not s.intruder.can_deduce(Inv(Pk(A)))
    # a dishonest agent runs no script
    assert all(th.role != "B" for th in s.threads)


def test_honest_agents_know_their_keys_and_peers(ccd):
    s = initial_state(*ccd)
    kb = s.kb("s1", "A")
    assert kb.can_deduce(Inv(Pk(A))) and not kb.can_deduce(Inv(Pk(B)))
    assert kb.can_deduce(Pk(T)) and kb.can_deduce(B)
    assert s.fact_set() == frozenset() and s.store == frozenset()


def test_empty_scenario_has_no_transitions(ccd):
    spec, _ = ccd
    _, scn = model("ccd", "empty")
    s = initial_state(spec, scn)
    assert enabled(s) == [] and is_terminal(s)


# -- enabled -------------------------------------------------------------


def test_b_receives_only_the_genuine_first_message(ccd):
    s = run(initial_state(*ccd), dict(role="A", action="start"))
    recvs = [t for t in enabled(s) if t.role == "B" and t.action == "recv"]
    assert [t.message for t in recvs] == [Pair(C, EOO_M)]
    assert not is_terminal(s)


def test_abort_entry_while_waiting_for_receipt(ccd):
    s = run(initial_state(*ccd), dict(role="A", action="start"))
    assert first(enabled(s), role="A", action="enter", entry="abort")
    # resolve needs EOR_M, so it is not yet open for A
    assert all(t.entry != "resolve" for t in enabled(s) if t.role == "A")


def test_abort_closes_once_receipt_arrives(ccd):
    s = run(
        initial_state(*ccd),
        dict(role="A", action="start"),
        dict(role="B", thread="main", action="recv"),
        dict(role="A", thread="main", action="recv", message=EOR_M),
    )
    entries = {t.entry for t in enabled(s) if t.role == "A" and t.action == "enter"}
    assert entries == {"resolve"}


def test_enabled_is_sorted_and_deterministic(ccd):
    s = run(initial_state(*ccd), dict(role="A", action="start"))
    ts = enabled(s)
    assert ts == sorted(ts, key=lambda t: t.sort_key())
    assert ts == enabled(s)


# -- step ----------------------------------------------------------------


def honest_run(ccd):
    return run(
        initial_state(*ccd),
        dict(role="A", action="start"),
        dict(role="B", thread="main", action="recv"),
        dict(role="A", thread="main", action="recv", message=EOR_M),
        dict(role="B", thread="main", action="recv", message=K),
        dict(role="A", thread="main", action="recv", message=EOR_K),
    )


def test_main_step_three_annotates_key_at_b(ccd):
    s = honest_run(ccd)
    assert AknowsFact("b", "s1", K) in s.fact_set()
    assert AknowsFact("a", "s1", EOR_K) in s.fact_set()


def test_honest_main_run_completes(ccd):
    s = honest_run(ccd)
    sys = system_for(*ccd)
    for role in ("A", "B"):
        th = s.thread("s1", role, "main")
        assert th.script == "main" and th.pc == len(sys.code_of(th).code)


def test_abort_in_resolved_session_annotates_ttp_answer(ccd):
    s = run(
        initial_state(*ccd),
        dict(role="A", action="start"),
        dict(role="A", action="enter", entry="abort"),
        dict(role="B", thread="main", action="recv"),
        dict(role="TTP", thread="resolve[B]", action="recv", message=EOR_M),
        dict(role="TTP", thread="abort[A]", action="recv"),
        dict(role="A", thread="main", action="recv", message=E_TTP),
    )
    assert ("resolved", tup(A, B, K, Hash(C))) in s.store
    assert ("aborted", tup(A, B, K, Hash(C))) not in s.store
    assert AknowsFact("a", "s1", E_TTP) in s.fact_set()


def test_dy_sends_reach_the_intruder(ccd):
    s = run(initial_state(*ccd), dict(role="A", action="start"))
    assert s.intruder.can_deduce(Pair(C, EOO_M))
    assert not s.intruder.can_deduce(M)


def test_step_rejects_disabled_transition(ccd):
    s = initial_state(*ccd)
    t = first(enabled(run(s, dict(role="A", action="start"))), role="B", action="recv")
    with pytest.raises(NotEnabled):
        step(s, t)


PEEK = """
protocol peek
roles A, B
role A
sub main
  step 1
    annotate inv(pk(B))
"""


def _system(text, name):
    spec = parse_protocol(text)
    scn = parse_scenario(f"scenario x protocol {name} session s1 : A = a, B = b", None, spec)
    return system_for(spec, scn)


def test_annotation_of_undeducible_term_is_unsound():
    sys = _system(PEEK, "peek")
    s = sys.initial_state()
    with pytest.raises(AnnotationUnsound):
        sys.step(s, first(sys.enabled(s), role="A"))


def test_annotation_with_unbound_variable_is_unsound():
    # the static checker refuses this, so build the script by hand
    spec = parse_protocol(PEEK)
    script = spec.scripts[0]
    group = script.steps[0]
    bad = replace(script, steps=(replace(group, body=(Annotate((Var("Z"),)),)),))
    spec = replace(spec, scripts=(bad,))
    scn = parse_scenario("scenario x protocol peek session s1 : A = a, B = b", None, spec)
    sys = system_for(spec, scn)
    with pytest.raises(AnnotationUnsound):
        sys.step(sys.initial_state(), first(sys.enabled(sys.initial_state()), role="A"))


UNSOUND = """
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


def test_reading_a_value_the_agent_cannot_decrypt_is_a_model_error():
    sys = _system(UNSOUND, "leak")
    s = sys.step(sys.initial_state(), first(sys.enabled(sys.initial_state()), role="B"))
    # B's own ciphertext: A has no way to learn N
    genuine = next(t for t in sys.enabled(s) if t.role == "A" and render(t.message) == "{b}N@s1")
    with pytest.raises(ModelError, match="cannot read"):
        sys.step(s, genuine)


# -- whole-space invariants ------------------------------------------------


@pytest.mark.parametrize("proto_name,scn_name", SHIPPED)
def test_invariants_over_the_reachable_space(proto_name, scn_name):
    """Annotation soundness, store and fact monotonicity, pc progress and
    intruder omniscience on every edge of every shipped scenario."""
    spec, scn = model(proto_name, scn_name)
    sys = system_for(spec, scn)
    for s, succ in reachable(spec, scn):
        for t, c in succ:
            assert s.store <= c.store
            assert c.facts[: len(s.facts)] == s.facts
            assert s.intruder.facts <= c.intruder.facts
            for th in c.threads:
                before = s.thread(th.session, th.role, th.thread)
                assert before.script != th.script or before.pc <= th.pc
            for f in c.facts[len(s.facts):]:
                if isinstance(f, AknowsFact):
                    role = next(r for r, ag in scn.session(f.session).roles if ag == f.agent)
                    assert c.kb(f.session, role).can_deduce(f.term)
            effects: list = []
            again = sys.step(s, t, effects)
            assert again == c and again.digest() == c.digest()
            for e in effects:
                if e[0] == "send" and e[6] == "dy":
                    assert c.intruder.can_deduce(e[5])
        # first request wins: a session is never both aborted and resolved
        preds = {}
        for p, term in s.store:
            preds.setdefault(term, set()).add(p)
        assert all(len(v) == 1 for v in preds.values())


def test_random_walks_are_reproducible(ccd):
    sys = system_for(*ccd)
    for seed in range(20):
        rng = random.Random(seed)
        s, path = sys.initial_state(), []
        while True:
            ts = sys.enabled(s)
            if not ts:
                break
            t = rng.choice(ts)
            path.append(t)
            s = sys.step(s, t)
        r = sys.initial_state()
        for t in path:
            r = sys.step(r, t)
        assert r == s and r.canonical_text() == s.canonical_text()
