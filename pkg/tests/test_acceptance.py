"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py`` for just the summary lines.
"""

from __future__ import annotations

import io
import random
import sys
import tempfile
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import (  # noqa: E402
    SHIPPED,
    model,
    oracle_deduce,
    props,
    proto,
    random_kb_seeds,
    random_query,
    random_term,
    reachable,
)
from nrcheck import formulas as F  # noqa: E402
from nrcheck.cli import main  # noqa: E402
from nrcheck.knowledge import KnowledgeBase, TAnd, TNot, TOr, eval_term_formula  # noqa: E402
from nrcheck.properties import builtin_properties, check_well_formed, eval_formula  # noqa: E402
from nrcheck.report import read_report  # noqa: E402
from nrcheck.runtime import system_for  # noqa: E402
from nrcheck.search import ATTACK, SAFE, explore, replay, walk  # noqa: E402
from nrcheck.terms import AEnc, Hash, Inv, Pair, Pk, SEnc, Sign, Var, match, substitute, subterms  # noqa: E402


def nrr_nro(state):
    return (
        eval_formula(state, F.Aknows("B", "s1", Var("NRO"))),
        eval_formula(state, F.Aknows("A", "s1", Var("NRR"))),
    )


def check_via_cli(proto_name: str, scn_name: str, *extra: str):
    """Run ``check`` as a user would and read the machine report back."""
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "run.jsonl"
        t0 = time.perf_counter()
        code = main(
            ["check", f"{proto_name}.proto", f"{scn_name}.scn", "--prop", "fairness", "--report", str(path), *extra],
            io.StringIO(),
            io.StringIO(),
        )
        elapsed = time.perf_counter() - t0
        return code, read_report(path), elapsed


def ttp_order(spec, scn, trace):
    """(index, handler thread, message) of every message the TTP consumes."""
    return [
        (i, t.thread, t.message)
        for i, (t, _, _) in enumerate(walk(spec, scn, trace))
        if t.role == "TTP" and t.action == "recv"
    ]


# ---------------------------------------------------------------------------
# criteria


def criterion_1():
    code, rep, elapsed = check_via_cli("ccd", "ccd_honest")
    if code != 1 or rep.verdict != ATTACK:
        return False, f"verdict {rep.verdict}, exit {code}"
    spec, scn = model("ccd", "ccd_honest")
    order = ttp_order(spec, scn, rep.trace)
    resolves = [i for i, th, _ in order if th.startswith("resolve")]
    aborts = [i for i, th, _ in order if th == "abort[A]"]
    race = bool(resolves) and bool(aborts) and min(resolves) < min(aborts)
    final = replay(spec, scn, rep.trace)
    b_nro, a_nrr = nrr_nro(final)
    ok = race and b_nro and not a_nrr and elapsed < 60 and rep.stats["states"] < 10**6
    return ok, (
        f"{len(rep.trace)} steps, resolve before abort: {race}, "
        f"aknows(B,NRO)={b_nro} aknows(A,NRR)={a_nrr}, {rep.stats['states']} states, {elapsed:.2f}s"
    )


def criterion_2():
    code, rep, elapsed = check_via_cli("ccd", "ccd_b_dishonest")
    if code != 1 or rep.verdict != ATTACK:
        return False, f"verdict {rep.verdict}, exit {code}"
    spec, scn = model("ccd", "ccd_b_dishonest")
    steps = list(walk(spec, scn, rep.trace))
    sent = next(i for i, (t, _, _) in enumerate(steps) if t.role == "A" and t.action == "start")
    eor_m = substitute(spec.let_map()["EOR_M"], system_for(spec, scn).session_binding("s1"))
    order = ttp_order(spec, scn, rep.trace)
    submitted = [i for i, th, m in order if th.startswith("resolve") and m is eor_m]
    aborts = [i for i, th, _ in order if th == "abort[A]"]
    timely = bool(submitted) and submitted[0] > sent and (not aborts or submitted[0] < aborts[0])
    final = steps[-1][2]
    nrr = eval_formula(final, F.Deduce("A", "s1", Var("NRR")))
    ok = timely and not nrr and elapsed < 60
    return ok, f"{len(rep.trace)} steps, intruder resolve before abort: {timely}, deduce(A,NRR)={nrr}, {elapsed:.2f}s"


def criterion_3():
    code, rep, elapsed = check_via_cli("ccd_secure_ttp", "ccd_honest")
    ok = code == 0 and rep.verdict == SAFE and rep.bound is None
    detail = f"verdict {rep.verdict}, {rep.stats['states']} states, {elapsed:.2f}s"
    if rep.verdict == ATTACK:
        spec, scn = model("ccd_secure_ttp", "ccd_honest")
        b_nro, a_nrr = nrr_nro(replay(spec, scn, rep.trace))
        detail += f"; {len(rep.trace)}-step trace ends with aknows(B,NRO)={b_nro} aknows(A,NRR)={a_nrr}"
    return ok, detail


def criterion_4():
    spec, scn = model("ccd", "ccd_honest")
    pf = builtin_properties(spec, ["s1"])
    terminals = [s for s, succ in reachable(spec, scn) if not succ]
    clean = [
        s
        for s in terminals
        if all(
            th.script == "main" and th.pc == len(s.system.code_of(th).code)
            for th in s.threads
            if th.thread == "main"
        )
    ]
    clean_fair = bool(clean) and all(eval_formula(s, pf.get("fairness").formula) for s in clean)
    services = all(
        eval_formula(s, pf.get("nro").formula) and eval_formula(s, pf.get("nrr").formula) for s in terminals
    )
    return clean_fair and services, (
        f"{len(terminals)} terminals, {len(clean)} clean completions fair: {clean_fair}, "
        f"NRO/NRR pairs at all terminals: {services}"
    )


def criterion_5():
    spec, scn = model("fairzg", "fairzg_honest")
    pf = props("fairzg")
    names = ["auth_b_a_nro", "auth_b_ttp_conk", "auth_ttp_a_subk", "auth_a_b_nrr", "auth_a_ttp_conk"]
    services = builtin_properties(spec, ["s1"]).get("nr").formula
    states = list(reachable(spec, scn))
    auth_ok = all(eval_formula(s, pf.get(n).formula) for s, _ in states for n in names)
    terminals = [s for s, succ in states if not succ]
    nr_ok = bool(terminals) and all(eval_formula(s, services) for s in terminals)
    full = explore(spec, scn).verdict == SAFE
    return auth_ok and nr_ok and full, (
        f"{len(states)} states, five auth properties everywhere: {auth_ok}, "
        f"NR services at {len(terminals)} terminals: {nr_ok}"
    )


def criterion_6():
    rng = random.Random(20240611)
    t0 = time.perf_counter()
    mismatches = positives = 0
    for _ in range(500):
        seeds = random_kb_seeds(rng, max_seeds=6, depth=3)
        kb = KnowledgeBase(seeds)
        for _ in range(20):
            q = random_query(rng, seeds)
            got, want = kb.can_deduce(q), oracle_deduce(seeds, q)
            mismatches += got != want
            positives += want
    elapsed = time.perf_counter() - t0
    return mismatches == 0 and elapsed < 30, (
        f"10000 queries, {mismatches} mismatches, {positives} deducible, {elapsed:.2f}s"
    )


def criterion_7():
    runs = [("ccd", "ccd_honest"), ("ccd", "ccd_b_dishonest"), ("ccd_secure_ttp", "ccd_honest")]
    diffs = []
    for proto_name, scn_name in runs:
        spec, scn = model(proto_name, scn_name)
        p = builtin_properties(spec, ["s1"]).get("fairness")
        seen = set()
        for _ in range(5):
            for workers in (1, 8):
                r = explore(spec, scn, p, workers=workers)
                seen.add((r.verdict, r.trace))
        if len(seen) != 1:
            diffs.append(f"{proto_name}/{scn_name}")
    return not diffs, "identical across 5 repeats x {1, 8} workers" if not diffs else f"differs: {diffs}"


def criterion_8():
    rng = random.Random(8)
    failures = []

    # homomorphism laws of term formulas
    for _ in range(300):
        seeds = random_kb_seeds(rng)
        kb = KnowledgeBase(seeds)
        a, b = random_query(rng, seeds), random_query(rng, seeds)
        ev = lambda f: eval_term_formula(kb, f)  # noqa: E731
        if not (
            ev(TAnd(a, b)) == (ev(a) and ev(b))
            and ev(TOr(a, b)) == (ev(a) or ev(b))
            and ev(TNot(a)) == (not ev(a))
        ):
            failures.append("homomorphism")
            break

    # saturation: idempotent, closed, monotone
    for _ in range(300):
        seeds = random_kb_seeds(rng)
        kb = KnowledgeBase(seeds)
        t = random_term(rng, 3)
        once = kb.add(t)
        small = KnowledgeBase(seeds[: len(seeds) // 2])
        q = random_query(rng, seeds)
        closed = all(
            (not isinstance(f, Pair) or (f.left in once and f.right in once))
            and (not isinstance(f, Sign) or f.body in once)
            for f in once
        )
        if once.add(t) != once or not set(kb) <= set(once) or not closed or (
            small.can_deduce(q) and not kb.can_deduce(q)
        ):
            failures.append("saturation")
            break

    # match / substitute round trip
    X, Y = Var("X"), Var("Y")
    shapes = [
        lambda: Pair(X, Hash(Y)),
        lambda: SEnc(Pair(X, Y), random_term(rng, 0)),
        lambda: Sign(Pair(X, X), Inv(Pk(random_term(rng, 0)))),
        lambda: AEnc(Hash(Pair(Y, X)), Pk(random_term(rng, 0))),
    ]
    for _ in range(300):
        try:
            p = rng.choice(shapes)()
        except Exception:
            continue
        names = {v.name for v in subterms(p) if isinstance(v, Var)}
        binding = {n: random_term(rng, 2) for n in names}
        t = substitute(p, binding)
        got = match(p, t)
        if got != binding or substitute(p, got) is not t:
            failures.append("match/substitute")
            break

    # annotation soundness over every shipped scenario
    for proto_name, scn_name in SHIPPED:
        r = explore(*model(proto_name, scn_name))
        if r.verdict != SAFE:
            failures.append(f"annotation soundness on {proto_name}/{scn_name}: {r.verdict} {r.error}")

    # shipped evidence is well formed
    for name in ("ccd", "ccd_secure_ttp", "fairzg"):
        spec = proto(name)
        for ev in spec.evidence:
            if not check_well_formed(ev, spec):
                failures.append(f"well-formedness of {name}.{ev.name}")
    return not failures, "all invariant suites hold" if not failures else "; ".join(failures)


CRITERIA = [
    (1, "attack 1: resolve reaches the TTP before the abort", criterion_1),
    (2, "attack 2: dishonest B resolves right after step 1", criterion_2),
    (3, "secure TTP channels: no attack within bounds", criterion_3),
    (4, "honest CCD completion is fair, NRO/NRR pairs hold", criterion_4),
    (5, "FairZG authentication premises and NR services", criterion_5),
    (6, "deduction agrees with the brute-force oracle", criterion_6),
    (7, "verdicts and traces independent of workers", criterion_7),
    (8, "invariant suites", criterion_8),
]


def line(num: int, title: str, ok: bool, detail: str) -> str:
    return f"{'PASS' if ok else 'FAIL'} criterion {num}: {title} ({detail})"


@pytest.mark.parametrize("num,title,fn", CRITERIA, ids=[f"criterion_{n}" for n, _, _ in CRITERIA])
def test_criterion(num, title, fn, capsys):
    ok, detail = fn()
    with capsys.disabled():
        print("\n" + line(num, title, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for num, title, fn in CRITERIA:
        ok, detail = fn()
        results.append(ok)
        print(line(num, title, ok, detail))
    sys.exit(0 if all(results) else 1)
