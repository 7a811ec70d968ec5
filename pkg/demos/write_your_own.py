"""Model a small protocol from scratch and check it with the library API.

A courier protocol: A sends a document under a fresh key to B, B returns a
signed acknowledgement, and only then does A release the key.  We declare
origin and receipt evidence, let the checker generate the fairness property
and explore every interleaving with an active intruder.

Fairness is checked on complete runs by default, that is in states where
nothing more can happen.  An intruder that merely delays messages cannot
break it here: the key stays on the wire and B always receives it in the
end.  The stricter form checks both implications in every state, and there
the checker finds the moment when A already holds the acknowledgement
while B still waits for the key.

Run with:  python demos/write_your_own.py
"""

from __future__ import annotations

import nrcheck
from nrcheck import formulas as F
from nrcheck.report import render_trace

COURIER = """
protocol courier
roles A, B
fresh D : payload @ A
fresh K : symkey @ A

let C   = {D}K
let ORG = sig(A, B.h(C))
let ACK = sig(B, A.h(C))

evidence NRO : origin for B against A about D = C & ORG & K
evidence NRR : receipt for A against B about D = C & ACK

role A
sub main
  step 1
    send B: C.ORG
    annotate C, D
  step 2
    recv B: ACK
    annotate ACK
  step 3
    send B: K

role B
sub main
  step 1
    recv A: X.sig(A, B.h(X))
    annotate X, sig(A, B.h(X))
  step 2
    send A: sig(B, A.h(X))
  step 3
    recv A: K where X = {D}K
    annotate K, D
"""

SCENARIO = """
scenario one
protocol courier
session s1 : A = alice, B = bob
bounds max_depth 20 fresh 1
"""

if __name__ == "__main__":
    spec = nrcheck.parse_protocol(COURIER)
    scn = nrcheck.parse_scenario(SCENARIO, None, spec)

    for ev in spec.evidence:
        wf = nrcheck.check_well_formed(ev, spec)
        print(f"{ev.name} well formed: {bool(wf)} {wf.diagnostics or ''}")

    props = nrcheck.builtin_properties(spec, ["s1"])
    for p in props.properties:
        print(f"{p.name} ({p.mode}): {F.render_formula(p.formula)}")
    print()

    # complete runs: every property holds
    for p in props.properties:
        r = nrcheck.explore(spec, scn, p)
        print(f"{p.name}: {r.verdict} ({r.stats.states} states, {r.stats.terminals} complete runs)")
    print()

    nro, nrr = spec.evidence_named("NRO"), spec.evidence_named("NRR")
    always = nrcheck.fairness_property(nro, nrr, "s1", mode="invariant")
    print(f"fairness in every state: {F.render_formula(always.formula)}")
    result = nrcheck.explore(spec, scn, always)
    print(f"verdict: {result.verdict}")
    for line in render_trace(spec, scn, result.trace):
        print(line)
