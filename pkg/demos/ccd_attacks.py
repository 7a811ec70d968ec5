"""Find the two fairness attacks on the CCD optimistic exchange.

A sends {M}K with its evidence of origin, B answers with a receipt, then A
releases K.  When something goes wrong either side can turn to the TTP:
A can abort before B's receipt arrives, and both can ask for a resolve.

This demo asks the checker whether the two parties always end up holding
their evidence together, first with honest agents only, then with B
working for the intruder.  In both cases it reports a counterexample and
we replay it to see who can prove what at the end.

Run with:  python demos/ccd_attacks.py
"""

from __future__ import annotations

from pathlib import Path

import nrcheck
from nrcheck import formulas as F
from nrcheck.report import render_trace
from nrcheck.terms import Var

CORPUS = Path(nrcheck.__file__).parent / "corpus"


def check(scenario: str) -> None:
    spec = nrcheck.load_protocol(CORPUS / "ccd.proto")
    scn = nrcheck.load_scenario(CORPUS / f"{scenario}.scn", spec)
    fairness = nrcheck.builtin_properties(spec, ["s1"]).get("fairness")
    print(f"== {scenario}: {F.render_formula(fairness.formula)}")

    result = nrcheck.explore(spec, scn, fairness)
    print(f"verdict {result.verdict} after {result.stats.states} states")
    for line in render_trace(spec, scn, result.trace):
        print(line)

    # replaying is deterministic, so the final state is the one the search saw
    final = nrcheck.replay(spec, scn, result.trace)
    for owner, ev in (("B", "NRO"), ("A", "NRR")):
        f = F.Aknows(owner, "s1", Var(ev))
        print(f"  {F.render_formula(f)} = {nrcheck.eval_formula(final, f)}")
    print()


if __name__ == "__main__":
    # B's receipt reaches the TTP as a resolve before A's abort does: the TTP
    # answers A's abort with the key affidavit, but A never saw the receipt.
    check("ccd_honest")
    # With b dishonest the intruder builds the receipt itself and resolves
    # straight after the first message.
    check("ccd_b_dishonest")
