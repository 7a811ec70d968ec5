"""What can the intruder learn from the messages of one CCD run?

Knowledge is a set of terms closed under decomposition (projections,
decryption with a known key, reading signed bodies).  A query is answered
by composing from that set.  This demo walks through the first message of
the CCD protocol and shows which secrets stay out of reach.

Run with:  python demos/intruder_knowledge.py
"""

from __future__ import annotations

from nrcheck import KnowledgeBase, parse_term
from nrcheck.dsl import TermContext
from nrcheck.knowledge import TAnd, TOr, eval_term_formula
from nrcheck.terms import Atom, render

a, b, ttp = (Atom("agent", n) for n in ("a", "b", "ttp"))
M = Atom("payload", "M", ("s1", "A", "M"))
K = Atom("symkey", "K", ("s1", "A", "K"))


def term(text: str):
    # upper-case M and K are this session's values, a, b, ttp are agents
    ctx = TermContext(
        upper=lambda n, tok: {"M": M, "K": K}[n],
        lower=lambda n, tok: Atom("agent", n) if n in ("a", "b", "ttp") else Atom("constant", n),
    )
    return parse_term(text, ctx)


C = term("{M}K")
EOO = term("sig(a, b.ttp.h({M}K).{K.a}pk(ttp))")
EOR = term("sig(b, sig(a, b.ttp.h({M}K).{K.a}pk(ttp)))")

if __name__ == "__main__":
    public = [a, b, ttp, term("pk(a)"), term("pk(b)"), term("pk(ttp)")]
    kb = KnowledgeBase(public).add(C, EOO)
    print("the intruder saw:", render(C), "and", render(EOO))
    for q in ("h({M}K)", "{K.a}pk(ttp)", "K", "M", "sig(b, sig(a, b.ttp.h({M}K).{K.a}pk(ttp)))"):
        print(f"  can deduce {q:45} {kb.can_deduce(term(q))}")

    # once K is revealed on the wire, the payload follows
    later = kb.add(K)
    print("after step 3 the intruder also has K:  M deducible =", later.can_deduce(M))

    # the receipt evidence is a formula over terms, evaluated leaf by leaf
    E_TTP = term("sig(ttp, a.b.K.h({M}K))")
    nrr = TAnd(TAnd(C, EOR), TOr(term("sig(b, a.h({M}K).K)"), E_TTP))
    a_kb = KnowledgeBase(public + [term("inv(pk(a))"), M, K, C, EOO, E_TTP])
    print("A holds the TTP affidavit but no receipt: NRR =", eval_term_formula(a_kb, nrr))
    print("with the receipt as well:                NRR =", eval_term_formula(a_kb.add(EOR), nrr))
