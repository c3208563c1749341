"""The toy arithmetic signature shared by the corpus generator and policies.

Successor-coded naturals with addition, multiplication, doubling, and
tripling. The recursive defining equations below are the corpus base axioms
and double as the "internalized basic facts" reference policies may rewrite
with when synthesizing lemma statements from a goal.
"""

from __future__ import annotations

from .kernel import Statement
from .terms import App, Term, parse_term

BASE_AXIOMS: tuple[Statement, ...] = tuple(
    Statement(name, parse_term(lhs), parse_term(rhs))
    for name, lhs, rhs in [
        ("add_Z", "add(0, y)", "y"),
        ("add_S", "add(S(x), y)", "S(add(x, y))"),
        ("mul_Z", "mul(0, y)", "0"),
        ("mul_S", "mul(S(x), y)", "add(y, mul(x, y))"),
        ("dbl_Z", "dbl(0)", "0"),
        ("dbl_S", "dbl(S(x))", "S(S(dbl(x)))"),
        ("tri_Z", "tri(0)", "0"),
        ("tri_S", "tri(S(x))", "S(S(S(tri(x))))"),
    ]
)

SIMPLE_NAMES: tuple[str, ...] = tuple(s.name for s in BASE_AXIOMS)

ZERO = App("0")


def numeral(n: int) -> Term:
    t: Term = ZERO
    for _ in range(n):
        t = App("S", (t,))
    return t


def succ(t: Term, times: int = 1) -> Term:
    for _ in range(times):
        t = App("S", (t,))
    return t
