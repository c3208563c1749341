"""Equational proof kernel: named equation facts, rewrite proofs, verification.

Statements are implicitly universally quantified equations ``lhs = rhs`` with
every right-hand variable bound on the left. A proof transforms the goal's
left-hand side toward its right-hand side with three step kinds:

* ``rw fact at 0.1 <-``  rewrite at a subterm path, forward or backward;
* ``auto 500``           bounded breadth-first rewrite search to the goal;
* ``refl``               close the goal when the current term equals the rhs.

Verification never raises for bad proofs; outcomes are reported in a
:class:`VerifierResult` with one of the diagnostic reason categories below.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .terms import (
    App,
    Path,
    Term,
    TermError,
    Var,
    is_variable_name,
    match,
    parse_term,
    positions,
    replace_at,
    subterm_at,
    substitute,
    term_text,
    variables,
)

FORWARD = "forward"
BACKWARD = "backward"

REASON_NO_MATCH = "no-match"
REASON_UNKNOWN_FACT = "unknown-fact"
REASON_BUDGET = "budget-exhausted"
REASON_NOT_CLOSED = "goal-not-closed"
REASON_PARSE = "parse-error"
# Used by the proof-tree layer for a proposal name that shadows an existing
# fact; listed here so all diagnostic categories live in one place.
REASON_PROPOSAL_COLLISION = "proposal-collision"

ORIGIN_AXIOM = "axiom"
ORIGIN_PREMISE = "premise"
ORIGIN_CONTEXT = "context-lemma"
ORIGIN_ASSUMED = "assumed-lemma"
_ORIGINS = (ORIGIN_AXIOM, ORIGIN_PREMISE, ORIGIN_CONTEXT, ORIGIN_ASSUMED)

DEFAULT_AUTO_BUDGET = 500
# Successors grown past max(|start|, |target|) + slack are pruned during
# auto search; bounds the blowup from term-duplicating rules (mul unfolds
# its second argument) and keeps reachable sets small enough that failed
# searches exhaust them quickly.
DEFAULT_AUTO_SIZE_SLACK = 5


class KernelError(ValueError):
    """Malformed statement/step text or an invalid construction."""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.position = position


class RewriteError(KernelError):
    """A rewrite that does not apply: no-match, invalid-path, variable-capture."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True, slots=True)
class Statement:
    """A named, implicitly universally quantified equation."""

    name: str
    lhs: Term
    rhs: Term

    def __post_init__(self):
        if is_variable_name(self.name) or not re.match(r"[A-Za-z0-9_]+\Z", self.name):
            raise KernelError(f"bad statement name: {self.name!r}")
        extra = variables(self.rhs) - variables(self.lhs)
        if extra:
            raise KernelError(
                f"{self.name}: rhs variables {sorted(extra)} unbound on the lhs"
            )

    def text(self, keyword: str = "lemma") -> str:
        return f"{keyword} {self.name}: {term_text(self.lhs)} = {term_text(self.rhs)}"

    def canonical_key(self) -> str:
        """Equation text with variables renamed in first-occurrence order.

        Names are ignored, so two statements compare equal exactly when they
        are the same equation up to variable renaming.
        """
        renaming: dict[str, Term] = {}

        def canon(t: Term) -> Term:
            if isinstance(t, Var):
                if t.name not in renaming:
                    renaming[t.name] = Var(f"v{len(renaming)}")
                return renaming[t.name]
            if not t.args:
                return t
            return App(t.symbol, tuple(canon(a) for a in t.args))

        lhs = canon(self.lhs)
        rhs = canon(self.rhs)
        return f"{term_text(lhs)} = {term_text(rhs)}"


def parse_statement(text: str, keywords: Sequence[str] = ("lemma", "theorem")) -> Statement:
    m = re.match(r"\s*([a-z_]+)\s+([A-Za-z0-9_]+)\s*:(.*)\Z", text, re.S)
    if m is None or m.group(1) not in keywords:
        raise KernelError(f"expected '{'/'.join(keywords)} name: lhs = rhs'", 0)
    name = m.group(2)
    body = m.group(3)
    eq = _split_equation(body)
    return Statement(name, parse_term(eq[0]), parse_term(eq[1]))


def _split_equation(body: str) -> tuple[str, str]:
    depth = 0
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "=" and depth == 0:
            return body[:i], body[i + 1 :]
    raise KernelError("missing '=' in equation", 0)


@dataclass(frozen=True, slots=True)
class Fact:
    origin: str
    statement: Statement

    def __post_init__(self):
        if self.origin not in _ORIGINS:
            raise KernelError(f"bad fact origin: {self.origin!r}")


class FactEnv:
    """An immutable named-fact environment with a precomputed rewrite index."""

    __slots__ = ("facts", "_by_name", "_key", "_index")

    def __init__(self, facts: Iterable[Fact] = ()):
        self.facts: tuple[Fact, ...] = tuple(facts)
        self._by_name: dict[str, Fact] = {}
        for f in self.facts:
            if f.statement.name in self._by_name:
                raise KernelError(f"duplicate fact name: {f.statement.name}")
            self._by_name[f.statement.name] = f
        self._key = None
        self._index = None

    def get(self, name: str) -> Optional[Fact]:
        return self._by_name.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self.facts)

    def names(self) -> tuple[str, ...]:
        return tuple(self._by_name)

    def extended(self, facts: Iterable[Fact]) -> "FactEnv":
        return FactEnv(self.facts + tuple(facts))

    def key(self) -> tuple:
        """Stable fingerprint used to memoize search results."""
        if self._key is None:
            self._key = tuple(
                sorted((f.statement.name, f.statement.canonical_key()) for f in self.facts)
            )
        return self._key

    def rewrite_index(self):
        """Oriented rewrite candidates grouped per fact, facts sorted by name.

        Each group lists (direction, source, template, template var counts)
        with forward before backward; the per-variable occurrence counts let
        the search size a substituted template without building it. Backward
        entries whose target has unbound variables are omitted since they
        can never apply (variable-capture).
        """
        if self._index is None:
            index = []
            for f in sorted(self.facts, key=lambda f: f.statement.name):
                s = f.statement
                oriented = [(FORWARD, s.lhs, s.rhs, _var_counts(s.rhs))]
                if not (variables(s.lhs) - variables(s.rhs)):
                    oriented.append((BACKWARD, s.rhs, s.lhs, _var_counts(s.lhs)))
                index.append((s.name, oriented))
            self._index = index
        return self._index


def _var_counts(term: Term) -> tuple[tuple[str, int], ...]:
    counts: dict[str, int] = {}
    stack = [term]
    while stack:
        t = stack.pop()
        if isinstance(t, Var):
            counts[t.name] = counts.get(t.name, 0) + 1
        else:
            stack.extend(t.args)
    return tuple(counts.items())


# --- proof steps -------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Rewrite:
    fact: str
    path: Path = ()
    direction: str = FORWARD

    def __post_init__(self):
        if self.direction not in (FORWARD, BACKWARD):
            raise KernelError(f"bad direction: {self.direction!r}")


@dataclass(frozen=True, slots=True)
class Auto:
    budget: int = DEFAULT_AUTO_BUDGET

    def __post_init__(self):
        if self.budget <= 0:
            raise KernelError("auto budget must be positive")


@dataclass(frozen=True, slots=True)
class Refl:
    pass


ProofStep = Union[Rewrite, Auto, Refl]


def step_text(step: ProofStep) -> str:
    if isinstance(step, Refl):
        return "refl"
    if isinstance(step, Auto):
        return f"auto {step.budget}"
    parts = ["rw", step.fact, "at"]
    if step.path:
        parts.append(".".join(str(i) for i in step.path))
    if step.direction == BACKWARD:
        parts.append("<-")
    return " ".join(parts)


def steps_text(steps: Sequence[ProofStep]) -> str:
    return " ; ".join(step_text(s) for s in steps)


_PATH_RE = re.compile(r"\d+(\.\d+)*\Z")


def parse_step(text: str) -> ProofStep:
    toks = text.split()
    if not toks:
        raise KernelError("empty proof step", 0)
    head = toks[0]
    if head == "refl":
        if len(toks) != 1:
            raise KernelError(f"trailing input after refl: {toks[1]!r}", 0)
        return Refl()
    if head == "auto":
        if len(toks) == 1:
            return Auto()
        if len(toks) == 2 and toks[1].isdigit() and int(toks[1]) > 0:
            return Auto(int(toks[1]))
        raise KernelError(f"bad auto budget in {text!r}", 0)
    if head == "rw":
        rest = toks[1:]
        if not rest:
            raise KernelError("rw needs a fact name", 0)
        fact = rest.pop(0)
        direction = FORWARD
        if rest and rest[-1] in ("<-", "->"):
            direction = BACKWARD if rest.pop() == "<-" else FORWARD
        path: Path = ()
        if rest:
            if rest[0] != "at" or len(rest) > 2:
                raise KernelError(f"bad rewrite step {text!r}", 0)
            if len(rest) == 2:
                if not _PATH_RE.match(rest[1]):
                    raise KernelError(f"bad path {rest[1]!r}", 0)
                path = tuple(int(p) for p in rest[1].split("."))
        return Rewrite(fact, path, direction)
    raise KernelError(f"unknown proof step {text!r}", 0)


def parse_steps(text: str) -> tuple[ProofStep, ...]:
    """Parse a ``;``-separated step sequence; whitespace-insensitive."""
    if not text.strip():
        return ()
    return tuple(parse_step(part) for part in text.split(";"))


# --- rewriting ----------------------------------------------------------------


def rewrite_at(subject: Term, path: Path, rule: Statement, direction: str = FORWARD) -> Term:
    """Replace the subterm at ``path`` via one oriented application of ``rule``."""
    if direction == FORWARD:
        source, target = rule.lhs, rule.rhs
    elif direction == BACKWARD:
        source, target = rule.rhs, rule.lhs
    else:
        raise KernelError(f"bad direction: {direction!r}")
    try:
        sub = subterm_at(subject, path)
    except TermError as e:
        raise RewriteError("invalid-path", str(e)) from e
    binding = match(source, sub)
    if binding is None:
        raise RewriteError(
            "no-match",
            f"{rule.name} ({direction}) does not match {term_text(sub)}",
        )
    unbound = variables(target) - set(binding)
    if unbound:
        raise RewriteError(
            "variable-capture",
            f"{rule.name} ({direction}) leaves {sorted(unbound)} unbound",
        )
    return replace_at(subject, path, substitute(target, binding))


@dataclass(frozen=True, slots=True)
class VerifierResult:
    accepted: bool
    failed_step: Optional[int] = None
    reason: Optional[str] = None

    @staticmethod
    def ok() -> "VerifierResult":
        return VerifierResult(True)

    @staticmethod
    def fail(step: Optional[int], reason: str) -> "VerifierResult":
        return VerifierResult(False, step, reason)


Chain = tuple[tuple[str, Path, str], ...]

_search_cache: dict[tuple, Optional[Chain]] = {}
_SEARCH_CACHE_LIMIT = 1 << 18


def clear_search_cache():
    _search_cache.clear()


def auto_search(
    start: Term,
    target: Term,
    env: FactEnv,
    budget: int = DEFAULT_AUTO_BUDGET,
    size_slack: int = DEFAULT_AUTO_SIZE_SLACK,
) -> Optional[Chain]:
    """Shortest rewrite chain from start to target within a node budget.

    Breadth-first search over single rewrites with every environment fact,
    both directions, all paths, in (fact name, path, direction) order; ties
    resolve to the first chain found in that order. ``budget`` counts
    expanded nodes. Successors larger than max(|start|, |target|) plus
    ``size_slack`` are pruned. Results are memoized (the function is pure).
    """
    if budget <= 0:
        raise KernelError("auto budget must be positive")
    cache_key = (start, target, env.key(), budget, size_slack)
    if cache_key in _search_cache:
        return _search_cache[cache_key]

    result = _auto_search_impl(start, target, env, budget, size_slack)
    if len(_search_cache) >= _SEARCH_CACHE_LIMIT:
        _search_cache.clear()
    _search_cache[cache_key] = result
    return result


def _successors(term: Term, index, cap: int):
    """Oriented one-step rewrites of ``term`` in candidate order.

    Candidates are tried fact-name first, then path (preorder is
    path-lexicographic), then direction with forward before backward.
    Oversized results are rejected before construction.
    """
    pos = list(positions(term))
    out = []
    append = out.append
    base = term.size
    for name, oriented in index:
        for path, sub in pos:
            sub_is_app = type(sub) is App
            for direction, source, template, tvars in oriented:
                if type(source) is App:
                    if not sub_is_app or sub.symbol != source.symbol:
                        continue
                binding = match(source, sub)
                if binding is None:
                    continue
                new_size = template.size
                for vname, count in tvars:
                    new_size += count * (binding[vname].size - 1)
                if base - sub.size + new_size > cap:
                    continue
                new_sub = substitute(template, binding)
                append(((name, path, direction), replace_at(term, path, new_sub)))
    return out


def _auto_search_impl(start, target, env, budget, size_slack) -> Optional[Chain]:
    if start == target:
        return ()
    cap = max(start.size, target.size) + size_slack
    index = env.rewrite_index()
    parent: dict[Term, tuple[Term, tuple[str, Path, str]]] = {}
    queue = [start]
    seen = {start}
    expanded = 0
    qi = 0
    while qi < len(queue):
        current = queue[qi]
        qi += 1
        expanded += 1
        if expanded > budget:
            return None
        for move, nxt in _successors(current, index, cap):
            if nxt in seen:
                continue
            seen.add(nxt)
            parent[nxt] = (current, move)
            if nxt == target:
                chain = []
                node = nxt
                while node != start:
                    node, move = parent[node]
                    chain.append(move)
                chain.reverse()
                return tuple(chain)
            queue.append(nxt)
    return None


def verify(
    env: FactEnv,
    statement: Statement,
    steps: Sequence[ProofStep],
    size_slack: int = DEFAULT_AUTO_SIZE_SLACK,
) -> VerifierResult:
    """Check a proof of ``statement`` against ``env``.

    The current term starts at the statement's lhs; the proof is accepted
    exactly when every step applies and the final step closes the goal
    (a successful ``refl`` or ``auto``). Rewrite failures of any kind
    (no match, bad path, variable capture) report ``no-match``.
    """
    current = statement.lhs
    closed_by_last = False
    for i, step in enumerate(steps):
        closed_by_last = False
        if isinstance(step, Refl):
            if current != statement.rhs:
                return VerifierResult.fail(i, REASON_NOT_CLOSED)
            closed_by_last = True
        elif isinstance(step, Auto):
            chain = auto_search(
                current, statement.rhs, env, step.budget, size_slack
            )
            if chain is None:
                return VerifierResult.fail(i, REASON_BUDGET)
            current = statement.rhs
            closed_by_last = True
        else:
            fact = env.get(step.fact)
            if fact is None:
                return VerifierResult.fail(i, REASON_UNKNOWN_FACT)
            try:
                current = rewrite_at(current, step.path, fact.statement, step.direction)
            except RewriteError:
                return VerifierResult.fail(i, REASON_NO_MATCH)
    if not closed_by_last:
        return VerifierResult.fail(max(len(steps) - 1, 0), REASON_NOT_CLOSED)
    return VerifierResult.ok()
