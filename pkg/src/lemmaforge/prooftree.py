"""Proof-tree correctness: local checks, the global fixpoint, and flattening.

A tree node bundles premises, a context, a statement, and a conditional
proof. The node is locally correct when its proof verifies with every
proposal registered as an assumed fact. It is globally correct with respect
to a node set when a valid proof tree can be assembled from locally correct
nodes: every proposal must be witnessed by a globally correct node with the
same equation (up to variable renaming) under identical premises and
context. Flattening a witness tree child-first yields a linear script the
kernel accepts with no assumed facts left.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

from .condproof import (
    MODE_NO_INVOKE,
    MODE_USE_INVOKE,
    MODES,
    ConditionalProof,
    parse_conditional_proof,
    proof_body_text,
    strip_invokes,
)
from .kernel import (
    Fact,
    FactEnv,
    KernelError,
    ORIGIN_ASSUMED,
    ORIGIN_AXIOM,
    ORIGIN_CONTEXT,
    ProofStep,
    REASON_PROPOSAL_COLLISION,
    Rewrite,
    Statement,
    VerifierResult,
    parse_statement,
    verify,
)


# --- context -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class CtxAxiom:
    """A definitional equation, registered as a fact without proof.

    ``uses`` names earlier statements the definition depends on; those
    citations pin the statements into the retained set during peeling.
    """

    statement: Statement
    uses: tuple[str, ...] = ()

    def text(self) -> str:
        base = self.statement.text("axiom")
        if self.uses:
            return f"{base} using ({', '.join(self.uses)})"
        return base


@dataclass(frozen=True, slots=True)
class CtxLemma:
    """A previously established statement available as an ordinary fact."""

    statement: Statement

    def text(self) -> str:
        return self.statement.text("lemma")


ContextItem = Union[CtxAxiom, CtxLemma]


def context_text(items: Sequence[ContextItem]) -> str:
    return "\n".join(it.text() for it in items)


def context_hash(items: Sequence[ContextItem]) -> str:
    digest = hashlib.sha256(context_text(items).encode()).hexdigest()
    return digest[:16]


def parse_context_item(line: str) -> ContextItem:
    text = line.strip()
    if text.startswith("axiom"):
        uses: tuple[str, ...] = ()
        if " using" in text:
            text, _, tail = text.partition(" using")
            tail = tail.strip()
            if not (tail.startswith("(") and tail.endswith(")")):
                raise KernelError(f"bad using clause: {tail!r}")
            inner = tail[1:-1].strip()
            uses = tuple(n.strip() for n in inner.split(",")) if inner else ()
        return CtxAxiom(parse_statement(text, keywords=("axiom",)), uses)
    return CtxLemma(parse_statement(text, keywords=("lemma", "theorem")))


def parse_context(text: str, skip_bad: bool = False) -> tuple[ContextItem, ...]:
    """Parse newline-separated context items.

    With ``skip_bad`` unparseable lines are dropped, which tolerates prompts
    whose context was truncated mid-item.
    """
    items = []
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            items.append(parse_context_item(line))
        except (KernelError, ValueError):
            if not skip_bad:
                raise
    return tuple(items)


def context_facts(items: Sequence[ContextItem]) -> list[Fact]:
    facts = []
    for it in items:
        if isinstance(it, CtxAxiom):
            facts.append(Fact(ORIGIN_AXIOM, it.statement))
        else:
            facts.append(Fact(ORIGIN_CONTEXT, it.statement))
    return facts


def build_env(premise_facts: Iterable[Fact], context: Sequence[ContextItem]) -> FactEnv:
    return FactEnv(list(premise_facts) + context_facts(context))


# --- nodes ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TreeNode:
    """The unit of verification, reward, and training."""

    premises: frozenset[str]
    context: tuple[ContextItem, ...]
    statement: Statement
    mode: str
    proof: ConditionalProof

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"bad mode token: {self.mode!r}")
        if self.mode == MODE_NO_INVOKE and self.proof.proposals:
            raise ValueError("no_invoke node with proposals")

    def share_key(self) -> tuple:
        """Premises and context; children must agree with their parent."""
        return (self.premises, context_hash(self.context))


EnvResolver = Callable[[TreeNode], FactEnv]


def _as_resolver(env: Union[FactEnv, EnvResolver]) -> EnvResolver:
    if isinstance(env, FactEnv):
        return lambda node: env
    return env


def check_local(node: TreeNode, fact_env: FactEnv) -> VerifierResult:
    """Verify the node's proof with its proposals assumed as facts.

    ``fact_env`` must already hold the node's premises facts and context
    lemmas. A proposal whose name shadows an existing fact (or another
    proposal) fails with the distinct ``proposal-collision`` reason and no
    step index.
    """
    assumed = []
    names = set()
    for prop in node.proof.proposals:
        if prop.name in fact_env or prop.name in names:
            return VerifierResult(False, None, REASON_PROPOSAL_COLLISION)
        names.add(prop.name)
        assumed.append(Fact(ORIGIN_ASSUMED, prop))
    env = fact_env.extended(assumed) if assumed else fact_env
    return verify(env, node.statement, node.proof.steps())


@dataclass(frozen=True, slots=True)
class ResolvedForest:
    nodes: tuple[TreeNode, ...]
    local: tuple[bool, ...]
    global_ok: tuple[bool, ...]
    # per node: proposal index -> witnessing node index (globally correct
    # nodes only; empty dict for proposal-free nodes, None when not global)
    witness: tuple[Optional[dict[int, int]], ...]
    results: tuple[VerifierResult, ...]


def resolve_global(
    nodes: Sequence[TreeNode],
    env: Union[FactEnv, EnvResolver],
    precomputed_local: Optional[Sequence[bool]] = None,
) -> ResolvedForest:
    """Local checks plus the global-correctness fixpoint over a node set.

    Global correctness is the least fixpoint: proposal-free locally correct
    nodes seed it, and a node joins once every proposal is witnessed by an
    already-global node with an identical equation (canonical form) and the
    same premises and context. Cyclically self-supporting nodes therefore
    never qualify (a cycle has no base case). Witnesses are chosen among
    nodes that joined at a strictly earlier round, smallest index first,
    which keeps the witness edges acyclic.
    """
    resolver = _as_resolver(env)
    nodes = tuple(nodes)
    if precomputed_local is not None:
        results = tuple(
            VerifierResult(True) if ok else VerifierResult(False, 0, "precomputed")
            for ok in precomputed_local
        )
    else:
        results = tuple(check_local(n, resolver(n)) for n in nodes)
    local = tuple(r.accepted for r in results)

    keys = [n.statement.canonical_key() for n in nodes]
    shares = [n.share_key() for n in nodes]
    prop_keys = [
        [p.canonical_key() for p in n.proof.proposals] for n in nodes
    ]

    rank: list[Optional[int]] = [None] * len(nodes)
    current_round = 0
    changed = True
    while changed:
        current_round += 1
        changed = False
        additions = []
        for i, node in enumerate(nodes):
            if rank[i] is not None or not local[i]:
                continue
            ok = True
            for pk in prop_keys[i]:
                if not any(
                    rank[j] is not None
                    and keys[j] == pk
                    and shares[j] == shares[i]
                    for j in range(len(nodes))
                ):
                    ok = False
                    break
            if ok:
                additions.append(i)
        for i in additions:
            rank[i] = current_round
            changed = True

    global_ok = tuple(r is not None for r in rank)
    witness: list[Optional[dict[int, int]]] = []
    for i, node in enumerate(nodes):
        if rank[i] is None:
            witness.append(None)
            continue
        chosen: dict[int, int] = {}
        for pi, pk in enumerate(prop_keys[i]):
            for j in range(len(nodes)):
                if (
                    rank[j] is not None
                    and rank[j] < rank[i]
                    and keys[j] == pk
                    and shares[j] == shares[i]
                ):
                    chosen[pi] = j
                    break
        witness.append(chosen)
    return ResolvedForest(nodes, local, global_ok, tuple(witness), results)


# --- trees and flattening ----------------------------------------------------


@dataclass(frozen=True)
class Tree:
    index: int
    node: TreeNode
    children: tuple["Tree", ...] = ()


def build_tree(root_index: int, forest: ResolvedForest) -> Optional[Tree]:
    """The witness-closure tree rooted at ``root_index``, if globally correct."""
    if not forest.global_ok[root_index]:
        return None

    def grow(i: int) -> Tree:
        wit = forest.witness[i] or {}
        children = tuple(grow(wit[pi]) for pi in range(len(forest.nodes[i].proof.proposals)))
        return Tree(i, forest.nodes[i], children)

    return grow(root_index)


def tree_depth(tree: Tree) -> int:
    """Depth in nodes: a leaf counts 1."""
    if not tree.children:
        return 1
    return 1 + max(tree_depth(c) for c in tree.children)


@dataclass(frozen=True)
class ScriptEntry:
    statement: Statement
    steps: tuple[ProofStep, ...]


def flatten(tree: Tree) -> tuple[ScriptEntry, ...]:
    """Child-first linear script with proposal steps removed.

    Statements repeated across the tree are emitted once (first emission in
    postorder wins). Emitted statements get collision-free names and each
    node's stripped steps are rewritten to cite the emitted name of the
    lemma that witnesses the corresponding proposal. The root entry is last.
    """
    emitted: dict[str, str] = {}
    used_names: set[str] = set()
    entries: list[ScriptEntry] = []

    def fresh(name: str) -> str:
        candidate = name
        n = 1
        while candidate in used_names:
            n += 1
            candidate = f"{name}_{n}"
        used_names.add(candidate)
        return candidate

    def walk(t: Tree):
        for child in t.children:
            walk(child)
        key = t.node.statement.canonical_key()
        if key in emitted:
            return
        renames = {
            prop.name: emitted[prop.canonical_key()]
            for prop in t.node.proof.proposals
        }
        steps = []
        for step in strip_invokes(t.node.proof).steps():
            if isinstance(step, Rewrite) and step.fact in renames:
                step = Rewrite(renames[step.fact], step.path, step.direction)
            steps.append(step)
        name = fresh(t.node.statement.name)
        emitted[key] = name
        entries.append(
            ScriptEntry(
                Statement(name, t.node.statement.lhs, t.node.statement.rhs),
                tuple(steps),
            )
        )

    walk(tree)
    return tuple(entries)


def verify_script(
    entries: Sequence[ScriptEntry], base_env: FactEnv
) -> list[VerifierResult]:
    """Replay a flattened script bottom-up; each proved entry becomes a fact."""
    env = base_env
    results = []
    for entry in entries:
        res = verify(env, entry.statement, entry.steps)
        results.append(res)
        env = env.extended([Fact(ORIGIN_CONTEXT, entry.statement)])
    return results


# --- forest records -----------------------------------------------------------


def node_record(node: TreeNode, **extra) -> dict:
    """Line-record payload for one node; ``extra`` fields ride along."""
    rec = {
        "premises": sorted(node.premises),
        "context_hash": context_hash(node.context),
        "context": context_text(node.context),
        "statement": node.statement.text(),
        "mode": node.mode,
        "proof": proof_body_text(node.proof),
    }
    rec.update(extra)
    return rec


def node_from_record(rec: dict) -> TreeNode:
    mode, proof = parse_conditional_proof(f"<{rec['mode']}> {rec['proof']}")
    return TreeNode(
        premises=frozenset(rec["premises"]),
        context=parse_context(rec["context"]),
        statement=parse_statement(rec["statement"]),
        mode=mode,
        proof=proof,
    )


def write_records(path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_records(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
