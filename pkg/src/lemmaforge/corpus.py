"""Theory files: segmentation, peeling, example construction, splitting.

A theory file interleaves context blocks (definitional axioms, possibly
citing earlier statements via ``using (...)``) with statement/proof pairs::

    theory f01
    imports base

    axiom sq_def: sq(x) = mul(x, x)

    lemma f01_t1: add(S(0), y) = S(y)
    proof: rw add_S at ; rw add_Z at 0 ; refl

Peeling iteratively removes statement/proof pairs nobody still references;
the removed statements form the lemma-tree subset used for training, and
example construction re-inserts them as inline proposals right before the
proof step that cites them.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .condproof import (
    MODE_NO_INVOKE,
    MODE_USE_INVOKE,
    ConditionalProof,
    parse_conditional_proof,
    proof_body_text,
    proposal_free,
    serialize,
    strip_invokes,
)
from .kernel import (
    Auto,
    DEFAULT_AUTO_BUDGET,
    Fact,
    FactEnv,
    KernelError,
    ORIGIN_AXIOM,
    ORIGIN_PREMISE,
    ProofStep,
    Rewrite,
    Statement,
    parse_statement,
    parse_steps,
    steps_text,
)
from .prooftree import (
    ContextItem,
    CtxAxiom,
    CtxLemma,
    TreeNode,
    build_env,
    context_hash,
    parse_context_item,
)

WITH_LEMMAS = "with_lemmas"
WITHOUT_LEMMAS = "without_lemmas"


class CorpusError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.message = message
        self.line = line


@dataclass(frozen=True, slots=True)
class Block:
    """One context-block / statement / proof segment of a theory file."""

    context: tuple[CtxAxiom, ...]
    keyword: str
    statement: Statement
    steps: tuple[ProofStep, ...]


@dataclass(frozen=True, slots=True)
class TheoryFile:
    name: str
    imports: tuple[str, ...]
    blocks: tuple[Block, ...]
    tail: tuple[CtxAxiom, ...] = ()

    def statements(self) -> list[Statement]:
        return [b.statement for b in self.blocks]

    def statement_names(self) -> list[str]:
        return [b.statement.name for b in self.blocks]


# --- text format ---------------------------------------------------------------


def segment_file(text: str) -> TheoryFile:
    """Parse theory-file text into blocks; errors carry line numbers."""
    name = None
    imports: tuple[str, ...] = ()
    blocks: list[Block] = []
    pending_axioms: list[CtxAxiom] = []
    pending_stmt: Optional[tuple[str, Statement]] = None
    seen_names: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("theory "):
                if name is not None:
                    raise CorpusError("duplicate theory header", lineno)
                name = line.split(None, 1)[1].strip()
            elif line.startswith("imports"):
                if name is None or blocks or pending_axioms or pending_stmt:
                    raise CorpusError("imports must follow the theory header", lineno)
                imports = tuple(line.split()[1:])
            elif line.startswith("axiom "):
                if pending_stmt is not None:
                    raise CorpusError("axiom between a statement and its proof", lineno)
                item = parse_context_item(line)
                pending_axioms.append(item)
            elif line.startswith("lemma ") or line.startswith("theorem "):
                if pending_stmt is not None:
                    raise CorpusError("statement without a proof", lineno)
                keyword = line.split(None, 1)[0]
                stmt = parse_statement(line)
                pending_stmt = (keyword, stmt)
            elif line.startswith("proof:"):
                if pending_stmt is None:
                    raise CorpusError("proof without a statement", lineno)
                steps = parse_steps(line[len("proof:") :])
                keyword, stmt = pending_stmt
                if stmt.name in seen_names:
                    raise CorpusError(f"duplicate statement name {stmt.name}", lineno)
                seen_names.add(stmt.name)
                blocks.append(Block(tuple(pending_axioms), keyword, stmt, steps))
                pending_axioms = []
                pending_stmt = None
            else:
                raise CorpusError(f"unrecognized line: {line!r}", lineno)
        except CorpusError:
            raise
        except (KernelError, ValueError) as e:
            raise CorpusError(str(e), lineno) from e

    if name is None:
        raise CorpusError("missing theory header")
    if pending_stmt is not None:
        raise CorpusError(f"statement {pending_stmt[1].name} has no proof")
    return TheoryFile(name, imports, tuple(blocks), tuple(pending_axioms))


def file_text(tf: TheoryFile) -> str:
    lines = [f"theory {tf.name}"]
    if tf.imports:
        lines.append("imports " + " ".join(tf.imports))
    for block in tf.blocks:
        lines.append("")
        for ax in block.context:
            lines.append(ax.text())
        lines.append(block.statement.text(block.keyword))
        lines.append("proof: " + steps_text(block.steps))
    if tf.tail:
        lines.append("")
        lines.extend(ax.text() for ax in tf.tail)
    return "\n".join(lines) + "\n"


# --- peeling -------------------------------------------------------------------


def _cited_facts(steps: Sequence[ProofStep]) -> set[str]:
    return {s.fact for s in steps if isinstance(s, Rewrite)}


def peel(tf: TheoryFile) -> tuple[tuple[str, ...], frozenset[str]]:
    """Iteratively remove statement/proof pairs nothing still references.

    A statement is referenced while its name is cited in a remaining proof
    or appears in any context block's ``using`` clause (context blocks are
    never removed). Returns the removed names in removal order and the
    retained set; together they partition the file's statement names.
    """
    context_refs: set[str] = set()
    for block in tf.blocks:
        for ax in block.context:
            context_refs.update(ax.uses)
    for ax in tf.tail:
        context_refs.update(ax.uses)

    remaining = {b.statement.name: _cited_facts(b.steps) for b in tf.blocks}
    order = [b.statement.name for b in tf.blocks]
    removed: list[str] = []
    while True:
        referenced = set(context_refs)
        for cites in remaining.values():
            referenced.update(cites)
        peelable = [n for n in order if n in remaining and n not in referenced]
        if not peelable:
            break
        for n in peelable:
            del remaining[n]
        removed.extend(peelable)
    return tuple(removed), frozenset(remaining)


# --- examples ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Example:
    """One (premises, context, statement, conditional proof) training record."""

    premises: frozenset[str]
    context: tuple[ContextItem, ...]
    statement: Statement
    mode: str
    proof: ConditionalProof
    in_t_tree: bool
    depth: int
    file: str

    def target_text(self) -> str:
        return serialize(self.mode, self.proof)


def _tree_depths(tf: TheoryFile, t_tree: frozenset[str]) -> dict[str, int]:
    """Ground-truth proof-tree depth per statement over same-file citations."""
    depths: dict[str, int] = {}
    for block in tf.blocks:  # file order: cited statements come earlier
        cited = [
            n for n in _cited_facts(block.steps) if n in t_tree and n in depths
        ]
        depths[block.statement.name] = 1 + max(
            (depths[n] for n in cited), default=0
        )
    return depths


def _insert_proposals(
    steps: Sequence[ProofStep],
    t_tree: frozenset[str],
    statements: dict[str, Statement],
) -> ConditionalProof:
    """Wrap peeled-lemma citations as proposals right before first use."""
    segments: list[tuple[ProofStep, ...]] = []
    proposals: list[Statement] = []
    seen: set[str] = set()
    current: list[ProofStep] = []
    for step in steps:
        new = [
            f
            for f in sorted(_cited_facts([step]))
            if f in t_tree and f not in seen
        ]
        for name in new:
            seen.add(name)
            segments.append(tuple(current))
            current = []
            proposals.append(statements[name])
        current.append(step)
    segments.append(tuple(current))
    return ConditionalProof(tuple(segments), tuple(proposals))


def build_examples(
    tf: TheoryFile, t_tree: Sequence[str], mode: str = WITHOUT_LEMMAS
) -> list[Example]:
    """One example per statement, with the mode-dependent context rule.

    ``without_lemmas`` drops every peeled statement from the context and
    re-inserts the ones a proof cites as inline proposals; ``with_lemmas``
    keeps all earlier statements in the context and emits proposal-free
    proofs (the prior-works setup).
    """
    if mode not in (WITH_LEMMAS, WITHOUT_LEMMAS):
        raise CorpusError(f"bad dataset mode: {mode!r}")
    t_set = frozenset(t_tree)
    depths = _tree_depths(tf, t_set)
    statements = {b.statement.name: b.statement for b in tf.blocks}
    premises = frozenset()  # resolved by Corpus.examples(); standalone use keeps it empty
    return _build_examples(tf, t_set, depths, statements, premises, mode)


def _build_examples(tf, t_set, depths, statements, premises, mode) -> list[Example]:
    examples = []
    context: list[ContextItem] = []
    for block in tf.blocks:
        context.extend(block.context)
        if mode == WITH_LEMMAS:
            proof = proposal_free(block.steps)
            ex_mode = MODE_NO_INVOKE
        else:
            proof = _insert_proposals(block.steps, t_set, statements)
            ex_mode = MODE_USE_INVOKE if proof.proposals else MODE_NO_INVOKE
        examples.append(
            Example(
                premises=premises,
                context=tuple(context),
                statement=block.statement,
                mode=ex_mode,
                proof=proof,
                in_t_tree=block.statement.name in t_set,
                depth=depths[block.statement.name],
                file=tf.name,
            )
        )
        if mode == WITH_LEMMAS or block.statement.name not in t_set:
            context.append(CtxLemma(block.statement))
    return examples


def augment_sft(example: Example) -> Optional[Example]:
    """Move proposals into the context, yielding a proposal-free twin.

    Returns None for proposal-free examples, so augmentation is idempotent.
    """
    proposals = example.proof.proposals
    if not proposals:
        return None
    return replace(
        example,
        context=example.context + tuple(CtxLemma(p) for p in proposals),
        mode=MODE_NO_INVOKE,
        proof=strip_invokes(example.proof),
    )


def autoify(
    proof: ConditionalProof,
    simple_names: Iterable[str],
    budget: int = DEFAULT_AUTO_BUDGET,
) -> ConditionalProof:
    """Replace rewrites citing a configured simple-fact set with auto steps.

    Purely syntactic: no verifier calls are made to decide a replacement.
    """
    simple = frozenset(simple_names)
    segments = tuple(
        tuple(
            Auto(budget) if isinstance(s, Rewrite) and s.fact in simple else s
            for s in segment
        )
        for segment in proof.segments
    )
    return ConditionalProof(segments, proof.proposals)


# --- corpus --------------------------------------------------------------------


@dataclass
class Corpus:
    """An ordered set of theory files plus cross-file resolution machinery."""

    files: dict[str, TheoryFile]
    simple_names: tuple[str, ...] = ()
    auto_budget: int = DEFAULT_AUTO_BUDGET

    def __post_init__(self):
        self._check_imports()
        self._premise_cache: dict[str, frozenset[str]] = {}
        self._fact_table: Optional[dict[str, Fact]] = None
        self._env_cache: dict[tuple, FactEnv] = {}
        self._canonical: Optional[frozenset[str]] = None

    def _check_imports(self):
        for tf in self.files.values():
            for imp in tf.imports:
                if imp not in self.files:
                    raise CorpusError(f"{tf.name} imports unknown file {imp}")
        # cycle check via DFS
        state: dict[str, int] = {}

        def visit(name: str):
            if state.get(name) == 1:
                raise CorpusError(f"import cycle through {name}")
            if state.get(name) == 2:
                return
            state[name] = 1
            for imp in self.files[name].imports:
                visit(imp)
            state[name] = 2

        for name in self.files:
            visit(name)

    def fact_table(self) -> dict[str, Fact]:
        """Corpus-wide name -> fact map (axioms and proved statements)."""
        if self._fact_table is None:
            table: dict[str, Fact] = {}

            def add(name: str, fact: Fact):
                if name in table:
                    raise CorpusError(f"name {name} defined in more than one file")
                table[name] = fact

            for tf in self.files.values():
                for block in tf.blocks:
                    for ax in block.context:
                        add(ax.statement.name, Fact(ORIGIN_AXIOM, ax.statement))
                    add(block.statement.name, Fact(ORIGIN_PREMISE, block.statement))
                for ax in tf.tail:
                    add(ax.statement.name, Fact(ORIGIN_AXIOM, ax.statement))
            self._fact_table = table
        return self._fact_table

    def transitive_imports(self, name: str) -> list[str]:
        out: list[str] = []
        seen: set[str] = set()

        def visit(n: str):
            for imp in self.files[n].imports:
                if imp not in seen:
                    seen.add(imp)
                    visit(imp)
                    out.append(imp)

        visit(name)
        return out

    def premises_of(self, name: str) -> frozenset[str]:
        """All fact names (axioms and statements) from transitively imported files."""
        if name not in self._premise_cache:
            names: set[str] = set()
            for imp in self.transitive_imports(name):
                tf = self.files[imp]
                for block in tf.blocks:
                    names.update(ax.statement.name for ax in block.context)
                    names.add(block.statement.name)
                names.update(ax.statement.name for ax in tf.tail)
            self._premise_cache[name] = frozenset(names)
        return self._premise_cache[name]

    def premise_facts(self, premises: frozenset[str]) -> list[Fact]:
        table = self.fact_table()
        missing = [n for n in premises if n not in table]
        if missing:
            raise CorpusError(f"unresolved premises: {sorted(missing)[:5]}")
        return [table[n] for n in sorted(premises)]

    def env_for(self, node_or_example) -> FactEnv:
        """Fact environment for a node or example (cached per share key)."""
        key = (node_or_example.premises, context_hash(node_or_example.context))
        env = self._env_cache.get(key)
        if env is None:
            env = build_env(
                self.premise_facts(node_or_example.premises), node_or_example.context
            )
            self._env_cache[key] = env
        return env

    def examples(self, file_name: str, mode: str = WITHOUT_LEMMAS) -> list[Example]:
        tf = self.files[file_name]
        t_tree, _ = peel(tf)
        t_set = frozenset(t_tree)
        depths = _tree_depths(tf, t_set)
        statements = {b.statement.name: b.statement for b in tf.blocks}
        return _build_examples(
            tf, t_set, depths, statements, self.premises_of(file_name), mode
        )

    def all_examples(self, mode: str = WITHOUT_LEMMAS) -> list[Example]:
        out = []
        for name in self.files:
            out.extend(self.examples(name, mode))
        return out

    def canonical_statements(self) -> frozenset[str]:
        """Canonical equation keys of every axiom and statement in the corpus."""
        if self._canonical is None:
            keys: set[str] = set()
            for tf in self.files.values():
                for block in tf.blocks:
                    keys.add(block.statement.canonical_key())
                    keys.update(ax.statement.canonical_key() for ax in block.context)
                keys.update(ax.statement.canonical_key() for ax in tf.tail)
            self._canonical = frozenset(keys)
        return self._canonical

    def sink_files(self) -> list[str]:
        """Files no other file imports, in corpus order."""
        imported: set[str] = set()
        for tf in self.files.values():
            imported.update(tf.imports)
        return [n for n in self.files if n not in imported]


def ground_truth_node(example: Example, context: Sequence[ContextItem]) -> TreeNode:
    """A tree node for an example's ground-truth proof under a given context."""
    return TreeNode(
        premises=example.premises,
        context=tuple(context),
        statement=example.statement,
        mode=example.mode,
        proof=example.proof,
    )


def ground_truth_forest(corpus: Corpus, file_name: str, root: str) -> list[TreeNode]:
    """Nodes for a root statement and its peeled descendants, sharing the
    root's context so they witness one another during global resolution."""
    examples = {e.statement.name: e for e in corpus.examples(file_name)}
    if root not in examples:
        raise CorpusError(f"unknown statement {root} in {file_name}")
    root_ex = examples[root]
    nodes = [ground_truth_node(root_ex, root_ex.context)]
    frontier = [p.name for p in root_ex.proof.proposals]
    seen = {root}
    while frontier:
        name = frontier.pop(0)
        if name in seen:
            continue
        seen.add(name)
        ex = examples[name]
        nodes.append(ground_truth_node(ex, root_ex.context))
        frontier.extend(p.name for p in ex.proof.proposals)
    return nodes


# --- splitting -----------------------------------------------------------------


def split_by_dependency(
    corpus: Corpus, holdout_fraction: float, seed: int = 0
) -> tuple[list[str], list[str]]:
    """Dependency-respecting train/test file split.

    Candidates are files nothing depends on; the test set is a seeded random
    sample of ``holdout_fraction`` of them, so no train file can import a
    test file.
    """
    if not 0 < holdout_fraction < 1:
        raise CorpusError(f"holdout fraction {holdout_fraction} not in (0, 1)")
    candidates = corpus.sink_files()
    n_test = int(len(candidates) * holdout_fraction + 0.5)
    if n_test == 0:
        raise CorpusError(
            f"fraction {holdout_fraction} of {len(candidates)} candidates is empty"
        )
    rng = random.Random(seed)
    test = sorted(rng.sample(candidates, n_test))
    test_set = set(test)
    train = [n for n in corpus.files if n not in test_set]
    return train, test


# --- record IO -----------------------------------------------------------------


def example_record(example: Example) -> dict:
    from .prooftree import context_text

    return {
        "file": example.file,
        "premises": sorted(example.premises),
        "context": context_text(example.context),
        "statement": example.statement.text(),
        "mode": example.mode,
        "proof": proof_body_text(example.proof),
        "in_t_tree": example.in_t_tree,
        "depth": example.depth,
    }


def example_from_record(rec: dict) -> Example:
    from .prooftree import parse_context

    mode, proof = parse_conditional_proof(f"<{rec['mode']}> {rec['proof']}")
    return Example(
        premises=frozenset(rec["premises"]),
        context=parse_context(rec["context"]),
        statement=parse_statement(rec["statement"]),
        mode=mode,
        proof=proof,
        in_t_tree=rec["in_t_tree"],
        depth=rec["depth"],
        file=rec["file"],
    )


def write_examples(path, examples: Iterable[Example]):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_record(ex)) + "\n")


def read_examples(path) -> list[Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(example_from_record(json.loads(line)))
    return out


def load_corpus(directory) -> Corpus:
    """Load a corpus directory written by the generator/CLI (manifest + .thy files)."""
    import pathlib

    directory = pathlib.Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    files: dict[str, TheoryFile] = {}
    for entry in manifest["files"]:
        text = (directory / entry["path"]).read_text()
        tf = segment_file(text)
        if tf.name != entry["name"]:
            raise CorpusError(f"manifest name {entry['name']} != file {tf.name}")
        files[tf.name] = tf
    return Corpus(
        files,
        simple_names=tuple(manifest.get("simple_names", ())),
        auto_budget=int(manifest.get("auto_budget", DEFAULT_AUTO_BUDGET)),
    )


def save_corpus(directory, corpus: Corpus, extra_manifest: Optional[dict] = None):
    import pathlib

    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, tf in corpus.files.items():
        path = f"{name}.thy"
        (directory / path).write_text(file_text(tf))
        entries.append({"name": name, "path": path, "imports": list(tf.imports)})
    manifest = {
        "files": entries,
        "simple_names": list(corpus.simple_names),
        "auto_budget": corpus.auto_budget,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
