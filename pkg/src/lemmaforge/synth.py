"""Deterministic synthetic theory-file corpus over the toy arithmetic signature.

Files are assembled from small units:

* lemma families: chains of statements where each deeper level wraps the
  previous statement together with a fresh sibling lemma and cites both,
  giving ground-truth proof trees of the requested depth with branching.
  Families are schematic (the carrier stays a variable, so the statement
  generalizes to every instance) or ground (the carrier is a numeral).
* local definitions: a fresh symbol with a definitional axiom plus one
  shallow lemma about it.
* retained lemmas: a lemma pinned into the context by a later definitional
  axiom's ``using`` clause, so peeling never removes it.

Deep shapes are drawn from a small per-corpus pool so the same statement
shapes recur across files (the transfer surface); carriers and numerals
vary per file (the dilution). Proof chains keep every run of base-axiom
steps at length two or less, so the auto-substituted proofs stay within
one bounded search step, while a statement of depth two or more inlines to
five or more rewrites and is unreachable by a single search. Every file is
validated before acceptance (all examples verify locally, raw and
auto-substituted, in both dataset modes; deep statements defeat a single
search) and redrawn deterministically on failure.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from typing import Optional

from .arith import BASE_AXIOMS, SIMPLE_NAMES, numeral
from .corpus import (
    Block,
    Corpus,
    TheoryFile,
    WITH_LEMMAS,
    WITHOUT_LEMMAS,
    autoify,
)
from .kernel import (
    ProofStep,
    Refl,
    Rewrite,
    Statement,
    auto_search,
    rewrite_at,
)
from .prooftree import CtxAxiom, TreeNode, check_local
from .terms import App, Term, Var
from .util import stable_seed


@dataclass(frozen=True)
class GenParams:
    files: int = 12
    statements_per_file: int = 8
    max_depth: int = 3
    import_density: float = 0.1
    schematic_fraction: float = 0.35
    numeral_range: int = 3
    auto_budget: int = 100
    shape_pool_size: int = 3


def ood_params(params: GenParams) -> GenParams:
    """A shifted generation regime standing in for a later-snapshot corpus."""
    return replace(
        params,
        schematic_fraction=max(0.15, params.schematic_fraction - 0.1),
        numeral_range=params.numeral_range + 2,
        import_density=min(0.3, params.import_density + 0.1),
    )


class GeneratorError(RuntimeError):
    pass


_RULES = {s.name: s for s in BASE_AXIOMS}

UNARY_STEPS = {"dbl": 2, "tri": 3}


def base_file() -> TheoryFile:
    """The root file: the arithmetic axioms, no proved statements."""
    return TheoryFile("base", (), (), tuple(CtxAxiom(s) for s in BASE_AXIOMS))


def _run_chain(lhs: Term, steps: list[Rewrite], rules: dict[str, Statement]) -> Term:
    t = lhs
    for st in steps:
        t = rewrite_at(t, st.path, rules[st.fact], st.direction)
    return t


# A level-1 shape is (kind, unary symbol); a wrap shape is (kind, unary
# symbol, sibling shape). Instantiating a shape with a carrier gives the
# statement lhs and its proof chain.
LEVEL1_KINDS = ("unary1", "unary2", "add1", "mul1")
# No mul wrap: unfolding mul over a large proved pair would need an
# intermediate beyond the search size cap, so its bridge could never verify.
WRAP_KINDS = ("unary", "add")


def _level1(shape: tuple[str, str], w: Term) -> tuple[Term, list[Rewrite]]:
    kind, u = shape
    step = UNARY_STEPS[u]
    if kind == "unary1":
        return App(u, (App("S", (w,)),)), [Rewrite(f"{u}_S")]
    if kind == "unary2":
        lhs = App(u, (App("S", (App("S", (w,)),)),))
        return lhs, [Rewrite(f"{u}_S"), Rewrite(f"{u}_S", (0,) * step)]
    arg = App(u, (w,))
    if kind == "add1":
        lhs = App("add", (numeral(1), arg))
        return lhs, [Rewrite("add_S"), Rewrite("add_Z", (0,))]
    lhs = App("mul", (numeral(1), arg))
    return lhs, [Rewrite("mul_S"), Rewrite("mul_Z", (1,))]


def _wrap(
    shape: tuple[str, str], sibling: Statement, child: Statement
) -> tuple[Term, list[Rewrite]]:
    """Wrap ``add(sibling.lhs, child.lhs)``, citing both, then reduce the shell."""
    kind, u = shape
    pair = App("add", (sibling.lhs, child.lhs))
    if kind == "unary":
        lhs = App(u, (App("S", (pair,)),))
        cites = [Rewrite(sibling.name, (0, 0, 0)), Rewrite(child.name, (0, 0, 1))]
        return lhs, cites + [Rewrite(f"{u}_S")]
    lhs = App("add", (numeral(1), pair))
    cites = [Rewrite(sibling.name, (1, 0)), Rewrite(child.name, (1, 1))]
    return lhs, cites + [Rewrite("add_S"), Rewrite("add_Z", (0,))]


@dataclass(frozen=True)
class FamilyShape:
    """A reusable deep-statement shape: level-1 base plus per-level wraps."""

    base: tuple[str, str]
    wraps: tuple[tuple[str, str], ...]  # (wrap kind, unary) per extra level
    siblings: tuple[tuple[str, str], ...]  # level-1 shape per extra level


def _draw_shapes(rng: random.Random, params: GenParams) -> dict[int, list[FamilyShape]]:
    """A small pool of deep shapes per depth, shared corpus-wide."""
    pool: dict[int, list[FamilyShape]] = {}
    for depth in range(2, params.max_depth + 1):
        shapes = []
        for _ in range(params.shape_pool_size):
            base = (rng.choice(("unary2", "add1")), rng.choice(("dbl", "tri")))
            wraps = tuple(
                (rng.choice(WRAP_KINDS), rng.choice(("dbl", "tri")))
                for _ in range(depth - 1)
            )
            siblings = tuple(
                ("unary1", rng.choice(("dbl", "tri")))
                for _ in range(depth - 1)
            )
            shapes.append(FamilyShape(base, wraps, siblings))
        pool[depth] = shapes
    return pool


@dataclass
class _Emission:
    pre_axioms: list[CtxAxiom]
    keyword: Optional[str]
    statement: Optional[Statement]
    steps: Optional[tuple[ProofStep, ...]]


class _FileBuilder:
    def __init__(
        self,
        rng: random.Random,
        fidx: int,
        params: GenParams,
        shape_pool: dict[int, list[FamilyShape]],
    ):
        self.rng = rng
        self.fidx = fidx
        self.params = params
        self.shape_pool = shape_pool
        self.counter = 0
        self.deep_count = 0
        self.rules = dict(_RULES)

    def name(self) -> str:
        self.counter += 1
        return f"f{self.fidx:02d}_t{self.counter}"

    def symbol(self) -> str:
        self.counter += 1
        return f"g{self.fidx:02d}x{self.counter}"

    def carrier(self, schematic: bool, slot: int = 0) -> Term:
        if schematic:
            return Var("xyz"[slot % 3])
        return numeral(self.rng.randrange(self.params.numeral_range))

    def _statement(self, lhs: Term, chain: list[Rewrite], keyword: str) -> _Emission:
        stmt = Statement(self.name(), lhs, _run_chain(lhs, chain, self.rules))
        self.rules[stmt.name] = stmt
        return _Emission([], keyword, stmt, tuple(chain) + (Refl(),))

    def shallow_family(self, schematic: bool) -> list[_Emission]:
        w = self.carrier(schematic)
        shape = (self.rng.choice(LEVEL1_KINDS), self.rng.choice(("dbl", "tri")))
        lhs, chain = _level1(shape, w)
        return [self._statement(lhs, chain, "lemma")]

    def deep_family(self, depth: int) -> list[_Emission]:
        # Round-robin over the shared shape pool, alternating schematic and
        # ground instantiation on a full-pool cycle: every shape recurs
        # across files in both variants, so dependency splits cannot strand
        # a shape's general form on one side. Sibling lemmas are pinned into
        # the retained set, so the conditional proofs cite them from the
        # context rather than proposing them; only the chain child is peeled.
        pool = self.shape_pool[depth]
        ordinal = self.fidx + self.deep_count
        shape = pool[ordinal % len(pool)]
        schematic = (ordinal // len(pool)) % 2 == 0
        self.deep_count += 1
        lhs, chain = _level1(shape.base, self.carrier(schematic, 0))
        out = [self._statement(lhs, chain, "lemma")]
        for level in range(depth - 1):
            sib_lhs, sib_chain = _level1(
                shape.siblings[level], self.carrier(schematic, level + 1)
            )
            out.append(self._statement(sib_lhs, sib_chain, "lemma"))
            sibling = out[-1].statement
            out.append(self._pin(sibling))
            child = out[-3].statement
            lhs, chain = _wrap(shape.wraps[level], sibling, child)
            keyword = "theorem" if level == depth - 2 else "lemma"
            out.append(self._statement(lhs, chain, keyword))
        return out

    def _pin(self, lemma: Statement) -> _Emission:
        """A definitional axiom whose using clause retains ``lemma``."""
        sym = self.symbol()
        pin = Statement(
            f"{sym}_def", App(sym, (Var("x"),)), App("mul", (Var("x"), Var("x")))
        )
        self.rules[pin.name] = pin
        return _Emission([CtxAxiom(pin, (lemma.name,))], None, None, None)

    def local_unit(self, schematic: bool) -> list[_Emission]:
        sym = self.symbol()
        u = self.rng.choice(("dbl", "tri"))
        body = App("add", (numeral(1), App(u, (Var("x"),))))
        axiom = Statement(f"{sym}_def", App(sym, (Var("x"),)), body)
        self.rules[axiom.name] = axiom
        w = self.carrier(schematic)
        lhs = App(sym, (w,))
        chain = [Rewrite(axiom.name), Rewrite("add_S")]
        emission = self._statement(lhs, chain, "lemma")
        emission.pre_axioms.append(CtxAxiom(axiom))
        return [emission]

    def retained_unit(self, schematic: bool) -> list[_Emission]:
        w = self.carrier(schematic)
        shape = (self.rng.choice(LEVEL1_KINDS), self.rng.choice(("dbl", "tri")))
        lhs, chain = _level1(shape, w)
        emission = self._statement(lhs, chain, "lemma")
        return [emission, self._pin(emission.statement)]


def _plan_units(builder: _FileBuilder, params: GenParams) -> list[list[_Emission]]:
    rng = builder.rng
    budget = params.statements_per_file
    units: list[list[_Emission]] = []

    def coin() -> bool:
        return rng.random() < params.schematic_fraction

    def deep_cost(depth: int) -> int:
        return 2 * depth - 1

    if params.max_depth >= 2 and budget >= deep_cost(params.max_depth) + 2:
        units.append(builder.deep_family(params.max_depth))
        budget -= deep_cost(params.max_depth)
    if params.max_depth >= 2 and budget >= deep_cost(2) + 2:
        units.append(builder.deep_family(2))
        budget -= deep_cost(2)
    if budget >= 2:
        units.append(builder.retained_unit(coin()))
        budget -= 1
    if budget >= 1:
        units.append(builder.local_unit(coin()))
        budget -= 1
    while budget > 0:
        kind = rng.random()
        if kind < 0.3 and budget >= deep_cost(2) and params.max_depth >= 2:
            units.append(builder.deep_family(2))
            budget -= deep_cost(2)
        elif kind < 0.75:
            units.append(builder.shallow_family(coin()))
            budget -= 1
        else:
            units.append(builder.local_unit(coin()))
            budget -= 1
    rng.shuffle(units)
    return units


def _assemble(
    name: str, imports: tuple[str, ...], units: list[list[_Emission]]
) -> TheoryFile:
    blocks: list[Block] = []
    pending: list[CtxAxiom] = []
    for unit in units:
        for em in unit:
            pending.extend(em.pre_axioms)
            if em.statement is None:
                continue
            blocks.append(Block(tuple(pending), em.keyword, em.statement, em.steps))
            pending = []
    return TheoryFile(name, imports, tuple(blocks), tuple(pending))


def _validate_file(corpus: Corpus, name: str) -> bool:
    """All examples verify (raw and auto-substituted) in both dataset modes,
    and deep statements are out of reach of a single bounded search."""
    budget = corpus.auto_budget
    for mode in (WITHOUT_LEMMAS, WITH_LEMMAS):
        for ex in corpus.examples(name, mode):
            env = corpus.env_for(ex)
            raw = TreeNode(ex.premises, ex.context, ex.statement, ex.mode, ex.proof)
            if not check_local(raw, env).accepted:
                return False
            auto_proof = autoify(ex.proof, corpus.simple_names, budget)
            sub = TreeNode(ex.premises, ex.context, ex.statement, ex.mode, auto_proof)
            if not check_local(sub, env).accepted:
                return False
    for ex in corpus.examples(name, WITHOUT_LEMMAS):
        if ex.depth >= 2:
            env = corpus.env_for(ex)
            if auto_search(ex.statement.lhs, ex.statement.rhs, env, budget) is not None:
                return False
    return True


def _fallback_file(
    name: str, imports: tuple[str, ...], fidx: int, params: GenParams
) -> TheoryFile:
    rng = random.Random(stable_seed("fallback", fidx))
    builder = _FileBuilder(rng, fidx, params, {})
    units = [builder.shallow_family(False), builder.shallow_family(True)]
    return _assemble(name, imports, units)


def generate_synthetic_corpus(seed: int, params: Optional[GenParams] = None) -> Corpus:
    """Build a corpus deterministically; identical seeds give identical output."""
    params = params or GenParams()
    shape_pool = _draw_shapes(random.Random(stable_seed(seed, "shapes")), params)
    files: dict[str, TheoryFile] = {"base": base_file()}
    for i in range(params.files):
        name = f"f{i:02d}"
        plan_rng = random.Random(stable_seed(seed, "imports", i))
        imports = ["base"]
        earlier = [n for n in files if n != "base"]
        if earlier and plan_rng.random() < params.import_density:
            imports.append(plan_rng.choice(earlier))
        accepted = None
        for attempt in range(10):
            rng = random.Random(stable_seed(seed, "file", i, attempt))
            builder = _FileBuilder(rng, i, params, shape_pool)
            units = _plan_units(builder, params)
            tf = _assemble(name, tuple(imports), units)
            trial = Corpus(
                dict(files, **{name: tf}),
                simple_names=SIMPLE_NAMES,
                auto_budget=params.auto_budget,
            )
            if _validate_file(trial, name):
                accepted = tf
                break
        if accepted is None:
            accepted = _fallback_file(name, tuple(imports), i, params)
            trial = Corpus(
                dict(files, **{name: accepted}),
                simple_names=SIMPLE_NAMES,
                auto_budget=params.auto_budget,
            )
            if not _validate_file(trial, name):
                raise GeneratorError(f"fallback file {name} failed validation")
        files[name] = accepted
    return Corpus(files, simple_names=SIMPLE_NAMES, auto_budget=params.auto_budget)
