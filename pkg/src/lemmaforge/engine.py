"""The training loop: generate proof trees, verify, filter, reward, update.

One round samples a batch of theorems, generates conditional proofs level by
level (proposed lemmas become next-level goals), checks local correctness,
filters trivial proposals, prunes unnecessary ones, resolves global
correctness over everything generated this round, rewards nodes by global
correctness, and updates the policy with weighted targets. Correct lemma
sub-proofs earn their weight even when the root theorem fails; that
hindsight credit is the point of the exercise.
"""

from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .condproof import (
    MODE_NO_INVOKE,
    MODE_USE_INVOKE,
    ConditionalProof,
    proof_body_text,
    proposal_free,
    serialize,
    strip_invokes,
)
from .corpus import Corpus, Example, augment_sft
from .kernel import (
    REASON_PARSE,
    RewriteError,
    Statement,
    VerifierResult,
    rewrite_at,
)
from .policy import (
    DEFAULT_CONTEXT_LIMIT,
    Prompt,
    ValueLabel,
    WeightedExample,
    estimate_invoke_prob,
    fit_value,
    predict_value,
    sample_proof,
    update_policy,
)
from .prooftree import (
    ContextItem,
    CtxLemma,
    TreeNode,
    check_local,
    context_hash,
    context_text,
    node_record,
    resolve_global,
    write_records,
)
from .terms import positions
from .util import stable_seed

ORIGIN_SAMPLED_INVOKE = "sampled_invoke"
ORIGIN_SAMPLED_NOINVOKE = "sampled_noinvoke"
ORIGIN_FORCED_NOINVOKE = "forced_noinvoke"
ORIGIN_GROUND_TRUTH = "ground_truth"

DEFAULT_GAMMA = math.exp(-0.0005)


@dataclass(frozen=True, slots=True)
class Goal:
    premises: frozenset[str]
    context: tuple[ContextItem, ...]
    statement: Statement

    @staticmethod
    def from_example(ex: Example) -> "Goal":
        return Goal(ex.premises, ex.context, ex.statement)


@dataclass(frozen=True, slots=True)
class GenerationRecord:
    node: TreeNode
    depth: int
    origin: str
    seed: int
    raw_text: str
    parse_ok: bool


@dataclass(frozen=True, slots=True)
class RewardedNode:
    record: GenerationRecord
    result: VerifierResult
    local: bool
    global_ok: bool
    reward: int
    filtered: Optional[str] = None
    pruned_proposals: tuple[str, ...] = ()


def _prompt(goal: Goal, forced_mode: Optional[str], limit: int) -> Prompt:
    return Prompt.make(context_text(goal.context), goal.statement, forced_mode, limit)


def _record_from_sample(goal: Goal, sample, depth: int, origin: str, seed: int) -> GenerationRecord:
    if sample.ok:
        node = TreeNode(goal.premises, goal.context, goal.statement, sample.mode, sample.proof)
        return GenerationRecord(node, depth, origin, seed, sample.text, True)
    # malformed output: keep an empty proposal-free placeholder node
    node = TreeNode(
        goal.premises, goal.context, goal.statement, MODE_NO_INVOKE, proposal_free()
    )
    return GenerationRecord(node, depth, origin, seed, sample.text, False)


def _child_goals(record: GenerationRecord) -> list[Goal]:
    if not record.parse_ok:
        return []
    node = record.node
    return [
        Goal(node.premises, node.context, prop) for prop in node.proof.proposals
    ]


def generate_trees_test(
    policy,
    goals: Sequence[Goal],
    max_depth: int,
    base_seed: int = 0,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
) -> list[GenerationRecord]:
    """Test-time generation: sample freely, truncate by forcing the last level.

    Levels 0..max_depth-1 let the policy pick the mode token; every proposal
    becomes a next-level goal under the same premises and context; at level
    max_depth the mode is forced to no_invoke so the tree cannot grow.
    """
    records: list[GenerationRecord] = []
    level_goals = list(goals)
    for level in range(max_depth):
        next_goals: list[Goal] = []
        for gi, goal in enumerate(level_goals):
            seed = stable_seed(base_seed, level, gi, "free")
            sample = sample_proof(policy, _prompt(goal, None, context_limit), seed)
            origin = (
                ORIGIN_SAMPLED_INVOKE
                if sample.ok and sample.mode == MODE_USE_INVOKE
                else ORIGIN_SAMPLED_NOINVOKE
            )
            rec = _record_from_sample(goal, sample, level, origin, seed)
            records.append(rec)
            next_goals.extend(_child_goals(rec))
        level_goals = next_goals
    for gi, goal in enumerate(level_goals):
        seed = stable_seed(base_seed, max_depth, gi, "noinv")
        sample = sample_proof(
            policy, _prompt(goal, MODE_NO_INVOKE, context_limit), seed
        )
        records.append(
            _record_from_sample(goal, sample, max_depth, ORIGIN_FORCED_NOINVOKE, seed)
        )
    return records


def _ground_truth_record(ex: Example, no_lemma_proposal: bool) -> GenerationRecord:
    if no_lemma_proposal and ex.proof.proposals:
        aug = augment_sft(ex)
        node = TreeNode(aug.premises, aug.context, aug.statement, aug.mode, aug.proof)
    else:
        node = TreeNode(ex.premises, ex.context, ex.statement, ex.mode, ex.proof)
    return GenerationRecord(
        node, 0, ORIGIN_GROUND_TRUTH, 0, serialize(node.mode, node.proof), True
    )


def generate_trees_train(
    policy,
    batch: Sequence[Example],
    max_depth: int,
    base_seed: int = 0,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
    force_quantile: Optional[float] = 0.5,
    dual_sampling: bool = True,
    complete_ground_truth: bool = True,
    no_lemma_proposal: bool = False,
) -> list[GenerationRecord]:
    """Training-time generation with extra exploration.

    Per level: goals whose invoke probability reaches the batch quantile
    (lower median by default) get a forced invoke-mode sample, the rest get
    one with probability equal to their own invoke probability; every goal
    also gets a forced no-invoke sample. Ground-truth proofs join level 0 so
    their proposed lemmas get proof attempts too. With ``force_quantile``
    None, ``dual_sampling`` and ``complete_ground_truth`` off, this
    degenerates to the test-time procedure.
    """
    records: list[GenerationRecord] = []
    level_goals = [Goal.from_example(ex) for ex in batch]
    degenerate = force_quantile is None and not dual_sampling
    for level in range(max_depth + 1):
        level_records: list[GenerationRecord] = []
        if degenerate:
            for gi, goal in enumerate(level_goals):
                if level < max_depth:
                    seed = stable_seed(base_seed, level, gi, "free")
                    sample = sample_proof(policy, _prompt(goal, None, context_limit), seed)
                    origin = (
                        ORIGIN_SAMPLED_INVOKE
                        if sample.ok and sample.mode == MODE_USE_INVOKE
                        else ORIGIN_SAMPLED_NOINVOKE
                    )
                else:
                    seed = stable_seed(base_seed, level, gi, "noinv")
                    sample = sample_proof(
                        policy, _prompt(goal, MODE_NO_INVOKE, context_limit), seed
                    )
                    origin = ORIGIN_FORCED_NOINVOKE
                level_records.append(_record_from_sample(goal, sample, level, origin, seed))
        else:
            invoke_goals: list[tuple[int, Goal]] = []
            if level < max_depth and not no_lemma_proposal and level_goals:
                probs = [
                    estimate_invoke_prob(policy, _prompt(g, None, context_limit))
                    for g in level_goals
                ]
                kappa = (
                    _quantile(probs, force_quantile)
                    if force_quantile is not None
                    else None
                )
                for gi, goal in enumerate(level_goals):
                    u = random.Random(stable_seed(base_seed, level, gi, "coin")).random()
                    if (kappa is not None and probs[gi] >= kappa) or u < probs[gi]:
                        invoke_goals.append((gi, goal))
            for gi, goal in enumerate(level_goals):
                seed = stable_seed(base_seed, level, gi, "noinv")
                sample = sample_proof(
                    policy, _prompt(goal, MODE_NO_INVOKE, context_limit), seed
                )
                level_records.append(
                    _record_from_sample(goal, sample, level, ORIGIN_FORCED_NOINVOKE, seed)
                )
            for gi, goal in invoke_goals:
                seed = stable_seed(base_seed, level, gi, "inv")
                sample = sample_proof(
                    policy, _prompt(goal, MODE_USE_INVOKE, context_limit), seed
                )
                level_records.append(
                    _record_from_sample(goal, sample, level, ORIGIN_SAMPLED_INVOKE, seed)
                )
        if level == 0 and complete_ground_truth:
            level_records.extend(
                _ground_truth_record(ex, no_lemma_proposal) for ex in batch
            )
        records.extend(level_records)
        next_goals: list[Goal] = []
        for rec in level_records:
            next_goals.extend(_child_goals(rec))
        level_goals = next_goals
    return records


def _quantile(values: Sequence[float], q: float) -> float:
    """Threshold capturing the top ``q`` fraction: on {0.9, 0.6, 0.4, 0.1}
    with q = 0.5, exactly {0.9, 0.6} satisfy value >= threshold."""
    ordered = sorted(values, reverse=True)
    k = max(1, math.ceil(len(ordered) * q))
    return ordered[k - 1]


class LocalCheckCache:
    """Memoized local-correctness checks (pure given the environment)."""

    def __init__(self, env_for: Callable[[TreeNode], object]):
        self.env_for = env_for
        self._cache: dict[tuple, VerifierResult] = {}

    def check(self, node: TreeNode) -> VerifierResult:
        key = (
            node.premises,
            context_hash(node.context),
            node.statement.text(),
            node.mode,
            proof_body_text(node.proof),
        )
        hit = self._cache.get(key)
        if hit is None:
            hit = check_local(node, self.env_for(node))
            self._cache[key] = hit
        return hit


def _is_trivial_proposal(prop: Statement, goal: Statement) -> bool:
    """The proposal directly implies the goal: same equation up to renaming,
    or one rewrite with the proposal alone closes it."""
    if prop.canonical_key() == goal.canonical_key():
        return True
    for path, _sub in positions(goal.lhs):
        for direction in ("forward", "backward"):
            try:
                if rewrite_at(goal.lhs, path, prop, direction) == goal.rhs:
                    return True
            except RewriteError:
                continue
    return False


def _without_proposal(proof: ConditionalProof, index: int) -> ConditionalProof:
    segments = list(proof.segments)
    merged = segments[index] + segments[index + 1]
    segments[index : index + 2] = [merged]
    proposals = proof.proposals[:index] + proof.proposals[index + 1 :]
    return ConditionalProof(tuple(segments), proposals)


def assign_rewards(
    records: Sequence[GenerationRecord],
    env_for,
    cache: Optional[LocalCheckCache] = None,
) -> list[RewardedNode]:
    """Check, filter, prune, resolve, and reward a generation batch.

    Trivially self-proposing records are discarded (reward 0, excluded from
    resolution and training). Proposals whose deletion keeps a proof locally
    correct are removed from it. Reward is 1 exactly for globally correct
    surviving nodes, resolved over all of them together.
    """
    cache = cache or LocalCheckCache(env_for)
    staged: list[RewardedNode] = []
    for rec in records:
        if not rec.parse_ok:
            staged.append(
                RewardedNode(
                    rec, VerifierResult(False, None, REASON_PARSE), False, False, 0
                )
            )
            continue
        node = rec.node
        if any(
            _is_trivial_proposal(p, node.statement) for p in node.proof.proposals
        ):
            result = cache.check(node)
            staged.append(
                RewardedNode(
                    rec, result, result.accepted, False, 0, filtered="trivial_proposal"
                )
            )
            continue
        result = cache.check(node)
        pruned: list[str] = []
        if result.accepted and node.proof.proposals:
            i = 0
            proof = node.proof
            while i < len(proof.proposals):
                trial_proof = _without_proposal(proof, i)
                trial = TreeNode(
                    node.premises, node.context, node.statement, node.mode, trial_proof
                )
                if cache.check(trial).accepted:
                    pruned.append(proof.proposals[i].name)
                    proof = trial_proof
                else:
                    i += 1
            if pruned:
                mode = node.mode
                node = TreeNode(node.premises, node.context, node.statement, mode, proof)
                rec = replace(rec, node=node)
        staged.append(
            RewardedNode(rec, result, result.accepted, False, 0, None, tuple(pruned))
        )

    survivors = [rn for rn in staged if rn.filtered is None]
    forest = resolve_global(
        [rn.record.node for rn in survivors],
        env_for,
        precomputed_local=[rn.local for rn in survivors],
    )
    out: list[RewardedNode] = []
    global_iter = iter(forest.global_ok)
    for rn in staged:
        if rn.filtered is not None:
            out.append(rn)
            continue
        is_global = next(global_iter)
        out.append(replace(rn, global_ok=is_global, reward=int(is_global)))
    return out


def compute_weight(node: RewardedNode, estimator, gamma: float = DEFAULT_GAMMA) -> float:
    """Length-discounted product of proposal values; zero unless locally correct.

    The length is the character count of the canonical proof body (the mode
    token excluded).
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma {gamma} outside (0, 1)")
    if not node.local or node.filtered is not None:
        return 0.0
    tree_node = node.record.node
    h = len(proof_body_text(tree_node.proof))
    weight = gamma**h
    ctx = context_text(tree_node.context)
    for prop in tree_node.proof.proposals:
        weight *= predict_value(estimator, ctx, prop)
    return weight


def expert_iteration_weight(node: RewardedNode) -> float:
    """The comparison baseline: all-or-nothing credit at global correctness."""
    return 1.0 if node.global_ok and node.filtered is None else 0.0


class ReplayBuffer:
    """Bounded training-example store with round-FIFO eviction.

    Entries deduplicate on (prompt, target) keeping the maximum weight seen;
    re-insertion refreshes an entry's round so live examples survive.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self._entries: dict[tuple, list] = {}
        self._counter = 0

    def __len__(self) -> int:
        return len(self._entries)

    def insert(self, example: WeightedExample, round_index: int, novel: bool = False):
        key = (example.prompt.context, example.prompt.statement.text(), example.target)
        entry = self._entries.get(key)
        self._counter += 1
        if entry is None:
            self._entries[key] = [example, round_index, self._counter, novel]
        else:
            if example.weight > entry[0].weight:
                entry[0] = example
            entry[1] = round_index
            entry[2] = self._counter
            entry[3] = entry[3] or novel
        if len(self._entries) > self.capacity:
            victims = sorted(self._entries.items(), key=lambda kv: (kv[1][1], kv[1][2]))
            for key, _ in victims[: len(self._entries) - self.capacity]:
                del self._entries[key]

    def sample(self, rng: random.Random, n: int) -> list[WeightedExample]:
        entries = [e[0] for e in self._entries.values()]
        if n >= len(entries):
            return entries
        return rng.sample(entries, n)

    def novel_count(self) -> int:
        return sum(1 for e in self._entries.values() if e[3])

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "entries": [
                {
                    "context": e[0].prompt.context,
                    "statement": e[0].prompt.statement.text(),
                    "target": e[0].target,
                    "weight": e[0].weight,
                    "round": e[1],
                    "order": e[2],
                    "novel": e[3],
                }
                for e in self._entries.values()
            ],
        }


def build_training_set(
    rewarded: Sequence[RewardedNode],
    estimator,
    gamma: float,
    ground_truth: Sequence[Example],
    buffer: ReplayBuffer,
    round_index: int = 0,
    rng: Optional[random.Random] = None,
    weighting: str = "prod",
    no_lemma_proposal: bool = False,
    context_limit: int = DEFAULT_CONTEXT_LIMIT,
    corpus_keys: frozenset = frozenset(),
) -> list[WeightedExample]:
    """Assemble this round's weighted examples and mix in replayed ones.

    Per surviving generated node: one example at its computed weight, plus
    an augmented twin (proposals moved into the context) when the node is
    locally correct and proposes lemmas. Ground-truth batch examples enter
    at weight one (with their augmented twins). Everything is inserted into
    the buffer; the returned slice is this round's examples plus an
    equal-sized uniform buffer sample.
    """
    if weighting not in ("prod", "expert_iteration"):
        raise ValueError(f"unknown weighting {weighting!r}")
    rng = rng or random.Random(0)
    fresh: list[tuple[WeightedExample, bool]] = []

    def weight_of(rn: RewardedNode) -> float:
        if weighting == "expert_iteration":
            return expert_iteration_weight(rn)
        return compute_weight(rn, estimator, gamma)

    for rn in rewarded:
        if rn.record.origin == ORIGIN_GROUND_TRUTH:
            continue
        if rn.filtered is not None or not rn.record.parse_ok:
            continue
        node = rn.record.node
        w = weight_of(rn)
        novel = (
            rn.global_ok
            and rn.record.depth >= 1
            and node.statement.canonical_key() not in corpus_keys
        )
        prompt = Prompt.make(context_text(node.context), node.statement, None, context_limit)
        fresh.append(
            (WeightedExample(prompt, serialize(node.mode, node.proof), w), novel)
        )
        if rn.local and node.proof.proposals:
            aug_ctx = node.context + tuple(CtxLemma(p) for p in node.proof.proposals)
            aug_prompt = Prompt.make(
                context_text(aug_ctx), node.statement, None, context_limit
            )
            aug_target = serialize(MODE_NO_INVOKE, strip_invokes(node.proof))
            fresh.append((WeightedExample(aug_prompt, aug_target, w), novel))

    for ex in ground_truth:
        if no_lemma_proposal and ex.proof.proposals:
            aug = augment_sft(ex)
            prompt = Prompt.make(context_text(aug.context), aug.statement, None, context_limit)
            fresh.append((WeightedExample(prompt, aug.target_text(), 1.0), False))
            continue
        prompt = Prompt.make(context_text(ex.context), ex.statement, None, context_limit)
        fresh.append((WeightedExample(prompt, ex.target_text(), 1.0), False))
        aug = augment_sft(ex)
        if aug is not None:
            aug_prompt = Prompt.make(
                context_text(aug.context), aug.statement, None, context_limit
            )
            fresh.append((WeightedExample(aug_prompt, aug.target_text(), 1.0), False))

    for example, novel in fresh:
        buffer.insert(example, round_index, novel)
    examples = [e for e, _ in fresh]
    examples.extend(buffer.sample(rng, len(examples)))
    return examples


@dataclass
class RLConfig:
    seed: int = 0
    rounds: int = 20
    batch_size: int = 256
    train_depth: int = 3
    test_depth: int = 2
    gamma: float = DEFAULT_GAMMA
    context_limit: int = DEFAULT_CONTEXT_LIMIT
    buffer_capacity: Optional[int] = None
    weighting: str = "prod"
    no_lemma_proposal: bool = False
    checkpoint_every: int = 1

    def capacity(self) -> int:
        return self.buffer_capacity or 10 * self.batch_size

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "batch_size": self.batch_size,
            "train_depth": self.train_depth,
            "test_depth": self.test_depth,
            "gamma": self.gamma,
            "context_limit": self.context_limit,
            "buffer_capacity": self.buffer_capacity,
            "weighting": self.weighting,
            "no_lemma_proposal": self.no_lemma_proposal,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RLConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def rl_train(
    policy,
    estimator,
    dataset: Sequence[Example],
    corpus: Corpus,
    config: RLConfig,
    out_dir: Optional[Path] = None,
) -> tuple[object, object, list[dict]]:
    """Run the round loop; returns (policy, estimator, per-round metrics).

    Metrics rows are deterministic functions of the seeds; wall-clock times
    go to a separate timings list so metrics files stay byte-reproducible.
    """
    if config.rounds < 1 or config.batch_size < 1:
        raise ValueError("rounds and batch size must be at least 1")
    buffer = ReplayBuffer(config.capacity())
    cache = LocalCheckCache(corpus.env_for)
    corpus_keys = corpus.canonical_statements()
    metrics: list[dict] = []
    timings: list[dict] = []
    proved_cumulative: set[str] = set()
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "rounds").mkdir(parents=True, exist_ok=True)

    for r in range(config.rounds):
        t0 = time.perf_counter()
        rng = random.Random(stable_seed(config.seed, "round", r))
        if len(dataset) <= config.batch_size:
            batch = list(dataset)
        else:
            batch = rng.sample(list(dataset), config.batch_size)
        records = generate_trees_train(
            policy,
            batch,
            config.train_depth,
            base_seed=stable_seed(config.seed, "gen", r),
            context_limit=config.context_limit,
            no_lemma_proposal=config.no_lemma_proposal,
        )
        rewarded = assign_rewards(records, corpus.env_for, cache)

        labels = [
            ValueLabel(
                context_text(rn.record.node.context)[-config.context_limit :],
                rn.record.node.statement,
                rn.reward,
            )
            for rn in rewarded
        ]
        fit_value(estimator, labels)

        examples = build_training_set(
            rewarded,
            estimator,
            config.gamma,
            batch,
            buffer,
            round_index=r,
            rng=random.Random(stable_seed(config.seed, "buffer", r)),
            weighting=config.weighting,
            no_lemma_proposal=config.no_lemma_proposal,
            context_limit=config.context_limit,
            corpus_keys=corpus_keys,
        )
        update_policy(policy, examples)

        generated = [rn for rn in rewarded if rn.record.origin != ORIGIN_GROUND_TRUTH]
        proved_lemmas = {
            rn.record.node.statement.canonical_key()
            for rn in generated
            if rn.global_ok and rn.record.depth >= 1
        }
        novel_lemmas = {k for k in proved_lemmas if k not in corpus_keys}
        proved_cumulative.update(
            rn.record.node.statement.canonical_key()
            for rn in generated
            if rn.global_ok
        )
        n_gen = len(generated) or 1
        row = {
            "round": r,
            "local_rate": round(sum(rn.local for rn in generated) / n_gen, 6),
            "global_rate": round(sum(rn.global_ok for rn in generated) / n_gen, 6),
            "novel_lemma_fraction": round(
                len(novel_lemmas) / max(1, len(proved_lemmas)), 6
            ),
            "proved_lemmas": len(proved_lemmas),
            "novel_lemmas": len(novel_lemmas),
            "buffer_size": len(buffer),
            "buffer_novel": buffer.novel_count(),
            "cumulative_proved": len(proved_cumulative),
            "batch": len(batch),
            "records": len(records),
        }
        metrics.append(row)
        timings.append({"round": r, "seconds": round(time.perf_counter() - t0, 3)})

        if out_dir is not None and (r + 1) % config.checkpoint_every == 0:
            _write_round_artifacts(out_dir, r, policy, estimator, buffer, rewarded)

    if out_dir is not None:
        with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for row in metrics:
                fh.write(json.dumps(row) + "\n")
        with open(out_dir / "timings.jsonl", "w", encoding="utf-8") as fh:
            for row in timings:
                fh.write(json.dumps(row) + "\n")
    return policy, estimator, metrics


def _write_round_artifacts(out_dir: Path, r: int, policy, estimator, buffer, rewarded):
    from .policy import save_estimator, save_policy

    rounds = out_dir / "rounds"
    save_policy(rounds / f"round_{r:03d}.policy.json", policy)
    save_estimator(rounds / f"round_{r:03d}.value.json", estimator)
    with open(rounds / f"round_{r:03d}.buffer.json", "w", encoding="utf-8") as fh:
        json.dump(buffer.state_dict(), fh)
    write_records(
        rounds / f"round_{r:03d}.forest.jsonl",
        (
            node_record(
                rn.record.node,
                depth=rn.record.depth,
                origin=rn.record.origin,
                local=rn.local,
                glob=rn.global_ok,
                reward=rn.reward,
                filtered=rn.filtered,
                pruned=list(rn.pruned_proposals),
            )
            for rn in rewarded
        ),
    )
