import json
import math
import random

import pytest

from lemmaforge.condproof import MODE_NO_INVOKE, MODE_USE_INVOKE
from lemmaforge.corpus import WITHOUT_LEMMAS, augment_sft
from lemmaforge.engine import (
    Goal,
    LocalCheckCache,
    ORIGIN_FORCED_NOINVOKE,
    ORIGIN_GROUND_TRUTH,
    ORIGIN_SAMPLED_INVOKE,
    RLConfig,
    ReplayBuffer,
    assign_rewards,
    build_training_set,
    compute_weight,
    expert_iteration_weight,
    generate_trees_test,
    generate_trees_train,
    rl_train,
)
from lemmaforge.kernel import parse_statement
from lemmaforge.policy import (
    BetaValue,
    Prompt,
    ProofSample,
    ReplayPolicy,
    ValueLabel,
    WeightedExample,
    fit_value,
)
from lemmaforge.prooftree import build_env, context_text, parse_context
from lemmaforge.policy import CountPolicy, update_policy

CTX = parse_context(
    "axiom add_Z: add(0, y) = y\naxiom add_S: add(S(x), y) = S(add(x, y))"
)
ENV = build_env([], CTX)


def env_for(node):
    return build_env([], node.context)


def goal(stmt_text):
    return Goal(frozenset(), CTX, parse_statement(stmt_text))


class ScriptedPolicy:
    """Emits canned text per statement name; optional per-name invoke probs."""

    kind = "scripted"

    def __init__(self, script, probs=None, default="<no_invoke> refl"):
        self.script = script
        self.probs = probs or {}
        self.default = default

    def sample(self, prompt, noise_seed):
        text = None
        entry = self.script.get(prompt.statement.name)
        if isinstance(entry, dict):
            text = entry.get(prompt.forced_mode or "free")
        else:
            text = entry
        if text is None:
            text = self.default
        if prompt.forced_mode == MODE_NO_INVOKE and not text.startswith("<no_invoke>"):
            text = "<no_invoke> auto 50"
        if prompt.forced_mode == MODE_USE_INVOKE and not text.startswith("<use_invoke>"):
            text = "<use_invoke> auto 50"
        from lemmaforge.policy import _sample_from_text

        return _sample_from_text(text)

    def invoke_prob(self, prompt):
        return self.probs.get(prompt.statement.name, 0.0)

    def update(self, examples):
        pass


# --- test-time generation -------------------------------------------------------------


def test_depth_zero_forces_everything():
    policy = ScriptedPolicy({})
    records = generate_trees_test(policy, [goal("lemma gz_a: add(0,0) = 0")], 0)
    assert len(records) == 1
    assert records[0].origin == ORIGIN_FORCED_NOINVOKE
    assert not records[0].node.proof.proposals


def test_always_proposing_policy_yields_three_levels():
    text = (
        "<use_invoke> <invoke> lemma lv_{n}: add(0, 0) = 0 </invoke>"
        " rw lv_{n} at ; refl"
    )

    class Proposer:
        def sample(self, prompt, noise_seed):
            from lemmaforge.policy import _sample_from_text

            if prompt.forced_mode == MODE_NO_INVOKE:
                return _sample_from_text("<no_invoke> refl")
            n = len(prompt.statement.name)
            return _sample_from_text(text.replace("{n}", f"x{n}"))

        def invoke_prob(self, prompt):
            return 1.0

        def update(self, examples):
            pass

    records = generate_trees_test(Proposer(), [goal("lemma rt_a: add(0,0) = 0")], 2)
    assert len(records) == 3
    assert [r.depth for r in records] == [0, 1, 2]
    assert records[2].origin == ORIGIN_FORCED_NOINVOKE
    assert not records[2].node.proof.proposals


def test_no_cross_goal_dedup_at_generation():
    shared = "lemma dup_s: add(0, 0) = 0"
    policy = ScriptedPolicy(
        {
            "dup_s": "<no_invoke> rw add_Z at ; refl",
        },
        default="<no_invoke> refl",
    )
    records = generate_trees_test(policy, [goal(shared), goal(shared)], 0)
    assert len(records) == 2  # identical goals still generate independently


def test_malformed_output_recorded_with_empty_proposals():
    policy = ScriptedPolicy({}, default="<use_invoke> <invoke> broken")
    records = generate_trees_test(policy, [goal("lemma mf_a: add(0,0) = 0")], 1)
    assert records and not records[0].parse_ok
    assert records[0].node.proof.proposals == ()


# --- training-time generation ------------------------------------------------------------


def example_for(stmt_text, proof_text, gt_depth=1):
    from lemmaforge.corpus import Example
    from lemmaforge.condproof import parse_conditional_proof

    mode, cp = parse_conditional_proof(proof_text)
    return Example(
        premises=frozenset(),
        context=CTX,
        statement=parse_statement(stmt_text),
        mode=mode,
        proof=cp,
        in_t_tree=True,
        depth=gt_depth,
        file="test",
    )


def batch_of_four():
    # invoke probabilities 0.9, 0.6, 0.4, 0.1; the top half must be forced
    names = ["qa_a", "qa_b", "qa_c", "qa_d"]
    probs = dict(zip(names, [0.9, 0.6, 0.4, 0.1]))
    examples = [
        example_for(f"lemma {n}: add(0, 0) = 0", "<no_invoke> rw add_Z at ; refl")
        for n in names
    ]
    return examples, probs


def test_median_forcing_selects_top_half():
    examples, probs = batch_of_four()
    policy = ScriptedPolicy({}, probs=probs, default="<no_invoke> refl")
    records = generate_trees_train(
        policy, examples, 1, base_seed=123, complete_ground_truth=False
    )
    forced_invoke = {
        r.node.statement.name for r in records if r.origin == ORIGIN_SAMPLED_INVOKE
    }
    assert {"qa_a", "qa_b"} <= forced_invoke
    assert "qa_d" not in forced_invoke or probs["qa_d"] > 0  # only via its own coin


def test_dual_sampling_gives_every_goal_a_proposal_free_record():
    examples, probs = batch_of_four()
    policy = ScriptedPolicy({}, probs=probs)
    records = generate_trees_train(
        policy, examples, 1, base_seed=9, complete_ground_truth=False
    )
    for ex in examples:
        assert any(
            r.node.statement == ex.statement
            and r.origin == ORIGIN_FORCED_NOINVOKE
            and not r.node.proof.proposals
            for r in records
        )


def test_ground_truth_proposals_become_goals():
    gt = example_for(
        "lemma gt_root: add(0, 0) = 0",
        "<use_invoke> <invoke> lemma gt_c1: add(0, S(0)) = S(0) </invoke> rw gt_c1 at 9"
        " <invoke> lemma gt_c2: add(0, 0) = 0 </invoke> rw gt_c2 at ; refl",
        gt_depth=2,
    )
    policy = ScriptedPolicy({}, default="<no_invoke> refl")
    records = generate_trees_train(policy, [gt], 1, base_seed=4)
    gt_records = [r for r in records if r.origin == ORIGIN_GROUND_TRUTH]
    assert len(gt_records) == 1
    level1 = {r.node.statement.name for r in records if r.depth == 1}
    assert {"gt_c1", "gt_c2"} <= level1


def test_degenerate_train_equals_test_generation():
    examples, probs = batch_of_four()
    policy = ScriptedPolicy(
        {n: "<use_invoke> auto 40" for n in probs}, probs=probs
    )
    seed = 77
    test_records = generate_trees_test(
        policy, [Goal.from_example(e) for e in examples], 2, base_seed=seed
    )
    train_records = generate_trees_train(
        policy,
        examples,
        2,
        base_seed=seed,
        force_quantile=None,
        dual_sampling=False,
        complete_ground_truth=False,
    )
    assert train_records == test_records


# --- rewards -------------------------------------------------------------------------------


def rewarded_for(proof_texts):
    # sub-goals spawned by proposals get proved by bounded search
    policy = ScriptedPolicy(proof_texts, default="<no_invoke> auto 60")
    goals = [goal(f"theorem {name}: {eq}") for name, eq in _STATEMENTS.items() if name in proof_texts]
    records = generate_trees_test(policy, goals, 1, base_seed=0)
    return assign_rewards(records, env_for)


_STATEMENTS = {
    "rw_t": "add(S(0), 0) = S(0)",
}


def test_trivial_proposal_filtered():
    rewarded = rewarded_for(
        {
            "rw_t": "<use_invoke> <invoke> lemma same_t: add(S(0), 0) = S(0) </invoke>"
            " rw same_t at ; refl"
        }
    )
    root = rewarded[0]
    assert root.filtered == "trivial_proposal"
    assert root.reward == 0 and not root.global_ok


def test_unused_proposal_pruned():
    rewarded = rewarded_for(
        {
            "rw_t": "<use_invoke> <invoke> lemma unused_u: add(0, S(0)) = S(0) </invoke>"
            " auto 100"
        }
    )
    root = rewarded[0]
    assert root.local and root.pruned_proposals == ("unused_u",)
    assert not root.record.node.proof.proposals
    assert root.global_ok  # with the dead proposal gone the node is self-contained


def test_necessary_proposal_kept_and_hindsight_reward():
    rewarded = rewarded_for(
        {
            "rw_t": "<use_invoke> <invoke> lemma help_v: add(S(0), 0) = S(add(0, 0)) </invoke>"
            " rw help_v at ; auto 60"
        }
    )
    root = next(r for r in rewarded if r.record.depth == 0)
    lemma = next(r for r in rewarded if r.record.depth == 1)
    assert root.local and root.global_ok  # lemma proved at the next level
    assert lemma.local and lemma.global_ok and lemma.reward == 1


def test_hindsight_lemma_rewarded_when_root_fails():
    # root is locally incorrect; its proposed lemma is proved at level 1
    rewarded = rewarded_for(
        {
            "rw_t": "<use_invoke> <invoke> lemma side_w: add(0, S(0)) = S(0) </invoke>"
            " rw side_w at ; refl"  # wrong: side_w does not rewrite the goal lhs
        }
    )
    root = next(r for r in rewarded if r.record.depth == 0)
    lemma = next(r for r in rewarded if r.record.depth == 1)
    assert not root.local and root.reward == 0
    assert lemma.global_ok and lemma.reward == 1


# --- weights --------------------------------------------------------------------------------


def _rewarded_node(local=True, global_ok=False, proof_text="<no_invoke> refl", stmt=None):
    from lemmaforge.engine import GenerationRecord, RewardedNode
    from lemmaforge.condproof import parse_conditional_proof
    from lemmaforge.kernel import VerifierResult
    from lemmaforge.prooftree import TreeNode

    mode, cp = parse_conditional_proof(proof_text)
    node = TreeNode(
        frozenset(), CTX, parse_statement(stmt or "lemma wn_a: add(0,0) = 0"), mode, cp
    )
    rec = GenerationRecord(node, 0, "sampled_invoke", 0, proof_text, True)
    return RewardedNode(rec, VerifierResult(local), local, global_ok, int(global_ok))


def test_weight_zero_when_not_locally_correct():
    node = _rewarded_node(local=False)
    assert compute_weight(node, BetaValue(), 0.5) == 0.0


def test_weight_one_for_empty_proof_without_proposals():
    node = _rewarded_node(proof_text="<no_invoke>")
    assert compute_weight(node, BetaValue(), 0.5) == 1.0


def test_weight_formula_matches_hand_computation():
    gamma = math.exp(-0.0005)
    proof_body = "rw add_Z at ; refl"
    h = len(proof_body)
    node = _rewarded_node(proof_text=f"<no_invoke> {proof_body}")
    expected = gamma**h
    assert compute_weight(node, BetaValue(), gamma) == pytest.approx(expected, abs=1e-15)
    # one proposal at the untrained prior multiplies by one half
    prop_node = _rewarded_node(
        proof_text="<use_invoke> <invoke> lemma wp_h: add(0,0) = 0 </invoke> rw wp_h at ; refl"
    )
    body = "<invoke> lemma wp_h: add(0, 0) = 0 </invoke> rw wp_h at ; refl"
    assert compute_weight(prop_node, BetaValue(), gamma) == pytest.approx(
        gamma ** len(body) * 0.5, abs=1e-15
    )


def test_weight_bounds_and_monotonicity():
    est = BetaValue()
    gamma = 0.999
    node = _rewarded_node(proof_text="<no_invoke> auto 50")
    w = compute_weight(node, est, gamma)
    assert 0.0 <= w <= 1.0
    longer = _rewarded_node(proof_text="<no_invoke> auto 50 ; auto 50 ; refl")
    assert compute_weight(longer, est, gamma) < w


def test_expert_iteration_weight_cases():
    assert expert_iteration_weight(_rewarded_node(local=True, global_ok=True)) == 1.0
    assert expert_iteration_weight(_rewarded_node(local=True, global_ok=False)) == 0.0
    filtered = _rewarded_node(local=True, global_ok=False)
    from dataclasses import replace

    assert expert_iteration_weight(replace(filtered, filtered="trivial_proposal")) == 0.0


# --- replay buffer -----------------------------------------------------------------------------


def _example(i, weight=1.0):
    return WeightedExample(
        Prompt.make("", parse_statement(f"lemma bf_{i}: add(0,0) = 0")),
        "<no_invoke> refl",
        weight,
    )


def test_buffer_eviction_oldest_round_first():
    buf = ReplayBuffer(capacity=3)
    for i in range(3):
        buf.insert(_example(i), round_index=0)
    buf.insert(_example(3), round_index=1)
    kept = {e.prompt.statement.name for e in buf.sample(random.Random(0), 10)}
    assert "bf_3" in kept and len(kept) == 3


def test_buffer_dedup_keeps_max_weight():
    buf = ReplayBuffer(capacity=4)
    buf.insert(_example(0, 0.2), round_index=0)
    buf.insert(_example(0, 0.9), round_index=1)
    buf.insert(_example(0, 0.5), round_index=2)
    entries = buf.sample(random.Random(0), 10)
    assert len(entries) == 1 and entries[0].weight == 0.9


# --- training set -------------------------------------------------------------------------------


def test_training_set_counts_main_augmented_and_ground_truth():
    rewarded = rewarded_for(
        {
            "rw_t": "<use_invoke> <invoke> lemma help_v: add(S(0), 0) = S(add(0, 0)) </invoke>"
            " rw help_v at ; auto 60"
        }
    )
    gt = example_for("lemma gt_plain: add(0, 0) = 0", "<no_invoke> rw add_Z at ; refl")
    buffer = ReplayBuffer(capacity=100)
    examples = build_training_set(
        rewarded, BetaValue(), math.exp(-0.0005), [gt], buffer, rng=random.Random(0)
    )
    targets = [e.target for e in examples]
    assert any("<invoke>" in t for t in targets)  # the root's own example
    # augmented twin: proposal-free with the lemma moved into the context
    aug = [
        e
        for e in examples
        if e.target.startswith("<no_invoke>")
        and "help_v" in e.prompt.context
    ]
    assert aug
    assert any(e.weight == 1.0 for e in examples)  # ground truth
    assert len(buffer) > 0


def test_training_set_emits_zero_weight_examples():
    rewarded = rewarded_for({"rw_t": "<no_invoke> refl"})  # locally incorrect
    buffer = ReplayBuffer(capacity=10)
    examples = build_training_set(
        rewarded, BetaValue(), 0.999, [], buffer, rng=random.Random(0)
    )
    assert examples and all(e.weight == 0.0 for e in examples)


# --- the round loop ------------------------------------------------------------------------------


def test_rl_train_perfect_replay_round(small_corpus):
    # proposal-free ground truth: the forced proposal-free twin of a
    # lemma-using proof cannot verify without its lemmas, so depth-one
    # examples are where perfect replay gives a perfect global rate
    examples = [
        e
        for e in small_corpus.all_examples(WITHOUT_LEMMAS)
        if e.in_t_tree and not e.proof.proposals
    ]
    policy = ReplayPolicy.from_examples(examples, corruption=0.0)
    config = RLConfig(seed=0, rounds=1, batch_size=8, train_depth=2)
    _, _, metrics = rl_train(policy, BetaValue(), examples, small_corpus, config)
    assert metrics[0]["global_rate"] == 1.0
    assert metrics[0]["novel_lemma_fraction"] == 0.0


def test_rl_train_metrics_deterministic(small_corpus):
    examples = [e for e in small_corpus.all_examples(WITHOUT_LEMMAS) if e.in_t_tree]

    def run():
        policy = CountPolicy(seed=5)
        from lemmaforge.cli import sft_examples_from

        update_policy(policy, sft_examples_from(examples))
        config = RLConfig(seed=3, rounds=2, batch_size=8, train_depth=2)
        _, _, metrics = rl_train(policy, BetaValue(), examples, small_corpus, config)
        return json.dumps(metrics)

    assert run() == run()


def test_rl_train_cumulative_proved_monotone(small_corpus):
    examples = [e for e in small_corpus.all_examples(WITHOUT_LEMMAS) if e.in_t_tree]
    policy = CountPolicy(seed=5)
    from lemmaforge.cli import sft_examples_from

    update_policy(policy, sft_examples_from(examples))
    config = RLConfig(seed=3, rounds=3, batch_size=8, train_depth=2)
    _, _, metrics = rl_train(policy, BetaValue(), examples, small_corpus, config)
    proved = [m["cumulative_proved"] for m in metrics]
    assert proved == sorted(proved)
