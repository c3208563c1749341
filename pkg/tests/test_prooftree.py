import itertools
import random

import pytest

from lemmaforge.condproof import parse_conditional_proof
from lemmaforge.kernel import (
    REASON_PROPOSAL_COLLISION,
    REASON_UNKNOWN_FACT,
    parse_statement,
)
from lemmaforge.prooftree import (
    CtxAxiom,
    TreeNode,
    build_env,
    build_tree,
    check_local,
    context_hash,
    context_text,
    flatten,
    node_from_record,
    node_record,
    parse_context,
    resolve_global,
    tree_depth,
    verify_script,
)

CTX = parse_context(
    "axiom add_Z: add(0, y) = y\naxiom add_S: add(S(x), y) = S(add(x, y))"
)
ALT_CTX = CTX + parse_context("axiom dbl_S: dbl(S(x)) = S(S(dbl(x)))")
ENV = build_env([], CTX)
ALT_ENV = build_env([], ALT_CTX)


def node(stmt, proof, ctx=CTX):
    mode, cp = parse_conditional_proof(proof)
    return TreeNode(frozenset(), ctx, parse_statement(stmt), mode, cp)


def env_for(n):
    return ENV if n.context == CTX else ALT_ENV


# --- check_local -----------------------------------------------------------------


def test_local_auto_no_proposals():
    n = node("theorem th_a: add(S(0), 0) = S(0)", "<no_invoke> auto 100")
    assert check_local(n, ENV).accepted


def test_local_with_assumed_identical_proposal():
    # renaming of the node's own statement; local check does not filter it
    n = node(
        "theorem th_b: add(S(0), 0) = S(0)",
        "<use_invoke> <invoke> lemma hh: add(S(0), 0) = S(0) </invoke> rw hh at ; refl",
    )
    assert check_local(n, ENV).accepted


def test_local_unknown_fact():
    n = node("theorem th_c: add(0, 0) = 0", "<no_invoke> rw nonsense at ; refl")
    res = check_local(n, ENV)
    assert (res.accepted, res.reason) == (False, REASON_UNKNOWN_FACT)


def test_local_proposal_collision():
    n = node(
        "theorem th_d: add(0, 0) = 0",
        "<use_invoke> <invoke> lemma add_Z: add(0, 0) = 0 </invoke> rw add_Z at ; refl",
    )
    res = check_local(n, ENV)
    assert (res.accepted, res.reason) == (False, REASON_PROPOSAL_COLLISION)


# --- resolve_global -----------------------------------------------------------------


def two_node_forest():
    a = node(
        "theorem root_p: add(S(0), S(0)) = S(S(0))",
        "<use_invoke> <invoke> lemma step_l: add(S(0), S(0)) = S(add(0, S(0))) </invoke>"
        " rw step_l at ; rw add_Z at 0 ; refl",
    )
    l = node(
        "lemma wit_l: add(S(0), S(0)) = S(add(0, S(0)))", "<no_invoke> rw add_S at ; refl"
    )
    return a, l


def test_resolve_witness_pair():
    a, l = two_node_forest()
    forest = resolve_global([a, l], env_for)
    assert forest.local == (True, True)
    assert forest.global_ok == (True, True)
    assert forest.witness[0] == {0: 1}


def test_resolve_missing_witness():
    a, _ = two_node_forest()
    forest = resolve_global([a], env_for)
    assert forest.local == (True,) and forest.global_ok == (False,)


def test_resolve_mixing_across_attempts():
    # attempt 1 invokes an unproved lemma; attempt 2's node set proves it
    a, l = two_node_forest()
    assert resolve_global([a], env_for).global_ok == (False,)
    assert resolve_global([a, l], env_for).global_ok == (True, True)


def test_witness_requires_same_context():
    a, l = two_node_forest()
    l_other = TreeNode(l.premises, ALT_CTX, l.statement, l.mode, l.proof)
    forest = resolve_global([a, l_other], env_for)
    assert forest.global_ok == (False, True)


def test_cycles_are_not_globally_correct():
    a = node(
        "lemma cyc_a: add(0, 0) = 0",
        "<use_invoke> <invoke> lemma cyc_h: add(0, 0) = 0 </invoke> rw cyc_h at ; refl",
    )
    forest = resolve_global([a, a], env_for)
    assert forest.global_ok == (False, False)


# --- trees and flattening --------------------------------------------------------------


def chain_forest():
    """root cites mid, mid cites leaf; all share one context."""
    leaf = node(
        "lemma ch_leaf: add(S(0), S(S(0))) = S(add(0, S(S(0))))",
        "<no_invoke> rw add_S at ; refl",
    )
    mid = node(
        "lemma ch_mid: add(S(0), S(S(0))) = S(S(S(0)))",
        "<use_invoke> <invoke> lemma hh1: add(S(0), S(S(0))) = S(add(0, S(S(0)))) </invoke>"
        " rw hh1 at ; rw add_Z at 0 ; refl",
    )
    root = node(
        "theorem ch_root: S(add(S(0), S(S(0)))) = S(S(S(S(0))))",
        "<use_invoke> <invoke> lemma hh2: add(S(0), S(S(0))) = S(S(S(0))) </invoke>"
        " rw hh2 at 0 ; refl",
    )
    return [root, mid, leaf]


def test_build_tree_and_flatten_chain():
    nodes = chain_forest()
    forest = resolve_global(nodes, env_for)
    assert forest.global_ok == (True, True, True)
    tree = build_tree(0, forest)
    assert tree_depth(tree) == 3
    entries = flatten(tree)
    # child-first order: leaf, mid, root
    assert [e.statement.name for e in entries] == ["ch_leaf", "ch_mid", "ch_root"]
    results = verify_script(entries, ENV)
    assert all(r.accepted for r in results)


def test_build_tree_absent_for_nonglobal_root():
    a, _ = two_node_forest()
    forest = resolve_global([a], env_for)
    assert build_tree(0, forest) is None


def test_flatten_dedups_shared_lemma():
    shared = node(
        "lemma sh_l: add(S(0), 0) = S(add(0, 0))", "<no_invoke> rw add_S at ; refl"
    )
    root = node(
        "theorem sh_root: add(add(S(0), 0), add(S(0), 0)) = add(S(add(0, 0)), S(add(0, 0)))",
        "<use_invoke> <invoke> lemma dup1: add(S(0), 0) = S(add(0, 0)) </invoke>"
        " rw dup1 at 0 ; rw dup1 at 1 ; refl",
    )
    root2 = node(
        "theorem sh_root2: S(add(S(0), 0)) = S(S(add(0, 0)))",
        "<use_invoke> <invoke> lemma dup2: add(S(0), 0) = S(add(0, 0)) </invoke>"
        " rw dup2 at 0 ; refl",
    )
    forest = resolve_global([root, shared, root2], env_for)
    assert all(forest.global_ok)
    tree = build_tree(0, forest)
    entries = flatten(tree)
    keys = [e.statement.canonical_key() for e in entries]
    assert len(keys) == len(set(keys))
    assert all(r.accepted for r in verify_script(entries, ENV))


def test_flatten_renames_colliding_names():
    # two different lemmas that happen to share a name across attempts
    l1 = node(
        "lemma same_name: add(S(0), 0) = S(add(0, 0))", "<no_invoke> rw add_S at ; refl"
    )
    l2 = node(
        "lemma same_name: add(0, S(0)) = S(0)", "<no_invoke> rw add_Z at ; refl"
    )
    root = node(
        "theorem nm_root: add(add(S(0), 0), add(0, S(0))) = add(S(add(0, 0)), S(0))",
        "<use_invoke> <invoke> lemma uu1: add(S(0), 0) = S(add(0, 0)) </invoke>"
        " rw uu1 at 0"
        " <invoke> lemma uu2: add(0, S(0)) = S(0) </invoke> rw uu2 at 1 ; refl",
    )
    forest = resolve_global([root, l1, l2], env_for)
    assert forest.global_ok[0]
    entries = flatten(build_tree(0, forest))
    names = [e.statement.name for e in entries]
    assert len(names) == len(set(names))
    assert all(r.accepted for r in verify_script(entries, ENV))


# --- oracle equivalence ----------------------------------------------------------------


def derivable_oracle(nodes, local, keys, prop_keys, shares):
    """Bounded tree unfolding: independent of the fixpoint implementation.

    A node is globally correct iff a finite witness tree exists; any such
    tree has a repetition-free branch, so unfolding to depth n suffices.
    """
    n = len(nodes)

    def derivable(i, depth):
        if not local[i]:
            return False
        if depth == 0 and prop_keys[i]:
            return False
        for pk in prop_keys[i]:
            if not any(
                keys[j] == pk and shares[j] == shares[i] and derivable(j, depth - 1)
                for j in range(n)
            ):
                return False
        return True

    return [derivable(i, n) for i in range(n)]


def subset_oracle(nodes, local, keys, prop_keys, shares):
    """Literal subset enumeration: a node is globally correct iff some subset
    of locally correct nodes supports a valid tree rooted at it."""
    n = len(nodes)
    correct = [False] * n
    locals_idx = [i for i in range(n) if local[i]]
    for r in range(len(locals_idx) + 1):
        for subset in itertools.combinations(locals_idx, r):
            sset = set(subset)
            # least fixpoint restricted to the subset
            okay = set()
            changed = True
            while changed:
                changed = False
                for i in sset - okay:
                    if all(
                        any(
                            j in okay and keys[j] == pk and shares[j] == shares[i]
                            for j in sset
                        )
                        for pk in prop_keys[i]
                    ):
                        okay.add(i)
                        changed = True
            for i in okay:
                correct[i] = True
    return correct


def random_forest(rng: random.Random):
    """Random nodes over chained ground equations with cycles, duplicates,
    broken proofs, and two context variants."""
    terms = ["0", "S(0)", "S(S(0))", "S(S(S(0)))"]
    nodes = []
    count = rng.randrange(2, 9)
    for k in range(count):
        ctx = CTX if rng.random() < 0.7 else ALT_CTX
        i = rng.randrange(len(terms))
        j = rng.randrange(len(terms))
        name = f"rn_{k}"
        if rng.random() < 0.3:
            # proposal-free: trivially true (refl) or broken
            if rng.random() < 0.6:
                stmt = f"lemma {name}: {terms[i]} = {terms[i]}"
                proof = "<no_invoke> refl"
            else:
                stmt = f"lemma {name}: {terms[i]} = {terms[j]}"
                proof = "<no_invoke> refl"  # broken unless i == j
            nodes.append(node(stmt, proof, ctx))
            continue
        mid = rng.randrange(len(terms))
        stmt = f"lemma {name}: {terms[i]} = {terms[j]}"
        proof = (
            f"<use_invoke> <invoke> lemma hxa: {terms[i]} = {terms[mid]} </invoke>"
            f" rw hxa at"
            f" <invoke> lemma hxb: {terms[mid]} = {terms[j]} </invoke>"
            f" rw hxb at ; refl"
        )
        nodes.append(node(stmt, proof, ctx))
    return nodes


@pytest.mark.parametrize("seed", range(40))
def test_fixpoint_matches_oracles(seed):
    rng = random.Random(seed)
    nodes = random_forest(rng)
    forest = resolve_global(nodes, env_for)
    keys = [n.statement.canonical_key() for n in nodes]
    prop_keys = [[p.canonical_key() for p in n.proof.proposals] for n in nodes]
    shares = [n.share_key() for n in nodes]
    unfold = derivable_oracle(nodes, forest.local, keys, prop_keys, shares)
    assert list(forest.global_ok) == unfold
    subset = subset_oracle(nodes, forest.local, keys, prop_keys, shares)
    assert list(forest.global_ok) == subset
    # flattening theorem plus monotonicity and global-implies-local
    for i, ok in enumerate(forest.global_ok):
        assert not ok or forest.local[i]
        if ok:
            entries = flatten(build_tree(i, forest))
            env = env_for(nodes[i])
            assert all(r.accepted for r in verify_script(entries, env))
    bigger = resolve_global(list(nodes) + chain_forest(), env_for)
    for i, ok in enumerate(forest.global_ok):
        assert not ok or bigger.global_ok[i]


# --- records -----------------------------------------------------------------------


def test_node_record_roundtrip(tmp_path):
    a, l = two_node_forest()
    rec = node_record(a, local=True, glob=False)
    assert rec["context_hash"] == context_hash(a.context)
    back = node_from_record(rec)
    assert back == a
    from lemmaforge.prooftree import read_records, write_records

    path = tmp_path / "forest.jsonl"
    write_records(path, [node_record(a), node_record(l)])
    rows = read_records(path)
    assert [node_from_record(r) for r in rows] == [a, l]
