"""Evaluation: pooled-attempt proving rates and depth breakdowns.

Each theorem gets k independent proof-tree attempts. Global correctness is
resolved over the pooled nodes of the attempts considered, so one attempt's
lemma proof can complete another attempt's tree. A theorem counts as proved
at k when at least one of its first k attempt roots is globally correct
under the pool of those k attempts; every proved theorem also gets its
flattened linear script re-verified and archived.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Corpus, Example
from .engine import GenerationRecord, Goal, LocalCheckCache, generate_trees_test
from .kernel import steps_text
from .prooftree import (
    ResolvedForest,
    build_tree,
    flatten,
    node_record,
    resolve_global,
    tree_depth,
    verify_script,
)
from .util import stable_seed


class EvaluationDefect(RuntimeError):
    """A flattened script for a globally correct root failed to verify."""


@dataclass
class AttemptTrace:
    seed: int
    records: list[GenerationRecord]
    local: list[bool]

    @property
    def root_index(self) -> int:
        return 0  # one goal per attempt: the first record is the root


@dataclass
class TheoremEval:
    name: str
    file: str
    gt_depth: int
    example: Example
    attempts: list[AttemptTrace]
    # resolved under the pool of all attempts:
    globally_correct: list[bool]
    tree_depths: list[Optional[int]]
    script: Optional[list[dict]]

    @property
    def proved(self) -> bool:
        return any(self.globally_correct)


def _pooled_resolution(
    attempts: Sequence[AttemptTrace], env_for, k: int
) -> tuple[ResolvedForest, list[int]]:
    nodes = []
    local = []
    roots = []
    for trace in attempts[:k]:
        roots.append(len(nodes))
        nodes.extend(rec.node for rec in trace.records)
        local.extend(trace.local)
    forest = resolve_global(nodes, env_for, precomputed_local=local)
    return forest, roots


def evaluate_policy(
    policy,
    examples: Sequence[Example],
    corpus: Corpus,
    k: int = 16,
    depth: int = 2,
    base_seed: int = 0,
    pool_across_theorems: bool = False,
    cache: Optional[LocalCheckCache] = None,
) -> list[TheoremEval]:
    """Generate and score k pooled attempts per theorem."""
    if k < 1:
        raise ValueError("k must be at least 1")
    cache = cache or LocalCheckCache(corpus.env_for)
    evals: list[TheoremEval] = []
    all_traces: list[tuple[int, AttemptTrace]] = []

    for ti, ex in enumerate(examples):
        goal = Goal(ex.premises, ex.context, ex.statement)
        attempts = []
        for a in range(k):
            seed = stable_seed(base_seed, "eval", ti, a)
            records = generate_trees_test(
                policy, [goal], depth, base_seed=seed
            )
            local = [cache.check(rec.node).accepted for rec in records]
            attempts.append(AttemptTrace(seed, records, local))
            all_traces.append((ti, attempts[-1]))
        evals.append(
            TheoremEval(
                ex.statement.name, ex.file, ex.depth, ex, attempts, [], [], None
            )
        )

    for ti, te in enumerate(evals):
        if pool_across_theorems:
            traces = [t for _, t in all_traces]
            own = [i for i, (tj, _) in enumerate(all_traces) if tj == ti]
            forest, roots_all = _pooled_resolution(traces, corpus.env_for, len(traces))
            roots = [roots_all[i] for i in own]
        else:
            forest, roots = _pooled_resolution(te.attempts, corpus.env_for, len(te.attempts))
        te.globally_correct = [forest.global_ok[r] for r in roots]
        te.tree_depths = []
        for r in roots:
            tree = build_tree(r, forest)
            te.tree_depths.append(tree_depth(tree) if tree is not None else None)
        te.script = _archive_script(te, forest, roots, corpus)
    return evals


def _archive_script(te: TheoremEval, forest, roots, corpus) -> Optional[list[dict]]:
    for r in roots:
        if not forest.global_ok[r]:
            continue
        tree = build_tree(r, forest)
        entries = flatten(tree)
        env = corpus.env_for(te.example)
        results = verify_script(entries, env)
        if not all(res.accepted for res in results):
            bad = next(i for i, res in enumerate(results) if not res.accepted)
            raise EvaluationDefect(
                f"flattened script for {te.name} rejected at entry {bad}: "
                f"{results[bad].reason}"
            )
        return [
            {"statement": e.statement.text(), "steps": steps_text(e.steps)}
            for e in entries
        ]
    return None


def pass_at_k(evals: Sequence[TheoremEval], k: int, env_for=None) -> float:
    """Fraction of theorems with a globally correct root among the first k
    attempts, re-resolved over exactly those attempts' pooled nodes."""
    if not evals:
        return 0.0
    proved = 0
    for te in evals:
        if len(te.attempts) < k:
            raise ValueError(
                f"{te.name} has {len(te.attempts)} attempts, need {k}"
            )
        if env_for is None:
            raise ValueError("env_for required to re-resolve pooled attempts")
        forest, roots = _pooled_resolution(te.attempts, env_for, k)
        if any(forest.global_ok[r] for r in roots):
            proved += 1
    return proved / len(evals)


def pass_table(evals: Sequence[TheoremEval], ks: Sequence[int], env_for) -> list[dict]:
    return [{"k": k, "pass_rate": round(pass_at_k(evals, k, env_for), 6)} for k in ks]


def depth_breakdown(evals: Sequence[TheoremEval]) -> dict:
    """Pass rates per (ground-truth depth, deepest-correct-tree depth) cell.

    Unproved theorems contribute to their row total only. Row counts sum to
    the test set's ground-truth depth histogram.
    """
    rows: dict[int, dict] = {}
    for te in evals:
        row = rows.setdefault(
            te.gt_depth, {"total": 0, "proved": 0, "by_tree_depth": {}}
        )
        row["total"] += 1
        depths = [d for d in te.tree_depths or [] if d is not None]
        if depths and te.proved:
            row["proved"] += 1
            d = max(depths)
            row["by_tree_depth"][d] = row["by_tree_depth"].get(d, 0) + 1
    out = {}
    for gt, row in sorted(rows.items()):
        out[gt] = {
            "total": row["total"],
            "proved": row["proved"],
            "pass_rate": round(row["proved"] / row["total"], 6),
            "by_tree_depth": {
                str(d): {
                    "count": c,
                    "rate": round(c / row["total"], 6),
                }
                for d, c in sorted(row["by_tree_depth"].items())
            },
        }
    return out


# --- artifact output --------------------------------------------------------------


def write_eval_artifacts(
    out_dir,
    evals: Sequence[TheoremEval],
    ks: Sequence[int],
    corpus: Corpus,
    figures: bool = True,
) -> dict:
    """Result records, delimited tables, archived scripts, node dump, figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "results.jsonl", "w", encoding="utf-8") as fh:
        for te in evals:
            fh.write(
                json.dumps(
                    {
                        "theorem": te.name,
                        "file": te.file,
                        "gt_depth": te.gt_depth,
                        "proved": te.proved,
                        "attempts": [
                            {
                                "seed": a.seed,
                                "globally_correct": g,
                                "tree_depth": d,
                            }
                            for a, g, d in zip(
                                te.attempts, te.globally_correct, te.tree_depths
                            )
                        ],
                    }
                )
                + "\n"
            )

    table = pass_table(evals, ks, corpus.env_for)
    with open(out_dir / "pass_at_k.tsv", "w", encoding="utf-8") as fh:
        fh.write("k\tpass_rate\n")
        for row in table:
            fh.write(f"{row['k']}\t{row['pass_rate']}\n")

    breakdown = depth_breakdown(evals)
    with open(out_dir / "depth_breakdown.tsv", "w", encoding="utf-8") as fh:
        fh.write("gt_depth\ttotal\tproved\tpass_rate\ttree_depth_counts\n")
        for gt, row in breakdown.items():
            counts = ",".join(
                f"{d}:{c['count']}" for d, c in row["by_tree_depth"].items()
            )
            fh.write(
                f"{gt}\t{row['total']}\t{row['proved']}\t{row['pass_rate']}\t{counts}\n"
            )

    with open(out_dir / "scripts.jsonl", "w", encoding="utf-8") as fh:
        for te in evals:
            if te.script is not None:
                fh.write(
                    json.dumps({"theorem": te.name, "entries": te.script}) + "\n"
                )

    with open(out_dir / "forest.jsonl", "w", encoding="utf-8") as fh:
        for te in evals:
            for ai, trace in enumerate(te.attempts):
                for rec, loc in zip(trace.records, trace.local):
                    fh.write(
                        json.dumps(
                            node_record(
                                rec.node,
                                theorem=te.name,
                                attempt=ai,
                                depth=rec.depth,
                                origin=rec.origin,
                                local=loc,
                                glob=bool(
                                    te.globally_correct[ai] and rec.depth == 0
                                ),
                            )
                        )
                        + "\n"
                    )

    if figures:
        from . import report

        report.save_pass_curve(
            out_dir / "pass_at_k.png",
            {"policy": [(row["k"], row["pass_rate"]) for row in table]},
        )
        report.save_depth_breakdown(out_dir / "depth_breakdown.png", breakdown)
    return {"pass_at_k": table, "depth_breakdown": breakdown}
