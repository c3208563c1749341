"""Command-line interface.

Subcommands walk the whole pipeline: ``gen-corpus`` writes theory files,
``make-dataset`` splits and serializes examples, ``fit-sft`` fits a
reference policy on ground truth, ``rl-train`` runs the round loop,
``evaluate`` reports pooled pass rates with figures, ``resolve`` re-checks
a node-record file and emits flattened scripts, and ``serve-policy``
exposes a checkpoint over the line protocol.

Exit codes: 0 success, 1 usage, 2 data defect, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import random
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    Corpus,
    WITH_LEMMAS,
    WITHOUT_LEMMAS,
    autoify,
    augment_sft,
    load_corpus,
    read_examples,
    save_corpus,
    split_by_dependency,
    write_examples,
)
from .engine import RLConfig, rl_train
from .evaluate import EvaluationDefect, evaluate_policy, write_eval_artifacts
from .policy import (
    BetaValue,
    CountPolicy,
    Prompt,
    RetrievalPolicy,
    WeightedExample,
    load_estimator,
    load_policy,
    save_estimator,
    save_policy,
    serve_policy,
    update_policy,
)
from .prooftree import context_text, node_from_record, read_records, resolve_global
from .synth import GenParams, generate_synthetic_corpus, ood_params

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lemmaforge", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic theory-file corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--files", type=int, default=12)
    p.add_argument("--statements-per-file", type=int, default=8)
    p.add_argument("--depth", type=int, default=3, help="maximum lemma-tree depth")
    p.add_argument("--import-density", type=float, default=0.1)
    p.add_argument("--schematic-fraction", type=float, default=0.35)
    p.add_argument("--auto-budget", type=int, default=100)
    p.add_argument("--ood", action="store_true", help="shifted-regime corpus")
    p.add_argument("--out", required=True)

    p = sub.add_parser("make-dataset", help="segment, peel, split, and serialize examples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=[WITH_LEMMAS, WITHOUT_LEMMAS], default=WITHOUT_LEMMAS)
    p.add_argument("--split-fraction", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-autoify", action="store_true",
                   help="keep raw proofs instead of substituting bounded search")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-sft", help="fit a reference policy on ground truth")
    p.add_argument("--dataset", required=True, help="training example file (jsonl)")
    p.add_argument("--policy", choices=["count", "retrieval"], default="count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rl-train", help="run the round loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-lemma-proposal", action="store_true",
                   help="force proposal-free generation (the comparison baseline)")
    p.add_argument("--weighting", choices=["prod", "expert_iteration"])

    p = sub.add_parser("evaluate", help="pooled pass rates for a policy checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--testset", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, help="evaluate only the first N theorems")
    p.add_argument("--pool-across-theorems", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("resolve", help="re-resolve a node-record file and flatten")
    p.add_argument("--corpus", required=True)
    p.add_argument("--forest-file", required=True)
    p.add_argument("--out")

    p = sub.add_parser("serve-policy", help="line protocol: prompts in, proofs out")
    p.add_argument("--policy", required=True)
    return parser


def _load_corpus(path) -> Corpus:
    try:
        return load_corpus(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load corpus from {path}: {e}") from e


def _cmd_gen_corpus(args) -> int:
    params = GenParams(
        files=args.files,
        statements_per_file=args.statements_per_file,
        max_depth=args.depth,
        import_density=args.import_density,
        schematic_fraction=args.schematic_fraction,
        auto_budget=args.auto_budget,
    )
    if args.ood:
        params = ood_params(params)
    corpus = generate_synthetic_corpus(args.seed, params)
    save_corpus(
        args.out,
        corpus,
        extra_manifest={
            "seed": args.seed,
            "ood": bool(args.ood),
            "params": dataclasses.asdict(params),
        },
    )
    n = sum(len(tf.blocks) for tf in corpus.files.values())
    print(f"wrote {len(corpus.files)} files ({n} statements) to {args.out}")
    return EXIT_OK


def _cmd_make_dataset(args) -> int:
    corpus = _load_corpus(args.corpus)
    train_files, test_files = split_by_dependency(
        corpus, args.split_fraction, seed=args.seed
    )

    def collect(files, mode):
        out = []
        for name in files:
            for ex in corpus.examples(name, mode):
                if not args.no_autoify:
                    ex = dataclasses.replace(
                        ex,
                        proof=autoify(ex.proof, corpus.simple_names, corpus.auto_budget),
                    )
                out.append(ex)
        return out

    train_all = collect(train_files, args.mode)
    rng = random.Random(args.seed)
    val_count = int(len(train_all) * args.val_fraction)
    val_idx = set(rng.sample(range(len(train_all)), val_count)) if val_count else set()
    train = [ex for i, ex in enumerate(train_all) if i not in val_idx]
    val = [ex for i, ex in enumerate(train_all) if i in val_idx]
    test = [ex for ex in collect(test_files, args.mode) if ex.in_t_tree]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_examples(out / "train.jsonl", train)
    write_examples(out / "val.jsonl", val)
    write_examples(out / "test.jsonl", test)
    manifest = {
        "corpus": str(args.corpus),
        "mode": args.mode,
        "split_fraction": args.split_fraction,
        "val_fraction": args.val_fraction,
        "seed": args.seed,
        "autoify": not args.no_autoify,
        "train_files": train_files,
        "test_files": test_files,
        "counts": {"train": len(train), "val": len(val), "test": len(test)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(
        f"dataset ({args.mode}): train={len(train)} val={len(val)} test={len(test)}"
    )
    return EXIT_OK


def sft_examples_from(dataset) -> list[WeightedExample]:
    """Ground-truth plus augmented examples, all at weight one."""
    out = []
    for ex in dataset:
        prompt = Prompt.make(context_text(ex.context), ex.statement)
        out.append(WeightedExample(prompt, ex.target_text(), 1.0))
        aug = augment_sft(ex)
        if aug is not None:
            out.append(
                WeightedExample(
                    Prompt.make(context_text(aug.context), aug.statement),
                    aug.target_text(),
                    1.0,
                )
            )
    return out


def _cmd_fit_sft(args) -> int:
    try:
        dataset = read_examples(args.dataset)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot read dataset {args.dataset}: {e}") from e
    if args.policy == "count":
        policy = CountPolicy(seed=args.seed, budget=args.budget)
    else:
        policy = RetrievalPolicy(seed=args.seed, budget=args.budget)
    update_policy(policy, sft_examples_from(dataset))
    save_policy(args.out, policy)
    print(f"fitted {args.policy} policy on {len(dataset)} examples -> {args.out}")
    return EXIT_OK


def _cmd_rl_train(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read config {args.config}: {e}") from e
    for key in ("corpus", "dataset", "policy_init"):
        if key not in raw:
            raise DataError(f"config is missing required key {key!r}")
    config = RLConfig.from_dict(raw)
    if args.no_lemma_proposal:
        config.no_lemma_proposal = True
    if args.weighting:
        config.weighting = args.weighting
    corpus = _load_corpus(raw["corpus"])
    try:
        dataset = [ex for ex in read_examples(raw["dataset"]) if ex.in_t_tree]
        policy = load_policy(raw["policy_init"])
    except (OSError, ValueError, KeyError) as e:
        raise DataError(str(e)) from e
    estimator = (
        load_estimator(raw["estimator_init"]) if raw.get("estimator_init") else BetaValue()
    )
    if not dataset:
        raise DataError("dataset has no lemma-tree examples to train on")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({**raw, **config.to_dict()}, indent=2) + "\n"
    )
    policy, estimator, metrics = rl_train(
        policy, estimator, dataset, corpus, config, out_dir=out
    )
    save_policy(out / "policy.json", policy)
    save_estimator(out / "value.json", estimator)
    from . import report

    report.save_training_curves(out / "training_curves.png", metrics)
    last = metrics[-1]
    print(
        f"{config.rounds} rounds done: global_rate={last['global_rate']}"
        f" novel_fraction={last['novel_lemma_fraction']} buffer={last['buffer_size']}"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    corpus = _load_corpus(args.corpus)
    try:
        policy = load_policy(args.policy)
        testset = read_examples(args.testset)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(str(e)) from e
    if args.limit:
        testset = testset[: args.limit]
    if not testset:
        raise DataError("empty test set")
    evals = evaluate_policy(
        policy,
        testset,
        corpus,
        k=args.k,
        depth=args.depth,
        base_seed=args.seed,
        pool_across_theorems=args.pool_across_theorems,
    )
    ks = sorted({1, 2, 4, args.k} | {args.k}) if args.k > 1 else [1]
    ks = [k for k in ks if k <= args.k]
    summary = write_eval_artifacts(
        args.out, evals, ks, corpus, figures=not args.no_figures
    )
    final = summary["pass_at_k"][-1]
    print(f"pass@{final['k']} = {final['pass_rate']} over {len(evals)} theorems")
    return EXIT_OK


def _cmd_resolve(args) -> int:
    corpus = _load_corpus(args.corpus)
    try:
        records = read_records(args.forest_file)
        nodes = [node_from_record(rec) for rec in records]
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"bad forest file {args.forest_file}: {e}") from e
    forest = resolve_global(nodes, corpus.env_for)
    from .prooftree import build_tree, flatten, verify_script
    from .kernel import steps_text

    scripts = []
    for i, ok in enumerate(forest.global_ok):
        if not ok:
            continue
        tree = build_tree(i, forest)
        entries = flatten(tree)
        results = verify_script(entries, corpus.env_for(nodes[i]))
        if not all(r.accepted for r in results):
            print(
                f"internal invariant violation: flattened script {i} rejected",
                file=sys.stderr,
            )
            return EXIT_INTERNAL
        scripts.append(
            {
                "root": i,
                "statement": nodes[i].statement.text(),
                "entries": [
                    {"statement": e.statement.text(), "steps": steps_text(e.steps)}
                    for e in entries
                ],
            }
        )
    resolved = [
        {**rec, "local": bool(loc), "global": bool(glob)}
        for rec, loc, glob in zip(records, forest.local, forest.global_ok)
    ]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "resolved.jsonl", "w", encoding="utf-8") as fh:
            for rec in resolved:
                fh.write(json.dumps(rec) + "\n")
        with open(out / "scripts.jsonl", "w", encoding="utf-8") as fh:
            for s in scripts:
                fh.write(json.dumps(s) + "\n")
    n_global = sum(forest.global_ok)
    print(
        f"{len(nodes)} nodes: {sum(forest.local)} locally correct, "
        f"{n_global} globally correct, {len(scripts)} scripts verified"
    )
    return EXIT_OK


def _cmd_serve_policy(args) -> int:
    try:
        policy = load_policy(args.policy)
    except (OSError, ValueError) as e:
        raise DataError(str(e)) from e
    serve_policy(policy, sys.stdin, sys.stdout)
    return EXIT_OK


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "make-dataset": _cmd_make_dataset,
    "fit-sft": _cmd_fit_sft,
    "rl-train": _cmd_rl_train,
    "evaluate": _cmd_evaluate,
    "resolve": _cmd_resolve,
    "serve-policy": _cmd_serve_policy,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as e:
        print(f"lemmaforge: {e}", file=sys.stderr)
        return EXIT_DATA
    except EvaluationDefect as e:
        print(f"lemmaforge: internal invariant violation: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
