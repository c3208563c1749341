import json
import subprocess
import sys
from pathlib import Path

import pytest

from lemmaforge.cli import main


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A tiny end-to-end run shared by the CLI assertions."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    dataset = root / "dataset"
    assert run_cli(
        "gen-corpus", "--seed", "3", "--files", "6", "--statements-per-file", "8",
        "--out", str(corpus),
    ) == 0
    assert run_cli(
        "make-dataset", "--corpus", str(corpus), "--split-fraction", "0.34",
        "--seed", "3", "--out", str(dataset),
    ) == 0
    sft = root / "sft.json"
    assert run_cli(
        "fit-sft", "--dataset", str(dataset / "train.jsonl"), "--policy", "count",
        "--seed", "3", "--out", str(sft),
    ) == 0
    config = root / "rl.json"
    config.write_text(json.dumps({
        "corpus": str(corpus),
        "dataset": str(dataset / "train.jsonl"),
        "policy_init": str(sft),
        "seed": 3,
        "rounds": 2,
        "batch_size": 12,
        "train_depth": 2,
        "checkpoint_every": 2,
    }))
    rl_out = root / "rl"
    assert run_cli("rl-train", "--config", str(config), "--out", str(rl_out)) == 0
    return root, corpus, dataset, sft, rl_out


def test_pipeline_artifacts(pipeline):
    root, corpus, dataset, sft, rl_out = pipeline
    assert (corpus / "manifest.json").exists()
    assert (dataset / "test.jsonl").exists()
    assert (rl_out / "metrics.jsonl").exists()
    assert (rl_out / "timings.jsonl").exists()
    assert (rl_out / "policy.json").exists()
    assert (rl_out / "training_curves.png").exists()
    rounds = list((rl_out / "rounds").glob("round_*.forest.jsonl"))
    assert rounds


def test_evaluate_and_figures(pipeline):
    root, corpus, dataset, sft, rl_out = pipeline
    out = root / "eval"
    assert run_cli(
        "evaluate", "--corpus", str(corpus), "--policy", str(sft),
        "--testset", str(dataset / "test.jsonl"), "--k", "4", "--depth", "2",
        "--seed", "1", "--out", str(out),
    ) == 0
    for name in [
        "results.jsonl", "pass_at_k.tsv", "depth_breakdown.tsv",
        "scripts.jsonl", "forest.jsonl", "pass_at_k.png", "depth_breakdown.png",
    ]:
        assert (out / name).exists(), name
    rows = [json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()]
    assert all(len(r["attempts"]) == 4 for r in rows)
    table = (out / "pass_at_k.tsv").read_text().splitlines()
    rates = [float(line.split("\t")[1]) for line in table[1:]]
    assert rates == sorted(rates)  # pass@k monotone in k


def test_resolve_forest(pipeline):
    root, corpus, dataset, sft, rl_out = pipeline
    forest = next((rl_out / "rounds").glob("round_*.forest.jsonl"))
    out = root / "resolved"
    assert run_cli(
        "resolve", "--corpus", str(corpus), "--forest-file", str(forest),
        "--out", str(out),
    ) == 0
    assert (out / "resolved.jsonl").exists()
    assert (out / "scripts.jsonl").exists()


def test_exit_codes(pipeline, tmp_path):
    root, corpus, dataset, sft, rl_out = pipeline
    # usage error: unknown command / missing required flag
    with pytest.raises(SystemExit) as exc:
        run_cli("no-such-command")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run_cli("gen-corpus")
    assert exc.value.code == 1
    # data errors
    assert run_cli(
        "fit-sft", "--dataset", str(tmp_path / "missing.jsonl"), "--out",
        str(tmp_path / "x.json"),
    ) == 2
    assert run_cli(
        "evaluate", "--corpus", str(tmp_path / "nowhere"), "--policy", str(sft),
        "--testset", str(dataset / "test.jsonl"), "--out", str(tmp_path / "e"),
    ) == 2


def test_serve_policy_subprocess(pipeline):
    root, corpus, dataset, sft, rl_out = pipeline
    test_rows = (dataset / "test.jsonl").read_text().splitlines()
    statement = json.loads(test_rows[0])["statement"]
    request = json.dumps({"context": "", "statement": statement, "seed": 0})
    proc = subprocess.run(
        [sys.executable, "-m", "lemmaforge.cli", "serve-policy", "--policy", str(sft)],
        input=request + "\n",
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    reply = json.loads(proc.stdout.strip().splitlines()[-1])
    assert "text" in reply
