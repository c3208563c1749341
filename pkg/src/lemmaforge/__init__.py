"""Lemma-proposing proof decomposition with hindsight-rewarded training.

A small equational-logic verifier, a conditional-proof language whose proofs
may propose lemmas inline, a proof-tree correctness calculus, a theory-file
corpus pipeline, pluggable prover policies, and the full generate/verify/
reward/update training loop, plus evaluation tooling and a CLI.
"""

__version__ = "0.1.0"
