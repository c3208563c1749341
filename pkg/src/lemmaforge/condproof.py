"""Conditional proofs: proof segments interleaved with inline lemma proposals.

Text format::

    <use_invoke> rw h1 at 0 ; <invoke> lemma h1: add(0, x) = x </invoke> refl
    <no_invoke> auto 500

A proof opens with exactly one mode token. Proposals are statements wrapped
in literal ``<invoke>`` / ``</invoke>`` delimiters; a ``<no_invoke>`` proof
must not contain any. Malformed text raises :class:`ProofParseError` with a
character position; callers that score model output catch it and treat the
output as an incorrect proof rather than crashing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .kernel import (
    KernelError,
    ProofStep,
    Statement,
    parse_statement,
    parse_steps,
    steps_text,
)

MODE_USE_INVOKE = "use_invoke"
MODE_NO_INVOKE = "no_invoke"
MODES = (MODE_USE_INVOKE, MODE_NO_INVOKE)

OPEN_TOKEN = "<invoke>"
CLOSE_TOKEN = "</invoke>"


class ProofParseError(ValueError):
    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at {position})")
        self.message = message
        self.position = position


@dataclass(frozen=True, slots=True)
class ConditionalProof:
    """Alternating step segments and proposals; segment i precedes proposal i."""

    segments: tuple[tuple[ProofStep, ...], ...]
    proposals: tuple[Statement, ...]

    def __post_init__(self):
        if len(self.segments) != len(self.proposals) + 1:
            raise ProofParseError(
                f"{len(self.segments)} segments for {len(self.proposals)} proposals"
            )
        names = [p.name for p in self.proposals]
        if len(set(names)) != len(names):
            raise ProofParseError(f"duplicate proposal names in {names}")

    def steps(self) -> tuple[ProofStep, ...]:
        return tuple(s for seg in self.segments for s in seg)


def proposal_free(steps: tuple[ProofStep, ...] = ()) -> ConditionalProof:
    return ConditionalProof((tuple(steps),), ())


def proposed_lemmas(proof: ConditionalProof) -> tuple[Statement, ...]:
    """Proposals in textual order."""
    return proof.proposals


def strip_invokes(proof: ConditionalProof) -> ConditionalProof:
    """Drop all proposals, concatenating the step segments in order.

    Steps citing a removed proposal keep the name; resolving it is the
    caller's concern (augmentation moves proposals into the context,
    flattening proves them earlier).
    """
    return proposal_free(proof.steps())


def proof_body_text(proof: ConditionalProof) -> str:
    """Canonical proof text without the leading mode token."""
    parts = []
    for i, segment in enumerate(proof.segments):
        if segment:
            parts.append(steps_text(segment))
        if i < len(proof.proposals):
            parts.append(f"{OPEN_TOKEN} {proof.proposals[i].text()} {CLOSE_TOKEN}")
    return " ".join(parts)


def serialize(mode: str, proof: ConditionalProof) -> str:
    """Canonical text; ``parse_conditional_proof`` round-trips it exactly."""
    if mode not in MODES:
        raise ProofParseError(f"bad mode token: {mode!r}")
    if mode == MODE_NO_INVOKE and proof.proposals:
        raise ProofParseError("no_invoke proof with proposals")
    body = proof_body_text(proof)
    return f"<{mode}>" + (f" {body}" if body else "")


_MODE_RE = re.compile(r"\s*<(use_invoke|no_invoke)>")


def parse_conditional_proof(text: str) -> tuple[str, ConditionalProof]:
    m = _MODE_RE.match(text)
    if m is None:
        raise ProofParseError("missing mode token", 0)
    mode = m.group(1)
    body = text[m.end() :]
    offset = m.end()
    if _MODE_RE.match(body):
        raise ProofParseError("duplicate mode token", offset)

    segments: list[tuple[ProofStep, ...]] = []
    proposals: list[Statement] = []
    pos = 0
    while True:
        open_at = body.find(OPEN_TOKEN, pos)
        close_at = body.find(CLOSE_TOKEN, pos)
        if close_at != -1 and (open_at == -1 or close_at < open_at):
            raise ProofParseError("unmatched </invoke>", offset + close_at)
        if open_at == -1:
            segments.append(_parse_segment(body[pos:], offset + pos))
            break
        segments.append(_parse_segment(body[pos:open_at], offset + pos))
        stmt_start = open_at + len(OPEN_TOKEN)
        end_at = body.find(CLOSE_TOKEN, stmt_start)
        if end_at == -1:
            raise ProofParseError("unclosed <invoke>", offset + open_at)
        inner = body[stmt_start:end_at]
        nested = inner.find(OPEN_TOKEN)
        if nested != -1:
            raise ProofParseError("nested <invoke>", offset + stmt_start + nested)
        try:
            proposals.append(parse_statement(inner, keywords=("lemma",)))
        except (KernelError, ValueError) as e:
            raise ProofParseError(
                f"bad proposal statement: {e}", offset + stmt_start
            ) from e
        pos = end_at + len(CLOSE_TOKEN)

    if mode == MODE_NO_INVOKE and proposals:
        raise ProofParseError("no_invoke proof proposes lemmas", 0)
    try:
        proof = ConditionalProof(tuple(segments), tuple(proposals))
    except ProofParseError:
        raise
    except ValueError as e:
        raise ProofParseError(str(e), 0) from e
    return mode, proof


def _parse_segment(text: str, offset: int) -> tuple[ProofStep, ...]:
    for m in re.finditer(r"[<>]", text):
        i = m.start()
        # direction arrows are the only legitimate angle characters here
        if text[i : i + 2] == "<-" or (text[i] == ">" and text[i - 1 : i] == "-"):
            continue
        raise ProofParseError("stray delimiter in proof segment", offset + i)
    try:
        return parse_steps(text)
    except KernelError as e:
        raise ProofParseError(f"bad proof step: {e.message}", offset) from e


def try_parse(text: str) -> tuple[Optional[str], Optional[ConditionalProof], Optional[str]]:
    """Parse returning (mode, proof, error message); never raises."""
    try:
        mode, proof = parse_conditional_proof(text)
        return mode, proof, None
    except ProofParseError as e:
        return None, None, str(e)
