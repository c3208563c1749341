"""Prover policies and value estimators.

A policy maps a prompt (context text plus a theorem statement, with an
optional forced mode token) to conditional-proof text. Reference
implementations:

* ``ReplayPolicy``    returns the ground-truth proof for known statements,
  with seeded corruption modelling an imperfect fine-tuned model;
* ``RetrievalPolicy`` returns the nearest stored proof by statement-feature
  overlap, adapted by pattern-match substitution;
* ``CountPolicy``     a trainable per-signature weighted multinomial over
  stored targets (the policy used for training-loop experiments), also with
  substitution adaptation.

All sampling is deterministic given (policy state, prompt, noise seed).
Mode forcing is absolute. Malformed output never raises here: samples carry
their raw text and a parse error value when the text is not a proof.

The estimator keeps per-signature success/failure counts with a symmetric
prior, predicting the posterior-mean reward in [0, 1].
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .arith import BASE_AXIOMS
from .condproof import (
    MODE_NO_INVOKE,
    MODE_USE_INVOKE,
    MODES,
    ConditionalProof,
    parse_conditional_proof,
    serialize,
    try_parse,
)
from .kernel import (
    Rewrite,
    RewriteError,
    Statement,
    match,
    parse_statement,
    rewrite_at,
)
from .prooftree import parse_context, CtxAxiom
from .terms import App, Term, Var, positions, substitute, term_text
from .util import stable_seed

DEFAULT_CONTEXT_LIMIT = 1024
DEFAULT_POLICY_BUDGET = 100


@dataclass(frozen=True, slots=True)
class Prompt:
    """Model input: truncated context text plus the goal statement."""

    context: str
    statement: Statement
    forced_mode: Optional[str] = None

    @staticmethod
    def make(
        context_text: str,
        statement: Statement,
        forced_mode: Optional[str] = None,
        limit: int = DEFAULT_CONTEXT_LIMIT,
    ) -> "Prompt":
        return Prompt(context_text[-limit:], statement, forced_mode)


@dataclass(frozen=True, slots=True)
class WeightedExample:
    prompt: Prompt
    target: str
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"weight {self.weight} outside [0, 1]")
        mode, proof, err = try_parse(self.target)
        if err is not None:
            raise ValueError(f"target does not parse: {err}")


@dataclass(frozen=True, slots=True)
class ValueLabel:
    context: str
    statement: Statement
    reward: int

    def __post_init__(self):
        if self.reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {self.reward}")


@dataclass(frozen=True, slots=True)
class ProofSample:
    """Policy output: raw text plus its parse (or a parse-error value)."""

    text: str
    mode: Optional[str]
    proof: Optional[ConditionalProof]
    error: Optional[str]

    @property
    def ok(self) -> bool:
        return self.error is None


def _sample_from_text(text: str) -> ProofSample:
    mode, proof, err = try_parse(text)
    return ProofSample(text, mode, proof, err)


# --- statement features --------------------------------------------------------


def _skeleton_depth(t: Term) -> int:
    """Term depth with numeral chains collapsed, so instances of one schema
    land in the same bucket regardless of the numerals plugged in."""
    if isinstance(t, Var):
        return 1
    if t.symbol == "0":
        return 1
    if t.symbol == "S":
        return _skeleton_depth(t.args[0])
    return 1 + max((_skeleton_depth(a) for a in t.args), default=0)


def _symbols(t: Term, out: set[str]):
    if isinstance(t, App):
        if t.symbol not in ("S", "0"):
            out.add(t.symbol)
        for a in t.args:
            _symbols(a, out)


def statement_signature(stmt: Statement) -> tuple:
    """(lhs root, lhs skeleton depth, non-numeral symbols of both sides)."""
    root = stmt.lhs.symbol if isinstance(stmt.lhs, App) else "var"
    syms: set[str] = set()
    _symbols(stmt.lhs, syms)
    _symbols(stmt.rhs, syms)
    return (root, _skeleton_depth(stmt.lhs), tuple(sorted(syms)))


def _signature_key(stmt: Statement) -> str:
    root, depth, syms = statement_signature(stmt)
    return f"{root}|{depth}|{','.join(syms)}"


# --- target adaptation ----------------------------------------------------------


def _match_statement(pattern: Statement, goal: Statement) -> Optional[dict[str, Term]]:
    binding = match(pattern.lhs, goal.lhs)
    if binding is None:
        return None
    rhs_binding = match(pattern.rhs, goal.rhs)
    if rhs_binding is None:
        return None
    for k, v in rhs_binding.items():
        if k in binding and binding[k] != v:
            return None
        binding[k] = v
    return binding


def adapt_target(stored: Statement, target_text: str, goal: Statement) -> str:
    """Substitute a stored proof onto a goal the stored statement generalizes.

    Rewrite proofs are stable under instantiating the subject's variables, so
    applying the binding to every proposal keeps the proof locally correct
    whenever the original was. Without a match the text is returned as is
    (it will simply score as incorrect if it does not transfer).
    """
    binding = _match_statement(stored, goal)
    if binding is None or not binding:
        return target_text
    mode, proof, err = try_parse(target_text)
    if err is not None:
        return target_text
    proposals = tuple(
        Statement(p.name, substitute(p.lhs, binding), substitute(p.rhs, binding))
        for p in proof.proposals
    )
    try:
        adapted = ConditionalProof(proof.segments, proposals)
    except ValueError:
        return target_text
    return serialize(mode, adapted)


# --- context conditioning ---------------------------------------------------------

_BASE_RULES = {s.name: s for s in BASE_AXIOMS}
_BASE_NAMES = frozenset(_BASE_RULES)

_DECL_RE = re.compile(r"(?:axiom|lemma|theorem)\s+([A-Za-z0-9_]+)\s*:")


def cited_fact_names(target_text: str) -> Optional[tuple[str, ...]]:
    """Non-proposal, non-arithmetic fact names a target's rewrites cite.

    None when the target does not parse.
    """
    mode, proof, err = try_parse(target_text)
    if err is not None:
        return None
    own = {p.name for p in proof.proposals}
    cited = {
        s.fact
        for s in proof.steps()
        if isinstance(s, Rewrite) and s.fact not in own and s.fact not in _BASE_NAMES
    }
    return tuple(sorted(cited))


def _context_names(context_text: str) -> frozenset[str]:
    return frozenset(_DECL_RE.findall(context_text))


def _auto_template(budget: int) -> str:
    return f"<{MODE_NO_INVOKE}> auto {budget}"


def _context_axioms(context_text: str) -> list[Statement]:
    items = parse_context(context_text, skip_bad=True)
    return [it.statement for it in items if isinstance(it, CtxAxiom)]


def _is_numeral(t: Term) -> bool:
    while isinstance(t, App) and t.symbol == "S":
        t = t.args[0]
    return isinstance(t, App) and t.symbol == "0"


def _norm(term: Term, rules: dict[str, Statement], max_steps: int = 24) -> Term:
    """Greedy evaluation toward the corpus's preferred forms.

    Leftmost-outermost rewriting with the known rules, except that the
    addition axioms only fire when the redex's first argument is a pure
    numeral: sums of two open computations are kept as they are, mirroring
    how proved statements in this domain are normally phrased.
    """
    names = sorted(rules)
    for _ in range(max_steps):
        applied = None
        for path, sub in positions(term):
            if not isinstance(sub, App):
                continue
            for rname in names:
                rule = rules[rname]
                if isinstance(rule.lhs, App) and rule.lhs.symbol != sub.symbol:
                    continue
                if rname in ("add_S", "add_Z") and not _is_numeral(sub.args[0]):
                    continue
                binding = match(rule.lhs, sub)
                if binding is None:
                    continue
                applied = (path, substitute(rule.rhs, binding))
                break
            if applied:
                break
        if not applied:
            break
        path, new_sub = applied
        from .terms import replace_at

        term = replace_at(term, path, new_sub)
    return term


def _fresh_names(prompt: Prompt, rules: dict[str, Statement], count: int) -> list[str]:
    taken = {prompt.statement.name} | set(rules)
    out = []
    n = 0
    while len(out) < count:
        n += 1
        name = f"hyp{n}"
        if name not in taken:
            out.append(name)
    return out


def _decompose_template(prompt: Prompt, budget: int, rng: random.Random) -> str:
    """Propose normalized forms of an inner sum's arguments, then search.

    The rewrite rules are the built-in arithmetic plus definitional axioms
    read from the prompt context. The normalization depth per argument is
    drawn at random (full or a single step), so the template only sometimes
    reconstructs a decomposition that closes the goal; its hits are what the
    training loop can verify, reward, and amplify. Without a usable sum the
    largest reducible proper subterm is proposed instead, and with nothing
    to propose the output is a bare search (a legal invoke-mode proof).
    """
    lhs = prompt.statement.lhs
    rules = dict(_BASE_RULES)
    for ax in _context_axioms(prompt.context):
        rules.setdefault(ax.name, ax)

    pair = None
    for path, sub in positions(lhs):
        if (
            isinstance(sub, App)
            and sub.symbol == "add"
            and not _is_numeral(sub.args[0])
        ):
            pair = (path, sub)
            break
    proposals: list[tuple[Statement, tuple[int, ...]]] = []
    if pair is not None:
        path, sub = pair
        names = _fresh_names(prompt, rules, len(sub.args))
        for i, arg in enumerate(sub.args):
            depth = None if rng.random() < 0.5 else 1
            reduced = _norm(arg, rules) if depth is None else _norm(arg, rules, 1)
            if reduced == arg:
                continue
            proposals.append((Statement(names[i], arg, reduced), path + (i,)))
    else:
        best = None
        for path, sub in positions(lhs):
            if not path or not isinstance(sub, App) or sub.symbol in ("S", "0"):
                continue
            if best is not None and sub.size <= best[1].size:
                continue
            reduced = _norm(sub, rules)
            if reduced != sub:
                best = (path, sub, reduced)
        if best is not None:
            path, sub, reduced = best
            name = _fresh_names(prompt, rules, 1)[0]
            proposals.append((Statement(name, sub, reduced), path))

    if not proposals:
        return f"<{MODE_USE_INVOKE}> auto {budget}"
    parts = []
    for stmt, path in proposals:
        at = ".".join(str(i) for i in path)
        parts.append(f"<invoke> {stmt.text()} </invoke> rw {stmt.name} at {at}")
    return f"<{MODE_USE_INVOKE}> " + " ".join(parts) + f" ; auto {budget}"


# --- policies -------------------------------------------------------------------


class CountPolicy:
    """Per-signature weighted multinomial over stored (statement, target) pairs.

    Sampling is context-conditioned: a stored target is only emittable for a
    prompt whose context declares every non-proposal fact it cites (built-in
    arithmetic excepted), and the invoke-mode probability is the weight ratio
    over emittable targets. Each signature bucket also carries one unit of
    prior mass that emits a built-in template (a bare bounded search, or a
    subterm-decomposition proposal when the mode calls for lemmas), so
    reproduction probabilities strictly increase with stored weight and
    unseen goals still get a sensible default. Stored statements that
    pattern-match the goal are adapted by substitution before emission.
    """

    kind = "count"

    def __init__(self, seed: int = 0, budget: int = DEFAULT_POLICY_BUDGET):
        self.seed = seed
        self.budget = budget
        # signature -> list of [statement text, target text, weight, cited names]
        self.store: dict[str, list[list]] = {}
        self._ctx_cache: dict[str, frozenset[str]] = {}

    # -- sampling --

    def _emittable(self, prompt: Prompt) -> list[list]:
        bucket = self.store.get(_signature_key(prompt.statement), [])
        if not bucket:
            return []
        names = self._ctx_cache.get(prompt.context)
        if names is None:
            names = _context_names(prompt.context)
            self._ctx_cache[prompt.context] = names
        return [e for e in bucket if all(n in names for n in e[3])]

    def invoke_prob(self, prompt: Prompt) -> float:
        use = no = 0.0
        for _, target, weight, _cites in self._emittable(prompt):
            if target.startswith(f"<{MODE_USE_INVOKE}>"):
                use += weight
            else:
                no += weight
        if use + no == 0:
            return 0.5
        return use / (use + no)

    def _default(self, prompt: Prompt, mode: str, rng: random.Random) -> str:
        if mode == MODE_USE_INVOKE:
            return _decompose_template(prompt, self.budget, rng)
        return _auto_template(self.budget)

    def sample(self, prompt: Prompt, noise_seed: int) -> ProofSample:
        rng = random.Random(
            stable_seed(self.seed, noise_seed, prompt.statement.text(), prompt.forced_mode)
        )
        mode = prompt.forced_mode
        if mode is None:
            mode = (
                MODE_USE_INVOKE
                if rng.random() < self.invoke_prob(prompt)
                else MODE_NO_INVOKE
            )
        prefix = f"<{mode}>"
        entries = [e for e in self._emittable(prompt) if e[1].startswith(prefix)]
        total = sum(e[2] for e in entries) + 1.0  # one unit of prior mass
        pick = rng.random() * total
        acc = 0.0
        for stmt_text, target, weight, _cites in entries:
            acc += weight
            if pick < acc:
                stored = parse_statement(stmt_text)
                return _sample_from_text(
                    adapt_target(stored, target, prompt.statement)
                )
        return _sample_from_text(self._default(prompt, mode, rng))

    # -- training --

    def update(self, examples: Sequence[WeightedExample]):
        for ex in examples:
            if ex.weight <= 0.0:
                continue
            key = _signature_key(ex.prompt.statement)
            bucket = self.store.setdefault(key, [])
            stmt_text = ex.prompt.statement.text()
            for entry in bucket:
                if entry[0] == stmt_text and entry[1] == ex.target:
                    entry[2] += ex.weight
                    break
            else:
                cites = cited_fact_names(ex.target) or ()
                bucket.append([stmt_text, ex.target, ex.weight, list(cites)])

    def reproduction_prob(self, prompt: Prompt, target: str) -> float:
        prefix = target.split(">", 1)[0] + ">"
        entries = [e for e in self._emittable(prompt) if e[1].startswith(prefix)]
        total = sum(e[2] for e in entries) + 1.0
        stmt_text = prompt.statement.text()
        hit = sum(e[2] for e in entries if e[0] == stmt_text and e[1] == target)
        return hit / total

    # -- state --

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": 1,
            "seed": self.seed,
            "budget": self.budget,
            "store": self.store,
        }

    @classmethod
    def from_state(cls, state: dict) -> "CountPolicy":
        policy = cls(seed=state["seed"], budget=state["budget"])
        for key, bucket in state["store"].items():
            rebuilt = []
            for entry in bucket:
                if len(entry) == 3:  # older checkpoint: recompute citations
                    cites = cited_fact_names(entry[1]) or ()
                    rebuilt.append([entry[0], entry[1], entry[2], list(cites)])
                else:
                    rebuilt.append([entry[0], entry[1], entry[2], list(entry[3])])
            policy.store[key] = rebuilt
        return policy


class RetrievalPolicy:
    """Nearest stored example by statement-feature overlap, with adaptation."""

    kind = "retrieval"

    def __init__(self, seed: int = 0, budget: int = DEFAULT_POLICY_BUDGET):
        self.seed = seed
        self.budget = budget
        self.entries: list[list] = []  # [statement text, target text, weight]

    def _score(self, stored: Statement, goal: Statement) -> float:
        s_root, s_depth, s_syms = statement_signature(stored)
        g_root, g_depth, g_syms = statement_signature(goal)
        score = 0.0
        if s_root == g_root:
            score += 4.0
        score -= abs(s_depth - g_depth)
        inter = len(set(s_syms) & set(g_syms))
        union = len(set(s_syms) | set(g_syms)) or 1
        score += 3.0 * inter / union
        if _match_statement(stored, goal) is not None:
            score += 10.0
        return score

    def invoke_prob(self, prompt: Prompt) -> float:
        best = self._nearest(prompt.statement)
        if best is None:
            return 0.5
        return 1.0 if best[1].startswith(f"<{MODE_USE_INVOKE}>") else 0.0

    def _nearest(self, goal: Statement, mode: Optional[str] = None):
        best = None
        best_score = None
        for entry in self.entries:
            if mode is not None and not entry[1].startswith(f"<{mode}>"):
                continue
            stored = parse_statement(entry[0])
            score = self._score(stored, goal)
            if best_score is None or score > best_score:
                best, best_score = entry, score
        return best

    def sample(self, prompt: Prompt, noise_seed: int) -> ProofSample:
        mode = prompt.forced_mode
        if mode is None:
            rng = random.Random(
                stable_seed(self.seed, noise_seed, prompt.statement.text(), None)
            )
            mode = (
                MODE_USE_INVOKE
                if rng.random() < self.invoke_prob(prompt)
                else MODE_NO_INVOKE
            )
        best = self._nearest(prompt.statement, mode)
        if best is None:
            rng = random.Random(
                stable_seed(self.seed, noise_seed, prompt.statement.text(), mode)
            )
            if mode == MODE_USE_INVOKE:
                return _sample_from_text(_decompose_template(prompt, self.budget, rng))
            return _sample_from_text(_auto_template(self.budget))
        stored = parse_statement(best[0])
        return _sample_from_text(adapt_target(stored, best[1], prompt.statement))

    def update(self, examples: Sequence[WeightedExample]):
        for ex in examples:
            if ex.weight <= 0.0:
                continue
            self.entries.append(
                [ex.prompt.statement.text(), ex.target, ex.weight]
            )

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": 1,
            "seed": self.seed,
            "budget": self.budget,
            "entries": self.entries,
        }

    @classmethod
    def from_state(cls, state: dict) -> "RetrievalPolicy":
        policy = cls(seed=state["seed"], budget=state["budget"])
        policy.entries = [list(e) for e in state["entries"]]
        return policy


class ReplayPolicy:
    """Ground-truth replay with seeded corruption (an imperfect SFT stand-in).

    Corruption either drops one proof step or instantiates one proposal's
    variable, at the configured rate. Unknown statements fall back to a
    bare bounded search.
    """

    kind = "replay"

    def __init__(
        self,
        targets: Optional[dict[str, str]] = None,
        corruption: float = 0.0,
        seed: int = 0,
        budget: int = DEFAULT_POLICY_BUDGET,
    ):
        self.targets = targets or {}
        self.corruption = corruption
        self.seed = seed
        self.budget = budget

    @staticmethod
    def from_examples(examples, corruption: float = 0.0, seed: int = 0) -> "ReplayPolicy":
        targets = {}
        for ex in examples:
            targets[ex.statement.canonical_key()] = ex.target_text()
        return ReplayPolicy(targets, corruption, seed)

    def invoke_prob(self, prompt: Prompt) -> float:
        target = self.targets.get(prompt.statement.canonical_key())
        if target is None:
            return 0.5
        return 1.0 if target.startswith(f"<{MODE_USE_INVOKE}>") else 0.0

    def _corrupt(self, rng: random.Random, mode: str, proof: ConditionalProof) -> str:
        steps = proof.steps()
        if proof.proposals and rng.random() < 0.5:
            idx = rng.randrange(len(proof.proposals))
            prop = proof.proposals[idx]
            free = sorted({v for v in _statement_vars(prop)})
            if free:
                v = rng.choice(free)
                sub = {v: App("S", (Var(v),)) if rng.random() < 0.5 else App("0")}
                new_prop = Statement(
                    prop.name, substitute(prop.lhs, sub), substitute(prop.rhs, sub)
                )
                proposals = list(proof.proposals)
                proposals[idx] = new_prop
                return serialize(mode, ConditionalProof(proof.segments, tuple(proposals)))
        if steps:
            drop = rng.randrange(len(steps))
            segments = []
            seen = 0
            for seg in proof.segments:
                out = []
                for s in seg:
                    if seen != drop:
                        out.append(s)
                    seen += 1
                segments.append(tuple(out))
            return serialize(mode, ConditionalProof(tuple(segments), proof.proposals))
        return serialize(mode, proof)

    def sample(self, prompt: Prompt, noise_seed: int) -> ProofSample:
        target = self.targets.get(prompt.statement.canonical_key())
        forced = prompt.forced_mode
        if target is None:
            if forced == MODE_USE_INVOKE:
                return _sample_from_text(f"<{MODE_USE_INVOKE}> auto {self.budget}")
            return _sample_from_text(_auto_template(self.budget))
        mode, proof, err = try_parse(target)
        if err is not None:
            return _sample_from_text(target)
        if forced == MODE_NO_INVOKE and mode == MODE_USE_INVOKE:
            from .condproof import strip_invokes

            proof = strip_invokes(proof)
            mode = MODE_NO_INVOKE
        elif forced == MODE_USE_INVOKE and mode == MODE_NO_INVOKE:
            mode = MODE_USE_INVOKE
        rng = random.Random(
            stable_seed(self.seed, noise_seed, prompt.statement.text(), forced)
        )
        if self.corruption > 0 and rng.random() < self.corruption:
            return _sample_from_text(self._corrupt(rng, mode, proof))
        return _sample_from_text(serialize(mode, proof))

    def update(self, examples: Sequence[WeightedExample]):
        pass  # replay is frozen; it models the pre-trained snapshot

    def state_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": 1,
            "seed": self.seed,
            "budget": self.budget,
            "corruption": self.corruption,
            "targets": self.targets,
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReplayPolicy":
        return cls(
            targets=dict(state["targets"]),
            corruption=state["corruption"],
            seed=state["seed"],
            budget=state["budget"],
        )


def _statement_vars(stmt: Statement) -> set[str]:
    from .terms import variables

    return variables(stmt.lhs) | variables(stmt.rhs)


POLICY_KINDS = {
    "count": CountPolicy,
    "retrieval": RetrievalPolicy,
    "replay": ReplayPolicy,
}


# --- operation wrappers -----------------------------------------------------------


def sample_proof(policy, prompt: Prompt, noise_seed: int) -> ProofSample:
    sample = policy.sample(prompt, noise_seed)
    if prompt.forced_mode is not None and sample.ok and sample.mode != prompt.forced_mode:
        raise AssertionError(
            f"{type(policy).__name__} violated forced mode {prompt.forced_mode}"
        )
    return sample


def estimate_invoke_prob(policy, prompt: Prompt) -> float:
    p = policy.invoke_prob(prompt)
    if not 0.0 <= p <= 1.0:
        raise AssertionError(f"invoke probability {p} outside [0, 1]")
    return p


def update_policy(policy, examples: Sequence[WeightedExample]):
    policy.update(examples)
    return policy


# --- value estimation ---------------------------------------------------------------


class BetaValue:
    """Per-signature success/failure counts; prediction is the posterior mean
    (successes + 1) / (n + 2), so the untrained prior is one half."""

    kind = "beta-value"

    def __init__(self):
        self.counts: dict[str, list[int]] = {}

    def predict(self, context: str, statement: Statement) -> float:
        s, f = self.counts.get(_signature_key(statement), (0, 0))
        return (s + 1) / (s + f + 2)

    def fit(self, labels: Sequence[ValueLabel]):
        for label in labels:
            key = _signature_key(label.statement)
            entry = self.counts.setdefault(key, [0, 0])
            if label.reward == 1:
                entry[0] += 1
            else:
                entry[1] += 1

    def state_dict(self) -> dict:
        return {"kind": self.kind, "version": 1, "counts": self.counts}

    @classmethod
    def from_state(cls, state: dict) -> "BetaValue":
        est = cls()
        est.counts = {k: list(v) for k, v in state["counts"].items()}
        return est


def predict_value(estimator, context: str, statement: Statement) -> float:
    v = estimator.predict(context, statement)
    return min(1.0, max(0.0, v))


def fit_value(estimator, labels: Sequence[ValueLabel]):
    estimator.fit(labels)
    return estimator


# --- checkpoints and the line protocol -----------------------------------------------


def save_policy(path, policy):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy.state_dict(), fh)
        fh.write("\n")


def load_policy(path):
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    kind = state.get("kind")
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    return POLICY_KINDS[kind].from_state(state)


def save_estimator(path, estimator):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(estimator.state_dict(), fh)
        fh.write("\n")


def load_estimator(path) -> BetaValue:
    with open(path, encoding="utf-8") as fh:
        state = json.load(fh)
    if state.get("kind") != BetaValue.kind:
        raise ValueError(f"unknown estimator kind {state.get('kind')!r}")
    return BetaValue.from_state(state)


def serve_policy(policy, lines_in: Iterable[str], out):
    """Line-delimited request/response loop.

    Each request line is a JSON object with ``context``, ``statement``,
    optional ``forced_mode`` and ``seed``; each response line carries the
    sampled proof text. Lets an external generator stand in for a policy
    (and this loop expose a reference policy to one).
    """
    for line in lines_in:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        prompt = Prompt.make(
            req.get("context", ""),
            parse_statement(req["statement"]),
            req.get("forced_mode"),
        )
        sample = sample_proof(policy, prompt, int(req.get("seed", 0)))
        out.write(json.dumps({"text": sample.text}) + "\n")


class StreamPolicy:
    """Adapter speaking the line protocol to an external generator."""

    kind = "stream"

    def __init__(self, send, receive):
        self._send = send
        self._receive = receive

    def sample(self, prompt: Prompt, noise_seed: int) -> ProofSample:
        self._send(
            json.dumps(
                {
                    "context": prompt.context,
                    "statement": prompt.statement.text(),
                    "forced_mode": prompt.forced_mode,
                    "seed": noise_seed,
                }
            )
            + "\n"
        )
        reply = json.loads(self._receive())
        return _sample_from_text(reply["text"])

    def invoke_prob(self, prompt: Prompt) -> float:
        return 0.5

    def update(self, examples):
        pass
