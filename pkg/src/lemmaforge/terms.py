"""First-order terms over a fixed-arity signature: parsing, matching, rewriting.

Variables are single lowercase letters with an optional digit suffix (``x``,
``y2``); every other identifier is a function symbol (``add``, ``S``, ``0``).
Terms are immutable and hash-consed enough (precomputed hash and size) to be
cheap set members during breadth-first rewrite search.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Optional, Union

Path = tuple[int, ...]

_VAR_RE = re.compile(r"[a-z][0-9]*\Z")
_NAME_RE = re.compile(r"[A-Za-z0-9_]+\Z")


class TermError(ValueError):
    """Malformed term text or an invalid term operation."""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.position = position


@lru_cache(maxsize=4096)
def is_variable_name(name: str) -> bool:
    return _VAR_RE.match(name) is not None


@lru_cache(maxsize=4096)
def is_symbol_name(name: str) -> bool:
    return _NAME_RE.match(name) is not None and not is_variable_name(name)


@dataclass(frozen=True, slots=True, eq=False)
class Var:
    name: str
    _hash: int = field(init=False, repr=False)

    def __post_init__(self):
        if not is_variable_name(self.name):
            raise TermError(f"not a variable name: {self.name!r}")
        object.__setattr__(self, "_hash", hash(("v", self.name)))

    size = 1

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return type(other) is Var and other.name == self.name

    def __str__(self) -> str:
        return self.name


_KNOWN_SYMBOLS: set[str] = set()


@dataclass(frozen=True, slots=True, eq=False)
class App:
    symbol: str
    args: tuple["Term", ...] = ()
    _hash: int = field(init=False, repr=False)
    size: int = field(init=False, repr=False)

    def __post_init__(self):
        if self.symbol not in _KNOWN_SYMBOLS:
            if not is_symbol_name(self.symbol):
                raise TermError(f"not a symbol name: {self.symbol!r}")
            _KNOWN_SYMBOLS.add(self.symbol)
        size = 1
        for a in self.args:
            size += a.size
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "_hash", hash((self.symbol, self.args)))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (
            type(other) is App
            and other._hash == self._hash
            and other.symbol == self.symbol
            and other.args == self.args
        )

    def __str__(self) -> str:
        return term_text(self)


Term = Union[Var, App]


def term_text(term: Term) -> str:
    """Canonical text: ``add(S(0), x)``."""
    if isinstance(term, Var):
        return term.name
    if not term.args:
        return term.symbol
    return f"{term.symbol}({', '.join(term_text(a) for a in term.args)})"


def variables(term: Term) -> set[str]:
    out: set[str] = set()
    stack = [term]
    while stack:
        t = stack.pop()
        if isinstance(t, Var):
            out.add(t.name)
        else:
            stack.extend(t.args)
    return out


def positions(term: Term) -> Iterator[tuple[Path, Term]]:
    """All (path, subterm) pairs in preorder, which is path-lexicographic."""
    stack: list[tuple[Path, Term]] = [((), term)]
    while stack:
        path, t = stack.pop()
        yield path, t
        if isinstance(t, App):
            for i in range(len(t.args) - 1, -1, -1):
                stack.append((path + (i,), t.args[i]))


def subterm_at(term: Term, path: Path) -> Term:
    t = term
    for i in path:
        if isinstance(t, Var) or i >= len(t.args):
            raise TermError(f"invalid path {list(path)} in {term_text(term)}")
        t = t.args[i]
    return t


def replace_at(term: Term, path: Path, replacement: Term) -> Term:
    if not path:
        return replacement
    spine = []
    t = term
    for i in path:
        if isinstance(t, Var) or i >= len(t.args):
            raise TermError(f"invalid path {list(path)} in {term_text(term)}")
        spine.append((t, i))
        t = t.args[i]
    result = replacement
    for parent, i in reversed(spine):
        args = parent.args[:i] + (result,) + parent.args[i + 1 :]
        result = App(parent.symbol, args)
    return result


def substitute(term: Term, binding: dict[str, Term]) -> Term:
    if type(term) is Var:
        return binding.get(term.name, term)
    if not term.args:
        return term
    return App(term.symbol, tuple(substitute(a, binding) for a in term.args))


def match(pattern: Term, subject: Term) -> Optional[dict[str, Term]]:
    """One-way matching: the unique binding b with b(pattern) == subject.

    The subject is treated as ground relative to the pattern; its variables
    only ever match themselves through a pattern variable.
    """
    binding: dict[str, Term] = {}
    stack = [(pattern, subject)]
    pop = stack.pop
    push = stack.extend
    while stack:
        p, s = pop()
        if type(p) is Var:
            seen = binding.get(p.name)
            if seen is None:
                binding[p.name] = s
            elif seen != s:
                return None
        elif type(s) is App and s.symbol == p.symbol and len(p.args) == len(s.args):
            push(zip(p.args, s.args))
        else:
            return None
    return binding


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*([A-Za-z0-9_]+|[(),])")


def _tokenize(text: str, start: int = 0) -> list[tuple[str, int]]:
    tokens = []
    pos = start
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            rest = text[pos:].strip()
            if not rest:
                break
            raise TermError(f"unexpected character {rest[0]!r}", pos)
        tokens.append((m.group(1), m.start(1)))
        pos = m.end()
    return tokens


class _TermParser:
    def __init__(self, tokens: list[tuple[str, int]], text_len: int):
        self.tokens = tokens
        self.i = 0
        self.text_len = text_len

    def peek(self) -> Optional[str]:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else self.text_len

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise TermError("unexpected end of term", self.pos())
        self.i += 1
        return tok

    def expect(self, tok: str):
        got = self.take()
        if got != tok:
            raise TermError(f"expected {tok!r}, got {got!r}", self.tokens[self.i - 1][1])

    def term(self) -> Term:
        head = self.take()
        if head in "(),":
            raise TermError(f"expected a term, got {head!r}", self.tokens[self.i - 1][1])
        if is_variable_name(head):
            return Var(head)
        if self.peek() != "(":
            return App(head)
        self.expect("(")
        args = [self.term()]
        while self.peek() == ",":
            self.take()
            args.append(self.term())
        self.expect(")")
        return App(head, tuple(args))


def parse_term(text: str) -> Term:
    tokens = _tokenize(text)
    parser = _TermParser(tokens, len(text))
    term = parser.term()
    if parser.peek() is not None:
        raise TermError(f"trailing input after term: {parser.peek()!r}", parser.pos())
    return term
