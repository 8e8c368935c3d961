"""A co-safe LTL fragment and its deterministic finite automata.

Grammar (lowest precedence first; ``U`` is right associative and ``F``
extends as far right as possible)::

    phi   := or ("U" phi)?
    or    := and ("|" and)*
    and   := unary ("&" unary)*
    unary := "!" unary | "F" phi | "(" phi ")" | atom | "true" | "false"

Negation is accepted only over propositional subformulas. Acceptance is
good-prefix: a finite word is accepted once the formula is already
guaranteed by it, whatever follows.
"""

from __future__ import annotations

import itertools
import re
from collections import deque
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence, Union


class ScltlSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, expected: str = ""):
        self.offset = offset
        self.expected = expected
        hint = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at offset {offset}{hint}")


class CoSafetyError(ValueError):
    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"negation of a temporal subformula at offset {offset} is not co-safe")


class UnknownAtomError(ValueError):
    pass


class DfaFormatError(ValueError):
    pass


# -- AST -----------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: bool

    def __str__(self) -> str:
        return "true" if self.value else "false"


@dataclass(frozen=True)
class Lit:
    name: str
    positive: bool = True

    def __str__(self) -> str:
        return self.name if self.positive else f"!{self.name}"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        return f"({self.left} | {self.right})"


@dataclass(frozen=True)
class Eventually:
    arg: "Formula"

    def __str__(self) -> str:
        return f"F {self.arg}"


@dataclass(frozen=True)
class Until:
    left: "Formula"
    right: "Formula"

    def __str__(self) -> str:
        return f"({self.left} U {self.right})"


Formula = Union[Const, Lit, And, Or, Eventually, Until]


def is_temporal(f: Formula) -> bool:
    if isinstance(f, (Eventually, Until)):
        return True
    if isinstance(f, (And, Or)):
        return is_temporal(f.left) or is_temporal(f.right)
    return False


def atoms(f: Formula) -> frozenset[str]:
    if isinstance(f, Lit):
        return frozenset([f.name])
    if isinstance(f, Const):
        return frozenset()
    if isinstance(f, Eventually):
        return atoms(f.arg)
    return atoms(f.left) | atoms(f.right)


def _negate(f: Formula) -> Formula:
    if isinstance(f, Const):
        return Const(not f.value)
    if isinstance(f, Lit):
        return Lit(f.name, not f.positive)
    if isinstance(f, And):
        return Or(_negate(f.left), _negate(f.right))
    if isinstance(f, Or):
        return And(_negate(f.left), _negate(f.right))
    raise TypeError(f"cannot negate {f}")


# -- parsing -------------------------------------------------------------------

_TOKEN = re.compile(r"(?P<op>[()!&|])|(?P<word>[A-Za-z_][A-Za-z0-9_]*)")
_KEYWORDS = {"F", "U", "true", "false"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Tokens as ``(kind, text, byte offset)``, terminated by an ``eof`` token."""
    out = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        offset = len(text[:pos].encode())
        if pos >= len(text):
            out.append(("eof", "", offset))
            return out
        m = _TOKEN.match(text, pos)
        if not m:
            raise ScltlSyntaxError(f"unexpected character {text[pos]!r}", offset)
        value = m.group()
        kind = value if (m.lastgroup == "op" or value in _KEYWORDS) else "atom"
        out.append((kind, value, offset))
        pos = m.end()


class _Parser:
    def __init__(self, text: str, temporal: bool = True):
        self.tokens = _tokenize(text)
        self.i = 0
        self.temporal = temporal

    @property
    def tok(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self, kind: str, expected: str) -> tuple[str, str, int]:
        tok = self.tok
        if tok[0] != kind:
            raise ScltlSyntaxError(f"unexpected {tok[1] or 'end of input'!r}", tok[2], expected)
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.until()
        self.take("eof", "end of input" + (", '&', '|' or 'U'" if self.temporal else ", '&' or '|'"))
        return f

    def until(self) -> Formula:
        left = self.disj()
        if self.temporal and self.tok[0] == "U":
            self.i += 1
            return Until(left, self.until())
        return left

    def disj(self) -> Formula:
        f = self.conj()
        while self.tok[0] == "|":
            self.i += 1
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.unary()
        while self.tok[0] == "&":
            self.i += 1
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        kind, value, offset = self.tok
        if kind == "!":
            self.i += 1
            arg = self.unary()
            if is_temporal(arg):
                raise CoSafetyError(offset)
            return _negate(arg)
        if kind == "F" and self.temporal:
            self.i += 1
            return Eventually(self.until())
        if kind == "(":
            self.i += 1
            f = self.until()
            self.take(")", "')'")
            return f
        if kind == "atom":
            self.i += 1
            return Lit(value)
        if kind in ("true", "false"):
            self.i += 1
            return Const(kind == "true")
        expected = "atom, 'true', 'false', '(' or '!'" + (" or 'F'" if self.temporal else "")
        raise ScltlSyntaxError(f"unexpected {value or 'end of input'!r}", offset, expected)


def parse_scltl(text: str) -> Formula:
    """Parse a formula of the fragment; raises ``ScltlSyntaxError`` or ``CoSafetyError``."""
    return _Parser(text).parse()


def parse_guard(text: str) -> Formula:
    """Parse a propositional guard (``&``, ``|``, ``!``, ``true``, ``false``)."""
    return _Parser(text, temporal=False).parse()


# -- semantics -----------------------------------------------------------------


def holds(f: Formula, word: Sequence[frozenset[str]], i: int = 0) -> bool:
    """Finite-word semantics: propositions beyond the end of the word are false.

    Decides whether ``word[i:]`` already guarantees ``f``. Kept deliberately
    naive; it is the reference the automaton construction is tested against.
    """
    n = len(word)
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Lit):
        return i < n and ((f.name in word[i]) == f.positive)
    if isinstance(f, And):
        return holds(f.left, word, i) and holds(f.right, word, i)
    if isinstance(f, Or):
        return holds(f.left, word, i) or holds(f.right, word, i)
    if isinstance(f, Eventually):
        return any(holds(f.arg, word, j) for j in range(i, n))
    if isinstance(f, Until):
        for j in range(i, n):
            if holds(f.right, word, j):
                return True
            if not holds(f.left, word, j):
                return False
        return False
    raise TypeError(f)


def eval_guard(f: Formula, letter: frozenset[str]) -> bool:
    return holds(f, [letter], 0)


# -- automata ------------------------------------------------------------------

# A residual obligation is a set of clauses (disjunction); each clause is a
# set of formulas that must all hold from the next position on (conjunction).
Clause = frozenset
Residual = frozenset

_TRUE: Residual = frozenset([frozenset()])
_FALSE: Residual = frozenset()


def _or(a: Residual, b: Residual) -> Residual:
    return _reduce(a | b)


def _and(a: Residual, b: Residual) -> Residual:
    return _reduce(frozenset(x | y for x in a for y in b))


def _reduce(r: Residual) -> Residual:
    # drop clauses that strictly contain another clause
    return frozenset(c for c in r if not any(o < c for o in r))


def _progress(f: Formula, letter: frozenset[str]) -> Residual:
    if isinstance(f, Const):
        return _TRUE if f.value else _FALSE
    if isinstance(f, Lit):
        return _TRUE if (f.name in letter) == f.positive else _FALSE
    if isinstance(f, And):
        return _and(_progress(f.left, letter), _progress(f.right, letter))
    if isinstance(f, Or):
        return _or(_progress(f.left, letter), _progress(f.right, letter))
    if isinstance(f, Eventually):
        return _or(_progress(f.arg, letter), frozenset([frozenset([f])]))
    if isinstance(f, Until):
        keep = _and(_progress(f.left, letter), frozenset([frozenset([f])]))
        return _or(_progress(f.right, letter), keep)
    raise TypeError(f)


def _step(r: Residual, letter: frozenset[str]) -> Residual:
    if frozenset() in r:
        return _TRUE
    out = _FALSE
    for clause in r:
        acc = _TRUE
        for g in clause:
            acc = _and(acc, _progress(g, letter))
            if not acc:
                break
        out = _or(out, acc)
    return out


def letters(props: Iterable[str]) -> list[frozenset[str]]:
    """All subsets of ``props`` in a fixed order (by bitmask over sorted props)."""
    ps = sorted(props)
    return [
        frozenset(p for j, p in enumerate(ps) if mask >> j & 1) for mask in range(1 << len(ps))
    ]


@dataclass(frozen=True, eq=False)
class Dfa:
    """Total DFA over the alphabet ``2^props``."""

    states: tuple[str, ...]
    initial: str
    accepting: frozenset[str]
    props: tuple[str, ...]
    delta: Mapping[tuple[str, frozenset[str]], str]

    def step(self, q: str, label: Iterable[str]) -> str:
        letter = frozenset(label) & frozenset(self.props)
        return self.delta[(q, letter)]

    def run(self, word: Iterable[Iterable[str]]) -> tuple[str, bool]:
        """Run from the initial state; accepted iff some prefix reached an accepting state."""
        q = self.initial
        accepted = q in self.accepting
        for label in word:
            q = self.step(q, label)
            accepted = accepted or q in self.accepting
        return q, accepted

    def edges(self) -> list[tuple[str, str, str]]:
        """Guarded edges ``(from, guard, to)`` with guards in disjunctive normal form."""
        out = []
        for q in self.states:
            by_target: dict[str, list[frozenset[str]]] = {}
            for letter in letters(self.props):
                by_target.setdefault(self.delta[(q, letter)], []).append(letter)
            for t in self.states:
                if t in by_target:
                    out.append((q, _dnf_guard(self.props, by_target[t]), t))
        return out

    def to_document(self) -> dict:
        return {
            "states": list(self.states),
            "initial": self.initial,
            "accepting": sorted(self.accepting, key=self.states.index),
            "alphabet": list(self.props),
            "transitions": [{"from": f, "guard": g, "to": t} for f, g, t in self.edges()],
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "Dfa":
        """Load and check a DFA document; raises ``DfaFormatError`` unless deterministic and total."""
        try:
            states = tuple(doc["states"])
            initial = doc["initial"]
            accepting = frozenset(doc["accepting"])
            raw = [(e["from"], parse_guard(e["guard"]), e["to"]) for e in doc["transitions"]]
        except (KeyError, TypeError) as exc:
            raise DfaFormatError(f"malformed DFA document: {exc}") from exc
        known = set(states)
        if initial not in known or not accepting <= known:
            raise DfaFormatError("initial/accepting states must be declared")
        props = set(doc.get("alphabet", ()))
        for f, g, t in raw:
            if f not in known or t not in known:
                raise DfaFormatError(f"edge {f}->{t} uses an undeclared state")
            props |= atoms(g)
        props_t = tuple(sorted(props))
        delta = {}
        for q in states:
            for letter in letters(props_t):
                hits = [t for f, g, t in raw if f == q and eval_guard(g, letter)]
                if len(hits) != 1:
                    kind = "not total" if not hits else "not deterministic"
                    raise DfaFormatError(
                        f"DFA {kind}: state {q} on letter {sorted(letter)} has {len(hits)} enabled edges"
                    )
                delta[(q, letter)] = hits[0]
        return cls(states, initial, accepting, props_t, MappingProxyType(delta))


def _dnf_guard(props: Sequence[str], minterms: list[frozenset[str]]) -> str:
    if len(minterms) == 1 << len(props):
        return "true"
    from sympy import Symbol
    from sympy.logic import SOPform

    syms = [Symbol(p) for p in props]
    terms = [[1 if p in m else 0 for p in props] for m in minterms]
    expr = SOPform(syms, terms)
    return str(expr).replace("~", "!")


def to_dfa(f: Formula, ap: Iterable[str]) -> Dfa:
    """Construct the minimal good-prefix DFA of ``f`` over ``2^ap``.

    Residual obligations are kept in disjunctive normal form: each clause is
    one state of an implicit nondeterministic automaton and a DFA state is
    the set of live clauses (subset construction). Only subsets reachable
    from the initial obligation are built; the result is then minimized,
    which collapses every accepting subset into one absorbing sink.
    """
    ap = frozenset(ap)
    unknown = atoms(f) - ap
    if unknown:
        raise UnknownAtomError(f"atoms not in the proposition set: {sorted(unknown)}")
    alphabet = letters(ap)
    start: Residual = frozenset([frozenset([f])])
    index = {start: 0}
    order = [start]
    trans: list[list[int]] = []
    queue = deque([start])
    while queue:
        r = queue.popleft()
        row = []
        for letter in alphabet:
            nxt = _step(r, letter)
            if nxt not in index:
                index[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            row.append(index[nxt])
        trans.append(row)
    accepting = [frozenset() in r for r in order]
    blocks = _minimize(trans, accepting)
    # renumber blocks breadth-first from the initial block
    names: dict[int, str] = {}
    queue2 = deque([blocks[0]])
    names[blocks[0]] = "q0"
    block_rep = {}
    for i, b in enumerate(blocks):
        block_rep.setdefault(b, i)
    while queue2:
        b = queue2.popleft()
        for j in trans[block_rep[b]]:
            nb = blocks[j]
            if nb not in names:
                names[nb] = f"q{len(names)}"
                queue2.append(nb)
    states = tuple(sorted(names.values(), key=lambda s: int(s[1:])))
    props = tuple(sorted(ap))
    delta = {}
    for b, name in names.items():
        for k, letter in enumerate(alphabet):
            delta[(name, letter)] = names[blocks[trans[block_rep[b]][k]]]
    acc = frozenset(names[blocks[i]] for i in range(len(order)) if accepting[i])
    return Dfa(states, "q0", acc, props, MappingProxyType(delta))


def _minimize(trans: list[list[int]], accepting: list[bool]) -> list[int]:
    """Moore partition refinement; returns the block id of every state."""
    block = [1 if a else 0 for a in accepting]
    while True:
        sig = {}
        new = []
        for i, row in enumerate(trans):
            key = (block[i], tuple(block[j] for j in row))
            new.append(sig.setdefault(key, len(sig)))
        if len(sig) == len(set(block)):
            return new
        block = new


def random_formula(rng, props: Sequence[str], depth: int = 2) -> Formula:
    """Random formula of the fragment with at most ``depth`` temporal nestings."""

    def guard(d: int) -> Formula:
        if d <= 0 or rng.random() < 0.5:
            return Lit(str(rng.choice(list(props))), bool(rng.random() < 0.75))
        op = And if rng.random() < 0.5 else Or
        return op(guard(d - 1), guard(d - 1))

    def build(d: int) -> Formula:
        if d <= 0:
            return guard(1)
        k = rng.random()
        if k < 0.35:
            return Eventually(build(d - 1))
        if k < 0.6:
            return Until(guard(1), build(d - 1))
        if k < 0.75:
            return And(build(d - 1), build(d - 1))
        if k < 0.9:
            return Or(build(d - 1), build(d - 1))
        return And(guard(1), Eventually(build(d - 1)))

    return build(depth)


def all_words(props: Sequence[str], max_len: int) -> Iterable[tuple[frozenset[str], ...]]:
    alphabet = letters(props)
    for n in range(max_len + 1):
        yield from itertools.product(alphabet, repeat=n)
