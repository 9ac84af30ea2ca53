"""Formula parsing, integer-formula reduction and element embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .elements import ATOMIC_NUMBER, SYMBOLS

DEFAULT_NODE_CAP = 64


class FormulaError(ValueError):
    """Raised for malformed formula strings; carries the character offset."""

    def __init__(self, message: str, text: str = "", position: int | None = None):
        self.text = text
        self.position = position
        where = f" at position {position} in {text!r}" if position is not None else ""
        super().__init__(message + where)


class Composition(Mapping):
    """Immutable element -> positive rational amount map."""

    __slots__ = ("_amounts",)

    def __init__(self, amounts: Mapping[str, object]):
        clean: dict[str, Fraction] = {}
        for sym, amt in amounts.items():
            if sym not in ATOMIC_NUMBER:
                raise FormulaError(f"unknown element symbol {sym!r}")
            val = amt if isinstance(amt, Fraction) else Fraction(str(amt))
            if val <= 0:
                raise FormulaError(f"amount of {sym} must be positive, got {amt}")
            clean[sym] = clean.get(sym, Fraction(0)) + val
        self._amounts = MappingProxyType(clean)

    def __getitem__(self, key):
        return self._amounts[key]

    def __iter__(self):
        return iter(self._amounts)

    def __len__(self):
        return len(self._amounts)

    def __eq__(self, other):
        if isinstance(other, Mapping):
            return dict(self._amounts) == {k: Fraction(str(v)) if not isinstance(v, Fraction) else v
                                           for k, v in other.items()}
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._amounts.items()))

    def __repr__(self):
        return f"Composition({format_composition(self)!r})"

    @property
    def elements(self) -> list[str]:
        return sorted(self._amounts, key=ATOMIC_NUMBER.get)


@dataclass(frozen=True)
class IntegerFormula:
    counts: Mapping[str, int]

    @property
    def total_atoms(self) -> int:
        return sum(self.counts.values())

    def __str__(self):
        return "".join(f"{s}{'' if n == 1 else n}" for s, n in self.counts.items())


# --- parsing ----------------------------------------------------------------

_CLOSE = {"(": ")", "[": "]"}


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, msg):
        raise FormulaError(msg, self.text, self.pos)

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def number(self) -> Fraction:
        start = self.pos
        while self.peek().isdigit() or self.peek() == ".":
            self.pos += 1
        raw = self.text[start:self.pos]
        if not raw:
            return Fraction(1)
        try:
            val = Fraction(raw)
        except ValueError:
            self.pos = start
            self.fail(f"malformed number {raw!r}")
        if val <= 0:
            self.pos = start
            self.fail("subscript must be positive")
        return val

    def group(self, closer: str | None) -> dict[str, Fraction]:
        out: dict[str, Fraction] = {}
        while True:
            ch = self.peek()
            if ch == "":
                if closer is not None:
                    self.fail(f"unbalanced parentheses: expected {closer!r}")
                return out
            if ch in _CLOSE:
                opened = self.pos
                self.pos += 1
                inner = self.group(_CLOSE[ch])
                if not inner:
                    self.pos = opened
                    self.fail("empty parenthesised group")
                mult = self.number()
                for s, a in inner.items():
                    out[s] = out.get(s, Fraction(0)) + a * mult
            elif ch in ")]":
                if ch != closer:
                    self.fail(f"unbalanced parentheses: unexpected {ch!r}")
                self.pos += 1
                return out
            elif ch.isupper():
                start = self.pos
                self.pos += 1
                while self.peek().islower():
                    self.pos += 1
                sym = self.text[start:self.pos]
                if sym not in ATOMIC_NUMBER:
                    self.pos = start
                    self.fail(f"unknown element symbol {sym!r}")
                amt = self.number()
                out[sym] = out.get(sym, Fraction(0)) + amt
            elif ch.isspace():
                self.pos += 1
            else:
                self.fail(f"unexpected character {ch!r}")


def parse_formula(text: str) -> Composition:
    """Parse e.g. ``"Ba4LiCu(CO5)2"`` or ``"Li0.5Fe0.5PO4"``."""
    text = text.strip()
    if not text:
        raise FormulaError("empty formula", text, 0)
    return Composition(_Parser(text).group(None))


def _fmt_amount(a: Fraction) -> str:
    if a == 1:
        return ""
    if a.denominator == 1:
        return str(a.numerator)
    d = a.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d == 1:
        # terminating decimal: print exactly
        digits = 0
        while (a * 10 ** digits).denominator != 1:
            digits += 1
        return f"{float(a):.{digits}f}" if digits < 16 else str(a.numerator / a.denominator)
    return repr(float(a))


def format_composition(c: Mapping[str, Fraction]) -> str:
    return "".join(f"{s}{_fmt_amount(Fraction(c[s]))}" for s in c)


# --- integer formula --------------------------------------------------------

def _primitive(amounts: list[Fraction]) -> list[int]:
    den = reduce(math.lcm, (a.denominator for a in amounts), 1)
    ints = [int(a * den) for a in amounts]
    g = reduce(math.gcd, ints)
    return [i // g for i in ints]


def to_integer_formula(c: Composition, max_denominator: int = 12,
                       node_cap: int = DEFAULT_NODE_CAP) -> IntegerFormula:
    """Reduce a (possibly fractional) composition to its smallest integer formula.

    Exact rational amounts whose primitive integer ratio fits ``node_cap`` are
    reduced exactly. Otherwise each amount is first replaced by its best
    rational approximation with denominator <= ``max_denominator``.
    """
    if not c:
        raise FormulaError("empty composition")
    syms = list(c)
    amounts = [Fraction(c[s]) for s in syms]
    counts = _primitive(amounts)
    if sum(counts) > node_cap:
        approx = [a.limit_denominator(max_denominator) for a in amounts]
        if any(a <= 0 for a in approx):
            raise FormulaError(
                f"amount too small to represent with max_denominator={max_denominator}; "
                "increase max_denominator")
        counts = _primitive(approx)
    total = sum(counts)
    if total > node_cap:
        raise FormulaError(
            f"integer formula has {total} atoms, above the node cap of {node_cap}; "
            "raise the node cap or lower max_denominator")
    return IntegerFormula(dict(zip(syms, counts)))


# --- embeddings -------------------------------------------------------------

@dataclass(frozen=True)
class ElementEmbeddingTable:
    vectors: Mapping[str, np.ndarray]
    source: str = "pretrained"
    dim: int = field(init=False)

    def __post_init__(self):
        dims = {len(v) for v in self.vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"embedding vectors have inconsistent dimensions {sorted(dims)}")
        object.__setattr__(self, "dim", dims.pop())

    @classmethod
    def one_hot(cls) -> ElementEmbeddingTable:
        eye = np.eye(len(SYMBOLS))
        return cls({s: eye[i] for i, s in enumerate(SYMBOLS)}, source="one-hot")

    @classmethod
    def load(cls, path) -> ElementEmbeddingTable:
        vectors = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] not in ATOMIC_NUMBER:
                raise ValueError(f"{path}:{lineno}: unknown element {parts[0]!r}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        return cls(vectors, source="pretrained")

    def save(self, path):
        with open(path, "w") as fh:
            for s, v in self.vectors.items():
                fh.write(s + " " + " ".join(repr(float(x)) for x in v) + "\n")

    def matrix(self, symbols) -> np.ndarray:
        return np.stack([embed(s, self) for s in symbols]) if symbols else np.zeros((0, self.dim))


def embed(symbol: str, table: ElementEmbeddingTable) -> np.ndarray:
    try:
        return table.vectors[symbol]
    except KeyError:
        covered = " ".join(sorted(table.vectors, key=lambda s: ATOMIC_NUMBER.get(s, 999)))
        raise KeyError(f"no embedding for {symbol!r}; table covers: {covered}") from None
