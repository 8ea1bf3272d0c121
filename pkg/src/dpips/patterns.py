"""Ternary header patterns and finite unions of them.

A pattern is stored as ``(value, mask)`` over ``width`` bits, most significant
bit first when printed. Mask bit 1 means the position is fixed to the value
bit; mask bit 0 is a wildcard ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import _kernels

MAX_WIDTH = 64


class WidthMismatch(ValueError):
    """Two operands were defined over different header widths."""


def _full(width: int) -> int:
    return (1 << width) - 1


@dataclass(frozen=True, slots=True)
class HeaderPattern:
    value: int
    mask: int
    width: int

    def __post_init__(self):
        if not 1 <= self.width <= MAX_WIDTH:
            raise ValueError(f"header width must be in 1..{MAX_WIDTH}, got {self.width}")
        full = _full(self.width)
        if self.mask & ~full or self.mask < 0:
            raise ValueError("mask has bits outside the header width")
        object.__setattr__(self, "value", self.value & self.mask)

    @classmethod
    def parse(cls, text: str) -> "HeaderPattern":
        text = text.strip().replace("_", "")
        if not text:
            raise ValueError("empty bit pattern")
        value = mask = 0
        for ch in text:
            value <<= 1
            mask <<= 1
            if ch == "1":
                value |= 1
                mask |= 1
            elif ch == "0":
                mask |= 1
            elif ch not in "xX*":
                raise ValueError(f"invalid bit pattern character {ch!r} in {text!r}")
        return cls(value, mask, len(text))

    @classmethod
    def wildcard(cls, width: int) -> "HeaderPattern":
        return cls(0, 0, width)

    @classmethod
    def exact(cls, header: int, width: int) -> "HeaderPattern":
        return cls(header, _full(width), width)

    def __str__(self) -> str:
        out = []
        for i in range(self.width - 1, -1, -1):
            bit = 1 << i
            out.append(("1" if self.value & bit else "0") if self.mask & bit else "x")
        return "".join(out)

    def __repr__(self) -> str:
        return f"HeaderPattern({str(self)!r})"

    @property
    def free_bits(self) -> int:
        return self.width - bin(self.mask).count("1")

    def size(self) -> int:
        return 1 << self.free_bits

    def matches(self, header: int) -> bool:
        return ((header ^ self.value) & self.mask) == 0

    def _check(self, other: "HeaderPattern") -> None:
        if self.width != other.width:
            raise WidthMismatch(f"width {self.width} vs {other.width}")

    def overlaps(self, other: "HeaderPattern") -> bool:
        self._check(other)
        return ((self.value ^ other.value) & self.mask & other.mask) == 0

    def contains(self, other: "HeaderPattern") -> bool:
        """True when every header of ``other`` also matches ``self``."""
        self._check(other)
        return (self.mask & ~other.mask) == 0 and ((self.value ^ other.value) & self.mask) == 0

    def intersect(self, other: "HeaderPattern") -> Optional["HeaderPattern"]:
        self._check(other)
        if (self.value ^ other.value) & self.mask & other.mask:
            return None
        return HeaderPattern(self.value | other.value, self.mask | other.mask, self.width)

    def subtract(self, other: "HeaderPattern") -> list["HeaderPattern"]:
        """Disjoint patterns covering ``self`` minus ``other``."""
        self._check(other)
        if (self.value ^ other.value) & self.mask & other.mask:
            return [self]
        split = other.mask & ~self.mask
        pieces = []
        value, mask = self.value, self.mask
        bit = 1 << (self.width - 1)
        while split:
            if split & bit:
                mask |= bit
                want = other.value & bit
                pieces.append(HeaderPattern(value | (bit ^ want), mask, self.width))
                value |= want
                split &= ~bit
            bit >>= 1
        return pieces

    def headers(self) -> Iterator[int]:
        """Every concrete header in the pattern, ascending."""
        free = [1 << i for i in range(self.width) if not (self.mask >> i) & 1]
        for combo in range(1 << len(free)):
            h = self.value
            for j, bit in enumerate(free):
                if (combo >> j) & 1:
                    h |= bit
            yield h

    def sample(self, rng: np.random.Generator) -> int:
        free = _full(self.width) & ~self.mask
        if not free:
            return self.value
        bits = rng.integers(0, 2, size=self.width)
        noise = 0
        for b in bits:
            noise = (noise << 1) | int(b)
        return self.value | (noise & free)


def intersect(a: HeaderPattern, b: HeaderPattern) -> Optional[HeaderPattern]:
    """Bitwise meet of two patterns; ``None`` when some position conflicts."""
    return a.intersect(b)


@dataclass(frozen=True, slots=True)
class Rewrite:
    """Set the masked bits of a header to constants."""

    value: int
    mask: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value & self.mask)

    @classmethod
    def parse(cls, text: str) -> "Rewrite":
        p = HeaderPattern.parse(text)
        return cls(p.value, p.mask, p.width)

    def __str__(self) -> str:
        return str(HeaderPattern(self.value, self.mask, self.width))

    def apply(self, header: int) -> int:
        return (header & ~self.mask) | self.value

    def apply_pattern(self, p: HeaderPattern) -> HeaderPattern:
        return HeaderPattern((p.value & ~self.mask) | self.value, p.mask | self.mask, p.width)


def _canonical(patterns: Sequence[HeaderPattern]) -> tuple[HeaderPattern, ...]:
    """Drop duplicates and patterns subsumed by another member."""
    uniq = sorted(set(patterns), key=lambda p: (p.free_bits, p.value, p.mask), reverse=True)
    if len(uniq) <= 1:
        return tuple(uniq)
    kept: list[HeaderPattern] = []
    if len(uniq) < 64:
        for p in uniq:
            if not any(k.contains(p) for k in kept):
                kept.append(p)
    else:
        vals = np.array([p.value for p in uniq], dtype=np.uint64)
        masks = np.array([p.mask for p in uniq], dtype=np.uint64)
        alive = np.ones(len(uniq), dtype=bool)
        for i in range(len(uniq)):
            if not alive[i]:
                continue
            # uniq[i] subsumes j when j cares about every bit i cares about and agrees there
            sub = ((masks[i] & ~masks) == 0) & (((vals ^ vals[i]) & masks[i]) == 0)
            sub[: i + 1] = False
            alive &= ~sub
        kept = [p for p, a in zip(uniq, alive) if a]
    return tuple(sorted(kept, key=lambda p: str(p)))


@dataclass(frozen=True)
class HeaderSpace:
    width: int
    patterns: tuple[HeaderPattern, ...] = field(default=())

    def __post_init__(self):
        for p in self.patterns:
            if p.width != self.width:
                raise WidthMismatch(f"pattern {p} is not {self.width} bits wide")
        object.__setattr__(self, "patterns", _canonical(self.patterns))

    @classmethod
    def empty(cls, width: int) -> "HeaderSpace":
        return cls(width, ())

    @classmethod
    def of(cls, *patterns: HeaderPattern | str) -> "HeaderSpace":
        parsed = [HeaderPattern.parse(p) if isinstance(p, str) else p for p in patterns]
        if not parsed:
            raise ValueError("HeaderSpace.of needs at least one pattern; use empty(width)")
        return cls(parsed[0].width, tuple(parsed))

    @classmethod
    def full(cls, width: int) -> "HeaderSpace":
        return cls(width, (HeaderPattern.wildcard(width),))

    def __bool__(self) -> bool:
        return bool(self.patterns)

    def __iter__(self) -> Iterator[HeaderPattern]:
        return iter(self.patterns)

    def __len__(self) -> int:
        return len(self.patterns)

    def __contains__(self, header: int) -> bool:
        return any(p.matches(header) for p in self.patterns)

    def __str__(self) -> str:
        if not self.patterns:
            return "{}"
        return " ∪ ".join(str(p) for p in self.patterns)

    def is_empty(self) -> bool:
        return not self.patterns

    def _coerce(self, other) -> tuple[HeaderPattern, ...]:
        if isinstance(other, HeaderPattern):
            other = (other,)
        elif isinstance(other, HeaderSpace):
            if other.width != self.width:
                raise WidthMismatch(f"width {self.width} vs {other.width}")
            other = other.patterns
        for p in other:
            if p.width != self.width:
                raise WidthMismatch(f"width {self.width} vs {p.width}")
        return tuple(other)

    def union(self, other) -> "HeaderSpace":
        return HeaderSpace(self.width, self.patterns + self._coerce(other))

    def intersect(self, other) -> "HeaderSpace":
        out = []
        for q in self._coerce(other):
            for p in self.patterns:
                r = p.intersect(q)
                if r is not None:
                    out.append(r)
        return HeaderSpace(self.width, tuple(out))

    def subtract(self, other) -> "HeaderSpace":
        pieces = list(self.patterns)
        for q in self._coerce(other):
            nxt = []
            for p in pieces:
                nxt.extend(p.subtract(q))
            pieces = nxt
            if not pieces:
                break
        return HeaderSpace(self.width, tuple(pieces))

    def equivalent(self, other: "HeaderSpace") -> bool:
        """Set equality, independent of how the union is written."""
        return self.subtract(other).is_empty() and other.subtract(self).is_empty()

    def disjoint(self) -> tuple[HeaderPattern, ...]:
        """Pairwise disjoint patterns covering exactly this space."""
        out: list[HeaderPattern] = []
        for p in self.patterns:
            pieces = [p]
            for q in out:
                if not pieces:
                    break
                nxt = []
                for piece in pieces:
                    nxt.extend(piece.subtract(q) if piece.overlaps(q) else (piece,))
                pieces = nxt
            out.extend(pieces)
        return tuple(out)

    def count(self) -> int:
        return sum(p.size() for p in self.disjoint())

    def headers(self) -> set[int]:
        out: set[int] = set()
        for p in self.patterns:
            out.update(p.headers())
        return out

    def sample(self, rng: np.random.Generator) -> int:
        """Uniform draw over the concrete headers of the space."""
        if not self.patterns:
            raise ValueError("cannot sample from an empty header space")
        parts = self.disjoint()
        sizes = np.array([float(p.size()) for p in parts])
        idx = int(rng.choice(len(parts), p=sizes / sizes.sum()))
        return parts[idx].sample(rng)


def overlap_matrix(a: Sequence[HeaderPattern], b: Sequence[HeaderPattern]) -> np.ndarray:
    """``out[i, j]`` is true when ``a[i]`` and ``b[j]`` overlap."""
    if not a or not b:
        return np.zeros((len(a), len(b)), dtype=bool)
    av = np.array([p.value for p in a], dtype=np.uint64)
    am = np.array([p.mask for p in a], dtype=np.uint64)
    bv = np.array([p.value for p in b], dtype=np.uint64)
    bm = np.array([p.mask for p in b], dtype=np.uint64)
    return _kernels.overlap(av, am, bv, bm)


def as_space(width: int, patterns: Iterable[HeaderPattern]) -> HeaderSpace:
    return HeaderSpace(width, tuple(patterns))
