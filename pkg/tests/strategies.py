"""Shared hypothesis strategies."""

from hypothesis import strategies as st

from dpips.patterns import HeaderPattern, HeaderSpace

WIDTH = 6


def pattern_text(width: int = WIDTH):
    return st.text(alphabet="01x", min_size=width, max_size=width)


def patterns(width: int = WIDTH):
    return pattern_text(width).map(HeaderPattern.parse)


def spaces(width: int = WIDTH, max_size: int = 5):
    return st.lists(patterns(width), max_size=max_size).map(lambda ps: HeaderSpace(width, tuple(ps)))


def headers_of(space: HeaderSpace) -> set[int]:
    return {h for h in range(1 << space.width) if h in space}
