"""Bitmask helpers for index subsets.

A subset of hypotheses {0..m-1} is packed into an int: bit j set means
hypothesis j belongs to the set. Enumeration in increasing mask order is
the canonical ordering used by every report in the package.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator

from .exceptions import InputError

MAX_HYPOTHESES = 20


def check_m(m: int) -> int:
    m = int(m)
    if not 1 <= m <= MAX_HYPOTHESES:
        raise InputError(f"number of hypotheses must be in 1..{MAX_HYPOTHESES}, got {m}")
    return m


def mask_of(indices: Iterable[int], m: int) -> int:
    """Pack 0-based indices into a bitmask, rejecting duplicates."""
    mask = 0
    for i in indices:
        i = int(i)
        if not 0 <= i < m:
            raise InputError(f"hypothesis index {i} out of range for m={m}")
        bit = 1 << i
        if mask & bit:
            raise InputError(f"duplicate hypothesis index {i}")
        mask |= bit
    return mask


def members(mask: int) -> tuple[int, ...]:
    """0-based indices in ascending order."""
    out = []
    j = 0
    rest = mask
    while rest:
        if rest & 1:
            out.append(j)
        rest >>= 1
        j += 1
    return tuple(out)


def size(mask: int) -> int:
    return int(mask).bit_count()


def contains(mask: int, j: int) -> bool:
    return bool((mask >> j) & 1)


def iter_masks(m: int) -> Iterator[int]:
    """All nonempty subsets of {0..m-1} in canonical order."""
    return iter(range(1, 1 << m))


def iter_submasks(mask: int) -> Iterator[int]:
    """Nonempty subsets of ``mask``, including ``mask`` itself (descending)."""
    sub = mask
    while sub:
        yield sub
        sub = (sub - 1) & mask
