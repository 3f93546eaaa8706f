"""Ordinal-pattern code tables for motifs.

A motif is classified by its weak ordering, expressed as a dense-rank
tuple (ties share a rank, ranks start at 1 and have no gaps).  This module
maps dense-rank tuples to the pattern codes used in reports.  Keep code
assignments here so they can be revised without touching the logic.
"""
from functools import lru_cache
from itertools import product

import numpy as np

# n = 3: strict orders and the flat/step shapes keep their dense-rank code;
# the two outer-tie shapes (x1 = x3) use 113 and 311.
TRIADIC_CODES = {
    (1, 1, 1): "111",
    (1, 1, 2): "112",
    (1, 2, 1): "113",
    (1, 2, 2): "122",
    (1, 2, 3): "123",
    (1, 3, 2): "132",
    (2, 1, 1): "211",
    (2, 1, 3): "213",
    (2, 2, 1): "221",
    (2, 3, 1): "231",
    (2, 1, 2): "311",
    (3, 1, 2): "312",
    (3, 2, 1): "321",
}


def _is_dense_rank(r):
    used = set(r)
    return min(used) == 1 and used == set(range(1, max(used) + 1))


@lru_cache(maxsize=None)
def rank_table(n):
    """All dense-rank tuples of length ``n``, ordered by their code."""
    if n < 2:
        raise ValueError(f"motif length must be >= 2, got {n}")
    ranks = [r for r in product(range(1, n + 1), repeat=n) if _is_dense_rank(r)]
    return tuple(sorted(ranks, key=lambda r: code_for_rank(r)))


def code_for_rank(rank):
    rank = tuple(int(v) for v in rank)
    if len(rank) == 3:
        return TRIADIC_CODES[rank]
    return "".join(map(str, rank))


@lru_cache(maxsize=None)
def codes(n):
    """Pattern codes for motif length ``n`` in table order."""
    return tuple(code_for_rank(r) for r in rank_table(n))


@lru_cache(maxsize=None)
def _rank_index(n):
    """Lookup array from base-(n+1) encoded rank tuple to pattern index."""
    lut = np.full((n + 1) ** n, -1, dtype=np.int64)
    for j, r in enumerate(rank_table(n)):
        lut[sum(v * (n + 1) ** (n - 1 - i) for i, v in enumerate(r))] = j
    return lut
