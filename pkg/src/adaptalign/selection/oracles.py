"""Exhaustive oracles and the set-cover construction used to test greedy selection."""

from __future__ import annotations

from functools import reduce
from itertools import combinations
from operator import or_

import numpy as np

from ..errors import SelectionError
from .binning import BinnedUniverse

MIN_COVER_MAX_ITEMS = 20
BEST_COVERAGE_MAX_ITEMS = 15
BEST_COVERAGE_MAX_K = 6


def _union(masks):
    return reduce(or_, masks, 0)


def brute_force_min_cover(u):
    """Smallest subset size that occupies every occupiable bin."""
    if u.n_items > MIN_COVER_MAX_ITEMS:
        raise SelectionError(f"brute force limited to {MIN_COVER_MAX_ITEMS} items, got {u.n_items}")
    masks = u.item_masks()
    full = _union(masks)
    if full == 0:
        return 0
    for size in range(1, len(masks) + 1):
        for combo in combinations(masks, size):
            if _union(combo) == full:
                return size
    raise AssertionError("unreachable: the whole universe is a cover")


def brute_force_best_coverage(u, k):
    """Maximum number of bins any ``k`` items can occupy."""
    if u.n_items > BEST_COVERAGE_MAX_ITEMS or k > BEST_COVERAGE_MAX_K:
        raise SelectionError(
            f"brute force limited to {BEST_COVERAGE_MAX_ITEMS} items and k <= {BEST_COVERAGE_MAX_K}"
        )
    if k < 0:
        raise SelectionError("k must be >= 0")
    masks = u.item_masks()
    k = min(k, len(masks))
    return max(bin(_union(c)).count("1") for c in combinations(masks, k))


def setcover_to_binmap(n, subsets):
    """Bin universe whose minimum cover encodes the given set-cover instance.

    Items ``0..len(subsets)-1`` are the subset vectors (bin 0 where the element
    is in the subset, bin 1 elsewhere), followed by ``N2`` (bin 1 everywhere)
    and ``N3`` (bin 2 everywhere).  Elements are 1-based.
    """
    if n < 1:
        raise SelectionError("universe size must be >= 1")
    if not subsets:
        raise SelectionError("need at least one subset")
    rows = []
    for s in subsets:
        s = set(s)
        if not s or any(not 1 <= e <= n for e in s):
            raise SelectionError(f"subset {sorted(s)} empty or outside [1, {n}]")
        rows.append([0 if d in s else 1 for d in range(1, n + 1)])
    rows.append([1] * n)
    rows.append([2] * n)
    edges = [np.arange(4, dtype=float) for _ in range(n)]
    return BinnedUniverse(np.full(n, 3), edges, np.array(rows), [])


def min_set_cover(n, subsets):
    """Exhaustive minimum number of subsets covering {1..n}; None if impossible."""
    target = set(range(1, n + 1))
    sets = [set(s) for s in subsets]
    for size in range(1, len(sets) + 1):
        for combo in combinations(sets, size):
            if set().union(*combo) >= target:
                return size
    return None
