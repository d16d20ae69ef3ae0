import numpy as np
import pytest

from adaptalign.errors import SelectionError
from adaptalign.selection import (
    BinnedUniverse,
    brute_force_best_coverage,
    brute_force_min_cover,
    min_set_cover,
    setcover_to_binmap,
)

from instances import brute_min_setcover, random_setcover
from test_binning import FIVE


def test_min_cover_examples():
    assert brute_force_min_cover(FIVE) == 2
    u = BinnedUniverse([2, 2], [np.arange(3.0)] * 2, [[1, 0], [1, 0]])
    assert brute_force_min_cover(u) == 1


def test_best_coverage_examples():
    assert brute_force_best_coverage(FIVE, 0) == 0
    assert brute_force_best_coverage(FIVE, 1) == 2
    assert brute_force_best_coverage(FIVE, 5) == FIVE.n_bins - FIVE.empty_uncoverable


def test_oracle_caps():
    big = BinnedUniverse([2], [np.arange(3.0)], np.zeros((21, 1), dtype=int))
    with pytest.raises(SelectionError):
        brute_force_min_cover(big)
    with pytest.raises(SelectionError):
        brute_force_best_coverage(FIVE, 7)


def test_reduction_examples():
    u = setcover_to_binmap(2, [{1, 2}])
    assert u.n_items == 3 and brute_force_min_cover(u) == 3
    u = setcover_to_binmap(2, [{1}, {2}])
    assert brute_force_min_cover(u) == 3
    with pytest.raises(SelectionError):
        setcover_to_binmap(2, [{3}])


def test_reduction_structure():
    u = setcover_to_binmap(3, [{1, 3}, {2}])
    assert u.assignment.tolist() == [[0, 1, 0], [1, 0, 1], [1, 1, 1], [2, 2, 2]]
    assert u.bin_counts.tolist() == [3, 3, 3]


def test_n3_in_every_full_cover():
    from itertools import combinations

    u = setcover_to_binmap(3, [{1}, {2, 3}, {1, 2}])
    masks = u.item_masks()
    full = 0
    for m in masks:
        full |= m
    n3 = u.n_items - 1
    for size in range(1, u.n_items + 1):
        for combo in combinations(range(u.n_items), size):
            acc = 0
            for i in combo:
                acc |= masks[i]
            if acc == full:
                assert n3 in combo


def test_min_set_cover_agrees_with_bitmask_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, subsets = random_setcover(rng)
        assert min_set_cover(n, subsets) == brute_min_setcover(n, subsets)


def test_reduction_sandwich():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n, subsets = random_setcover(rng)
        opt = brute_min_setcover(n, subsets)
        if opt is None:
            continue
        assert opt + 1 <= brute_force_min_cover(setcover_to_binmap(n, subsets)) <= opt + 2
