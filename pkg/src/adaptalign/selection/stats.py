"""Permutation test of greedy coverage against random subsets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import SelectionError
from ..synth import make_rng
from .binning import gap


@dataclass(frozen=True)
class CoverageTest:
    p_value: float
    random_mean: float
    random_std: float
    selected_empty: int
    random_counts: np.ndarray


def random_empty_counts(u, subset_size, trials, seed):
    if trials < 1:
        raise SelectionError("trials must be >= 1")
    if not 1 <= subset_size <= u.n_items:
        raise SelectionError(f"subset_size {subset_size} outside [1, {u.n_items}]")
    children = np.random.SeedSequence(seed).spawn(trials)
    return np.array(
        [gap(make_rng(ss).choice(u.n_items, size=subset_size, replace=False), u) for ss in children],
        dtype=np.int64,
    )


def coverage_permutation_test(u, selected, subset_size, trials, seed):
    """p = (1 + #{random empty count <= selected empty count}) / (trials + 1)."""
    counts = random_empty_counts(u, subset_size, trials, seed)
    observed = gap(selected, u)
    p = (1 + int(np.sum(counts <= observed))) / (trials + 1)
    return CoverageTest(p, float(counts.mean()), float(counts.std()), observed, counts)
