"""Representative-item selection by greedy bin coverage."""

from .binning import (
    BinnedUniverse,
    bin_universe,
    compute_bins,
    extreme_items,
    gap,
    principal_basis,
    project_onto_principal,
)
from .greedy import TERMINATIONS, SelectionResult, greedy_select
from .oracles import brute_force_best_coverage, brute_force_min_cover, min_set_cover, setcover_to_binmap
from .stats import CoverageTest, coverage_permutation_test, random_empty_counts

__all__ = [name for name in dir() if not name.startswith("_")]
