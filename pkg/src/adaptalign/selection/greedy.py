"""Greedy bin-coverage selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SelectionError

TERMINATIONS = ("full_coverage", "budget_reached", "no_improvement")


@dataclass
class SelectionResult:
    chosen: list
    gap_trace: list
    empty_total: int
    empty_uncoverable: int
    termination: str
    config: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "chosen": [int(i) for i in self.chosen],
            "gap_trace": [int(g) for g in self.gap_trace],
            "empty_total": int(self.empty_total),
            "empty_uncoverable": int(self.empty_uncoverable),
            "termination": self.termination,
        }
        d.update(self.config)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        core = ("chosen", "gap_trace", "empty_total", "empty_uncoverable", "termination")
        return cls(
            chosen=[int(i) for i in d["chosen"]],
            gap_trace=[int(g) for g in d["gap_trace"]],
            empty_total=int(d["empty_total"]),
            empty_uncoverable=int(d["empty_uncoverable"]),
            termination=d["termination"],
            config={k: v for k, v in d.items() if k not in core},
        )


def greedy_select(u, budget=None):
    """Add, one at a time, the item whose inclusion leaves the fewest empty bins.

    Ties go to the lowest item index.  The first pick is always made; after
    that the loop stops on full coverage of every occupiable bin, on reaching
    ``budget``, or when no remaining item strictly lowers the gap.
    """
    if u.n_items == 0:
        raise SelectionError("universe is empty")
    if budget is not None and budget < 1:
        raise SelectionError(f"budget must be >= 1, got {budget}")
    flat = u.flat_bins
    covered = np.zeros(u.n_bins, dtype=bool)
    available = np.ones(u.n_items, dtype=bool)
    current = u.n_bins
    chosen, trace = [], []
    termination = "full_coverage"
    while True:
        if chosen and current == u.empty_uncoverable:
            termination = "full_coverage"
            break
        if budget is not None and len(chosen) >= budget:
            termination = "budget_reached"
            break
        if not available.any():
            termination = "no_improvement"
            break
        if flat.shape[1]:
            # distinct bins per item never collide across dims, so a row sum
            # of uncovered flags is the exact marginal gain
            gains = (~covered[flat]).sum(axis=1)
        else:
            gains = np.zeros(u.n_items, dtype=np.int64)
        gains = np.where(available, gains, -1)
        best = int(np.argmax(gains))
        if chosen and gains[best] <= 0:
            termination = "no_improvement"
            break
        chosen.append(best)
        available[best] = False
        covered[flat[best]] = True
        current -= int(gains[best])
        trace.append(current)
    return SelectionResult(chosen, trace, current, u.empty_uncoverable, termination)
