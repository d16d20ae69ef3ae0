"""Benchmark-level workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import (
    TrainConfig,
    adapter_forward,
    evaluate,
    finetune,
    mse_loss,
    train_reference,
)
from .alignment import mean_cosine
from .errors import DimensionError
from .selection import (
    bin_universe,
    compute_bins,
    greedy_select,
    principal_basis,
)
from .synth import make_rng

REFERENCE_ID = "1"
DEFAULT_DIMS = 20
DEFAULT_W = 200
DEFAULT_KNN_K = 50
DEFAULT_EIG_K = 5


def subject_targets(bench, subject):
    return bench.targets[subject.item_ids]


def fit_reference(bench, cfg, subject_id=REFERENCE_ID):
    subject = bench.subject(subject_id)
    return train_reference(subject, subject_targets(bench, subject), cfg)


def reference_common_space(bench, ref_adapter, subject_id=REFERENCE_ID):
    """Reference adapter outputs on its common items, keyed by sorted item id."""
    subject = bench.subject(subject_id)
    rows = subject.rows("common")
    ids = subject.item_ids[rows]
    order = np.argsort(ids, kind="stable")
    return ids[order], adapter_forward(ref_adapter, subject.embeddings[rows[order]])


def random_common_subset(common_ids, limit, seed):
    common_ids = np.asarray(common_ids)
    if not 1 <= limit <= common_ids.size:
        raise DimensionError(f"common limit {limit} outside [1, {common_ids.size}]")
    pick = make_rng(np.random.SeedSequence(seed)).choice(common_ids.size, size=limit, replace=False)
    return np.sort(common_ids[pick])


def restrict_subject(subject, common_ids, include_unique=True):
    """Keep the listed common items (in id order), optionally unique items, and all test items."""
    rows = list(subject.rows_for_ids(np.sort(np.asarray(common_ids))))
    if include_unique:
        rows += list(subject.rows("unique"))
    rows += list(subject.rows("test"))
    return subject.take(rows)


def selection_universe(ref_adapter, common_space, d=DEFAULT_DIMS, w=DEFAULT_W):
    """Bin the reference common space along the adapter's top singular directions."""
    U, S = principal_basis(ref_adapter.effective_weight(), d)
    B = compute_bins(S, w)
    u = bin_universe(common_space @ U, B)
    config = {
        "d": int(d),
        "w": int(w),
        "bin_counts": [int(b) for b in B],
        "skipped_dims": [int(j) for j in u.skipped_dims],
        "universe_size": u.n_items,
    }
    return u, config


def select_common_items(ref_adapter, common_ids, common_space, d=DEFAULT_DIMS, w=DEFAULT_W, budget=None):
    u, config = selection_universe(ref_adapter, common_space, d, w)
    result = greedy_select(u, budget)
    config["budget"] = budget
    config["item_ids"] = [int(common_ids[i]) for i in result.chosen]
    result.config = config
    return result, u


@dataclass
class FinetuneOutcome:
    adapter: object
    mapper: object
    trace: object
    metrics: dict = field(default_factory=dict)


def run_finetune(bench, ref_adapter, ref_mapper, subject_id, cfg, common_ids, include_unique=False,
                 reference_id=REFERENCE_ID):
    """Fine-tune one subject on a chosen set of common items and score it.

    Metrics: test-item output MSE, adapter-level MSE against the reference
    common space on the training commons and on all held-out commons, and the
    matching mean cosines.
    """
    ref_ids, ref_space = reference_common_space(bench, ref_adapter, reference_id)
    pos = {int(i): r for r, i in enumerate(ref_ids)}
    subject = bench.subject(subject_id)
    sub = restrict_subject(subject, common_ids, include_unique)
    train_common = sub.ids("common")
    ref_train = ref_space[[pos[int(i)] for i in train_common]]
    targets = subject_targets(bench, sub)
    adapter, mapper, trace = finetune(sub, targets, ref_mapper, cfg, ref_train)

    test_rows = sub.rows("test")
    Z_train = adapter_forward(adapter, sub.embeddings[sub.rows("common")])
    held_ids = np.setdiff1d(ref_ids, train_common)
    metrics = {
        "test_output_mse": evaluate(adapter, mapper, sub.embeddings[test_rows], targets[test_rows]),
        "train_common_adapter_mse": mse_loss(Z_train, ref_train),
        "train_common_cosine": mean_cosine(Z_train, ref_train),
        "n_train_common": int(train_common.size),
        "n_train_items": int(sub.embeddings.shape[0] - test_rows.size),
    }
    if held_ids.size:
        Z_held = adapter_forward(adapter, subject.embeddings[subject.rows_for_ids(held_ids)])
        ref_held = ref_space[[pos[int(i)] for i in held_ids]]
        metrics["heldout_common_adapter_mse"] = mse_loss(Z_held, ref_held)
        metrics["heldout_common_cosine"] = mean_cosine(Z_held, ref_held)
    return FinetuneOutcome(adapter, mapper, trace, metrics)


def common_space_embeddings(bench, adapters, item_ids):
    """Per-subject adapter outputs on the given common items, item-matched."""
    out = []
    for sid, adapter in adapters.items():
        s = bench.subject(sid)
        out.append(adapter_forward(adapter, s.embeddings[s.rows_for_ids(item_ids)]))
    return out


def default_train_config(**overrides):
    return TrainConfig(**overrides)
