"""Synthetic multi-subject benchmark.

A shared latent space is observed by each subject through its own linear
transform plus Gaussian noise.  Items are split into ``common`` (seen by all
subjects, same ids everywhere), ``unique`` (training items private to one
subject) and ``test`` (held out, disjoint across subjects).

Randomness comes from Philox (counter-based, 64-bit) generators keyed by a
``SeedSequence`` tree rooted at ``config.seed``; the stream layout is fixed so
regression values stay stable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .tensor import load_matrix, save_matrix

SPLITS = ("common", "unique", "test")
TRANSFORMS = ("orthogonal", "invertible_linear", "tall_linear")
MAX_CONDITION = 100.0


def make_rng(seed_seq):
    return np.random.Generator(np.random.Philox(seed_seq))


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 4
    n_common: int = 1000
    n_unique: int = 200
    n_test: int = 100
    latent_dim: int = 16
    subject_dim: int = 64
    target_dim: int = 32
    transform: str = "tall_linear"
    noise_sigma: float = 0.02
    n_categories: int = 8
    seed: int = 20240101

    def validate(self):
        if self.transform not in TRANSFORMS:
            raise DimensionError(f"unknown transform {self.transform!r}")
        for name in ("n_subjects", "n_common", "latent_dim", "subject_dim", "target_dim", "n_categories"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be >= 1")
        if self.n_unique < 0 or self.n_test < 0:
            raise DimensionError("n_unique and n_test must be >= 0")
        if self.noise_sigma < 0:
            raise DimensionError("noise_sigma must be >= 0")
        if self.transform == "tall_linear":
            if self.subject_dim < self.latent_dim:
                raise DimensionError("tall_linear needs subject_dim >= latent_dim")
        elif self.subject_dim != self.latent_dim:
            raise DimensionError(f"{self.transform} needs subject_dim == latent_dim")
        return self

    @property
    def n_items(self):
        return self.n_common + self.n_subjects * (self.n_unique + self.n_test)


@dataclass
class SubjectDataset:
    subject_id: str
    embeddings: np.ndarray
    item_ids: np.ndarray
    split: np.ndarray
    transform: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        if len(self.item_ids) != self.embeddings.shape[0] or len(self.split) != len(self.item_ids):
            raise DimensionError("embeddings, item_ids and split must have one entry per row")
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise DimensionError(f"subject {self.subject_id}: duplicate item ids")
        bad = set(self.split) - set(SPLITS)
        if bad:
            raise DimensionError(f"subject {self.subject_id}: unknown split tags {sorted(bad)}")

    def rows(self, tag):
        return np.flatnonzero(self.split == tag)

    def ids(self, tag):
        return self.item_ids[self.rows(tag)]

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return SubjectDataset(
            self.subject_id, self.embeddings[rows], self.item_ids[rows], self.split[rows], self.transform
        )

    def rows_for_ids(self, item_ids):
        lookup = {int(i): r for r, i in enumerate(self.item_ids)}
        try:
            return np.array([lookup[int(i)] for i in item_ids], dtype=int)
        except KeyError as exc:
            raise DimensionError(f"subject {self.subject_id} has no item {exc.args[0]}") from None


class Benchmark(NamedTuple):
    latents: np.ndarray
    targets: np.ndarray
    subjects: list
    categories: np.ndarray
    config: SynthConfig

    def subject(self, subject_id):
        for s in self.subjects:
            if s.subject_id == str(subject_id):
                return s
        raise KeyError(f"no subject {subject_id!r}")


def _random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _subject_transform(cfg, rng):
    d, D = cfg.latent_dim, cfg.subject_dim
    if cfg.transform == "orthogonal":
        return _random_orthogonal(rng, d)
    if cfg.transform == "invertible_linear":
        while True:
            A = rng.standard_normal((d, d)) / np.sqrt(d)
            if np.linalg.cond(A) <= MAX_CONDITION:
                return A
    return rng.standard_normal((D, d)) / np.sqrt(D)


def generate_benchmark(cfg):
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    latent_ss, target_ss, *subject_ss = root.spawn(2 + cfg.n_subjects)

    rng = make_rng(latent_ss)
    means = rng.standard_normal((cfg.n_categories, cfg.latent_dim))
    categories = rng.integers(0, cfg.n_categories, size=cfg.n_items)
    latents = means[categories] + 0.5 * rng.standard_normal((cfg.n_items, cfg.latent_dim))

    T = make_rng(target_ss).standard_normal((cfg.target_dim, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    targets = latents @ T.T

    per_subject = cfg.n_unique + cfg.n_test
    subjects = []
    for s, ss in enumerate(subject_ss):
        srng = make_rng(ss)
        A = _subject_transform(cfg, srng)
        start = cfg.n_common + s * per_subject
        ids = np.concatenate(
            [np.arange(cfg.n_common), np.arange(start, start + per_subject)]
        ).astype(np.int64)
        split = np.array(["common"] * cfg.n_common + ["unique"] * cfg.n_unique + ["test"] * cfg.n_test, dtype=object)
        X = latents[ids] @ A.T
        if cfg.noise_sigma > 0:
            X = X + cfg.noise_sigma * srng.standard_normal(X.shape)
        subjects.append(SubjectDataset(str(s + 1), X, ids, split, transform=A))
    return Benchmark(latents, targets, subjects, categories, cfg)


def standard_config(**overrides):
    return SynthConfig(**overrides)


def standard_benchmark():
    return generate_benchmark(standard_config())


def orthogonal_variant_config(**overrides):
    """Standard benchmark with equal-dim orthogonal transforms."""
    base = dict(transform="orthogonal", subject_dim=SynthConfig.latent_dim)
    base.update(overrides)
    return SynthConfig(**base)


PRESETS = {
    "standard": standard_config,
    "orthogonal": orthogonal_variant_config,
}


# -- directory layout -----------------------------------------------------


def write_benchmark(bench, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix(bench.latents, out / "latents.ramx")
    save_matrix(bench.targets, out / "targets.ramx")
    for s in bench.subjects:
        sd = out / f"subj_{s.subject_id}"
        sd.mkdir(exist_ok=True)
        save_matrix(s.embeddings, sd / "embeddings.ramx")
        with open(sd / "split.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item_id", "split"])
            w.writerows(zip(s.item_ids.tolist(), s.split.tolist()))
    with open(out / "categories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "category"])
        w.writerows(enumerate(bench.categories.tolist()))
    (out / "config.json").write_text(json.dumps(asdict(bench.config), indent=2, sort_keys=True) + "\n")
    return out


def read_benchmark(data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"benchmark directory not found: {root}")
    cfg = SynthConfig(**json.loads((root / "config.json").read_text()))
    latents = load_matrix(root / "latents.ramx")
    targets = load_matrix(root / "targets.ramx")
    with open(root / "categories.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    categories = np.array([int(r["category"]) for r in rows], dtype=np.int64)
    subjects = []
    for sd in sorted(root.glob("subj_*"), key=lambda p: (len(p.name), p.name)):
        with open(sd / "split.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        subjects.append(
            SubjectDataset(
                sd.name[len("subj_"):],
                load_matrix(sd / "embeddings.ramx"),
                [int(r["item_id"]) for r in rows],
                [r["split"] for r in rows],
            )
        )
    return Benchmark(latents, targets, subjects, categories, cfg)
