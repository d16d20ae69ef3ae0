"""Full-batch Adam training for the reference subject and for new subjects.

Fine-tuning modes:

``baseline``       fresh adapter, mapper copied from the reference, output MSE only
``aamax``          adapter-only alignment to the reference common space, then
                   end-to-end with output MSE + lambda3 * adapter MSE on commons
``step1_only``     the alignment stage alone; mapper returned untouched
``frozen_mapper``  fresh adapter, combined loss, mapper never updated
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimensionError, TrainingError
from ..synth import make_rng
from .models import AdapterModel, MapperModel, loss_and_gradients, mse_loss, predict

MODES = ("baseline", "aamax", "step1_only", "frozen_mapper")
TRACE_HEADER = ("epoch", "total_loss", "output_mse", "adapter_mse")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 1e-2
    lambda3: float = 1.0
    stage1_epochs: int = 2000
    stage1_learning_rate: float = 1e-2
    stage1_tolerance: float = 1e-6
    seed: int = 0
    mode: str = "aamax"
    adapter_kind: str = "linear_gelu"
    common_dim: int = 32
    hidden_dim: int = 64
    adapter_hidden_dim: int | None = None

    def validate(self):
        if self.mode not in MODES:
            raise DimensionError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.epochs < 0 or self.stage1_epochs < 0:
            raise DimensionError("epoch counts must be >= 0")
        if not (self.learning_rate > 0 and self.stage1_learning_rate > 0):
            raise DimensionError("learning rates must be positive")
        if self.lambda3 < 0:
            raise DimensionError("lambda3 must be >= 0")
        return self

    def to_dict(self):
        d = asdict(self)
        if math.isinf(d["stage1_tolerance"]):
            d["stage1_tolerance"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stage1_tolerance" in d:
            d["stage1_tolerance"] = float(d["stage1_tolerance"])
        return cls(**d)


@dataclass
class TraceRecord:
    epoch: int
    total_loss: float
    output_mse: float
    adapter_mse: float
    stage: str = "end_to_end"
    elapsed: float = 0.0


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def append(self, record):
        self.records.append(record)

    def extend(self, other):
        self.records.extend(other.records)

    @property
    def final(self):
        return self.records[-1] if self.records else None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([r.epoch, repr(r.total_loss), repr(r.output_mse), repr(r.adapter_mse)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [
                TraceRecord(int(r["epoch"]), float(r["total_loss"]), float(r["output_mse"]), float(r["adapter_mse"]))
                for r in rows
            ]
        )


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return params


def _split_params(flat):
    ad = {k[len("adapter."):]: v for k, v in flat.items() if k.startswith("adapter.")}
    mp = {k[len("mapper."):]: v for k, v in flat.items() if k.startswith("mapper.")}
    return ad, mp


def _run(adapter, mapper, X, T_out, T_adapter, common_idx, lambda3, epochs, lr,
         train_mapper, stage, start_epoch=0, tolerance=None):
    """Shared optimisation loop; returns updated models and the trace."""
    params = {f"adapter.{k}": v.copy() for k, v in adapter.params().items()}
    if mapper is not None and train_mapper:
        params.update({f"mapper.{k}": v.copy() for k, v in mapper.params().items()})
    opt = Adam(params, lr)
    trace = TrainTrace()
    t0 = time.perf_counter()
    cur_a, cur_m = adapter, mapper
    loss, grads = loss_and_gradients(cur_a, cur_m, X, T_out, T_adapter, lambda3, common_idx)
    if tolerance is not None and loss.total <= tolerance:
        return cur_a, cur_m, trace
    for e in range(1, epochs + 1):
        if not math.isfinite(loss.total):
            raise TrainingError(f"loss diverged at epoch {start_epoch + e - 1}", epoch=start_epoch + e - 1)
        opt.step(params, grads)
        ad, mp = _split_params(params)
        cur_a = cur_a.with_params(ad)
        if mp:
            cur_m = cur_m.with_params(mp)
        loss, grads = loss_and_gradients(cur_a, cur_m, X, T_out, T_adapter, lambda3, common_idx)
        if not math.isfinite(loss.total):
            raise TrainingError(f"loss diverged at epoch {start_epoch + e}", epoch=start_epoch + e)
        trace.append(TraceRecord(start_epoch + e, loss.total, loss.output_mse, loss.adapter_mse,
                                 stage, time.perf_counter() - t0))
        if tolerance is not None and loss.total <= tolerance:
            break
    return cur_a, cur_m, trace


def _train_rows(subject):
    rows = np.flatnonzero(subject.split != "test")
    if rows.size == 0:
        raise DimensionError(f"subject {subject.subject_id} has no training items")
    return rows


def init_models(cfg, in_dim, target_dim):
    rng = make_rng(np.random.SeedSequence(cfg.seed))
    adapter = AdapterModel.init(cfg.adapter_kind, in_dim, cfg.common_dim, rng, cfg.adapter_hidden_dim)
    mapper = MapperModel.init(cfg.common_dim, cfg.hidden_dim, target_dim, rng)
    return adapter, mapper


def init_adapter(cfg, in_dim):
    rng = make_rng(np.random.SeedSequence(cfg.seed))
    return AdapterModel.init(cfg.adapter_kind, in_dim, cfg.common_dim, rng, cfg.adapter_hidden_dim)


def train_reference(subject, targets, cfg, adapter=None, mapper=None):
    """End-to-end output-MSE training of adapter and mapper on non-test items.

    ``targets`` is row-matched to ``subject.embeddings``.
    """
    cfg.validate()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] != subject.embeddings.shape[0]:
        raise DimensionError("targets must be row-matched to the subject's items")
    rows = _train_rows(subject)
    if adapter is None or mapper is None:
        a0, m0 = init_models(cfg, subject.embeddings.shape[1], targets.shape[1])
        adapter = adapter or a0
        mapper = mapper or m0
    a, m, trace = _run(adapter, mapper, subject.embeddings[rows], targets[rows], None, None,
                       0.0, cfg.epochs, cfg.learning_rate, True, "reference")
    return a, m, trace


def align_adapter_stage1(new_subject, reference_common, cfg, adapter=None):
    """Fit the adapter alone so its common-item outputs match the reference's.

    ``reference_common`` is row-matched to ``new_subject.rows("common")``.
    Stops after ``cfg.stage1_epochs`` or once the adapter MSE drops to
    ``cfg.stage1_tolerance`` (checked before the first update as well).
    """
    cfg.validate()
    rows = new_subject.rows("common")
    if rows.size == 0:
        raise DimensionError(f"subject {new_subject.subject_id} has no common items for alignment")
    reference_common = np.asarray(reference_common, dtype=np.float64)
    if reference_common.shape[0] != rows.size:
        raise DimensionError(
            f"reference outputs have {reference_common.shape[0]} rows, subject has {rows.size} common items"
        )
    if adapter is None:
        adapter = init_adapter(cfg, new_subject.embeddings.shape[1])
    a, _, trace = _run(adapter, None, new_subject.embeddings[rows], None, reference_common, None,
                       1.0, cfg.stage1_epochs, cfg.stage1_learning_rate, False, "stage1",
                       tolerance=cfg.stage1_tolerance)
    return a, trace


def finetune(new_subject, targets, ref_mapper, cfg, reference_common=None):
    """Fine-tune a new subject in one of the four modes.

    ``targets`` is row-matched to ``new_subject.embeddings``;
    ``reference_common`` (reference adapter outputs on this subject's common
    rows, in row order) is required by every mode except ``baseline``, where
    it is only used to report the adapter-level MSE.
    """
    cfg.validate()
    targets = np.asarray(targets, dtype=np.float64)
    rows = _train_rows(new_subject)
    common_rows = new_subject.rows("common")
    # positions of the common rows inside the training block
    common_idx = np.searchsorted(rows, common_rows)
    if cfg.mode != "baseline" and reference_common is None:
        raise DimensionError(f"mode {cfg.mode} needs reference common-space outputs")
    X, T = new_subject.embeddings[rows], targets[rows]
    adapter = init_adapter(cfg, X.shape[1])
    mapper = ref_mapper.copy()

    if cfg.mode == "baseline":
        # lambda3 = 0: the adapter MSE is traced for diagnostics but never optimised
        a, m, trace = _run(adapter, mapper, X, T, reference_common, common_idx, 0.0, cfg.epochs,
                           cfg.learning_rate, True, "end_to_end")
        return a, m, trace

    trace = TrainTrace()
    if cfg.mode in ("aamax", "step1_only"):
        adapter, trace = align_adapter_stage1(new_subject, reference_common, cfg, adapter)
        if cfg.mode == "step1_only":
            return adapter, ref_mapper, trace
    train_mapper = cfg.mode == "aamax"
    a, m, t2 = _run(adapter, mapper, X, T, reference_common, common_idx, cfg.lambda3, cfg.epochs,
                    cfg.learning_rate, train_mapper, "end_to_end", start_epoch=len(trace))
    trace.extend(t2)
    if not train_mapper:
        m = ref_mapper
    return a, m, trace


def evaluate(adapter, mapper, X, T):
    return mse_loss(predict(adapter, mapper, X), T)


def write_trace(trace, path):
    trace.to_csv(Path(path))
