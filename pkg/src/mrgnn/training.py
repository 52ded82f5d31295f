"""Splits, Adam training loop with early stopping, and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import GraphCache, LabeledPairDataset
from .layers import GraphBatch
from .metrics import MetricsReport, binary_report, multiclass_report
from .model import MrGnnModel, forward_pair

__all__ = [
    "SPLIT_MODES",
    "SplitSpec",
    "TrainConfig",
    "AdamState",
    "adam_step",
    "PairSample",
    "prepare",
    "split_dataset",
    "train",
    "evaluate",
    "predict_proba",
    "TrainResult",
    "NumericFailure",
]

log = logging.getLogger(__name__)

SPLIT_MODES = ("ratio_9_1_with_fifth_val", "fractions_60_20_20", "custom")


class NumericFailure(ArithmeticError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    mode: str = "ratio_9_1_with_fifth_val"
    seed: int = 0
    fractions: tuple[float, float, float] | None = None  # (train, val, test), custom mode only

    def resolved_fractions(self) -> tuple[float, float, float]:
        if self.mode == "fractions_60_20_20":
            return (0.6, 0.2, 0.2)
        if self.mode == "custom":
            if self.fractions is None:
                raise ValueError("custom split needs fractions")
            fr = tuple(float(x) for x in self.fractions)
            if len(fr) != 3 or any(x < 0 for x in fr) or fr[0] <= 0 or abs(sum(fr) - 1.0) > 1e-9:
                raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fr}")
            return fr  # type: ignore[return-value]
        raise ValueError(f"mode {self.mode!r} has no fixed fractions")


def split_dataset(data: LabeledPairDataset, spec: SplitSpec) -> tuple[LabeledPairDataset, LabeledPairDataset, LabeledPairDataset]:
    """Seeded shuffle into disjoint (train, val, test) subsets covering ``data``.

    The 9:1 mode holds out ``floor(q/10)`` for test, then moves
    ``floor(rest/5)`` of the remaining training pairs to validation.
    """
    q = len(data)
    if spec.mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {spec.mode!r}")
    if q < 10:
        raise ValueError(f"dataset of {q} pairs is too small to split (need at least 10)")
    perm = np.random.default_rng(spec.seed).permutation(q)
    if spec.mode == "ratio_9_1_with_fifth_val":
        n_test = q // 10
        n_val = (q - n_test) // 5
    else:
        _, f_val, f_test = spec.resolved_fractions()
        n_test = int(math.floor(q * f_test))
        n_val = int(math.floor(q * f_val))
    n_train = q - n_test - n_val
    if n_train < 1 or (n_test < 1 and spec.mode != "custom"):
        raise ValueError(f"dataset of {q} pairs leaves an empty split")
    test = perm[:n_test]
    val = perm[n_test : n_test + n_val]
    train_idx = perm[n_test + n_val :]
    return data.subset(train_idx.tolist()), data.subset(val.tolist()), data.subset(test.tolist())


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def adam_step(model: MrGnnModel, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update; parameters without a gradient are left alone."""
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        p = model.params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.steps[name] = 0
        m, v = state.m[name], state.v[name]
        state.steps[name] += 1
        t = state.steps[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


@dataclass(frozen=True)
class PairSample:
    batch: GraphBatch
    label: int


def prepare(data: LabeledPairDataset, graphs: GraphCache, d_max: int) -> list[PairSample]:
    return [
        PairSample(GraphBatch.from_graphs([graphs(r.smiles_a), graphs(r.smiles_b)], d_max), r.label)
        for r in data.records
    ]


def _one_hot(label: int, k: int) -> np.ndarray:
    y = np.zeros((1, k))
    y[0, label] = 1.0
    return y


def sample_loss_and_grads(model: MrGnnModel, sample: PairSample) -> tuple[float, dict[str, np.ndarray]]:
    with ad.Tape() as tape:
        trace = forward_pair(model, sample.batch)
        loss = ad.cross_entropy(trace.probs, _one_hot(sample.label, model.config.k))
    return loss.item(), ad.backward(tape, loss, model.params)


def predict_proba(model: MrGnnModel, samples: Sequence[PairSample]) -> np.ndarray:
    if not samples:
        return np.zeros((0, model.config.k))
    return np.vstack([forward_pair(model, s.batch).R for s in samples])


def evaluate(model: MrGnnModel, samples: Sequence[PairSample]) -> MetricsReport:
    """Metrics and mean cross-entropy; parameters are only read."""
    probs = predict_proba(model, samples)
    labels = np.array([s.label for s in samples], dtype=np.intp)
    k = model.config.k
    report = binary_report(probs, labels) if k == 2 else multiclass_report(probs, labels, k)
    p_true = np.clip(probs[np.arange(len(labels)), labels], ad.PROB_FLOOR, 1.0)
    report.loss = float(-np.log(p_true).mean())
    return report


@dataclass
class TrainResult:
    history: list[dict]
    best_epoch: int
    optimizer: AdamState


EpochCallback = Callable[[dict], None]


def train(
    model: MrGnnModel,
    train_samples: Sequence[PairSample],
    cfg: TrainConfig,
    val_samples: Sequence[PairSample] | None = None,
    on_epoch: EpochCallback | None = None,
    optimizer: AdamState | None = None,
    start_epoch: int = 0,
) -> TrainResult:
    """Minibatch Adam on per-pair cross-entropy.

    Each pair is a separate forward/backward pass; gradients are summed in
    sample order and divided by the batch size before the update.  With a
    validation set, training stops after ``cfg.patience`` epochs without a
    new best validation loss and the best parameters are restored.
    """
    k = model.config.k
    for i, s in enumerate(train_samples):
        if not 0 <= s.label < k:
            raise ValueError(f"sample {i} has label {s.label} but the model predicts {k} labels")
    state = optimizer or AdamState()
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []
    best_loss = math.inf
    best_epoch = start_epoch
    best_params = model.params.snapshot() if val_samples else None
    stale = 0

    for epoch in range(start_epoch, cfg.epochs):
        order = rng.permutation(len(train_samples))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            acc: dict[str, np.ndarray] = {}
            for i in idx:
                loss, grads = sample_loss_and_grads(model, train_samples[i])
                if not math.isfinite(loss):
                    raise NumericFailure(f"non-finite loss {loss} at training sample {int(i)} (epoch {epoch})")
                losses.append(loss)
                for name, g in grads.items():
                    if name in acc:
                        acc[name] += g
                    else:
                        acc[name] = g.copy()
            for g in acc.values():
                g /= len(idx)
            adam_step(model, acc, state, cfg)

        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else float("nan")}
        if val_samples:
            report = evaluate(model, val_samples)
            entry["val_loss"] = report.loss
            entry["val_metrics"] = {key: float(v) for key, v in sorted(report.values.items())}
            if report.loss < best_loss:
                best_loss, best_epoch, stale = report.loss, epoch, 0
                best_params = model.params.snapshot()
            else:
                stale += 1
        else:
            best_epoch = epoch
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
        log.info("epoch %d %s", epoch, json.dumps(entry, sort_keys=True))
        if val_samples and stale >= cfg.patience:
            break

    if val_samples and best_params is not None:
        model.params.load(best_params)
    return TrainResult(history, best_epoch, state)
