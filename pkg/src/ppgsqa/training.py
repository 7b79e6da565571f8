"""Training protocol: subject-level cross-validation, then a full retrain.

Adam with coupled L2 weight decay, step learning-rate decay, softmax
cross-entropy, segments reshuffled every epoch. All randomness (weight
init, shuffling, dropout masks) comes from one SplitMix64 stream per run,
seeded ``global_seed * 1000 + fold_index``; the full retrain uses
``fold_index = folds``.
"""
from __future__ import annotations

import contextlib
import json
import math
from decimal import Decimal
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data.dataset import SegmentDataset
from .errors import EmptyDataset, EmptyFold, NonFinite, SingleClass, TooFewSubjects
from .metrics import auc
from .nn.model import ModelConfig, SignalQualityNet
from .nn.params import ParameterStore
from .rng import SplitMix64, seeded_rng

FOLD_SEED_MULTIPLIER = 1000


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    step_size: int = 20
    gamma: float = 0.1
    epochs: int = 60
    batch_size: int = 64
    global_seed: int = 0
    folds: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_weight_decay: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0 or self.step_size <= 0 or self.batch_size <= 0:
            raise ValueError("lr, step_size and batch_size must be positive; weight_decay >= 0")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.epochs < 0 or self.folds < 2:
            raise ValueError("epochs must be >= 0 and folds >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoldSplit:
    fold_index: int
    train_subjects: tuple[str, ...]
    val_subjects: tuple[str, ...]

    @property
    def seed_offset(self) -> int:
        return self.fold_index


@dataclass
class TrainState:
    store: ParameterStore
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    lr: float = 0.0
    rng: SplitMix64 | None = None

    @classmethod
    def fresh(cls, store: ParameterStore, lr: float, rng=None) -> "TrainState":
        m = {n: np.zeros_like(p) for n, p in store.params.items()}
        v = {n: np.zeros_like(p) for n, p in store.params.items()}
        return cls(store, m, v, 0, 0, lr, rng)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float | None = None
    val_auc: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class FoldResult:
    split: FoldSplit
    store: ParameterStore
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final_val_auc(self) -> float | None:
        return self.history[-1].val_auc if self.history else None


# -- pieces ------------------------------------------------------------------

def cross_entropy_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    B = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    total = expd.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    loss = float(-log_probs[np.arange(B), labels].mean())
    grad = expd / total
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    if not math.isfinite(loss):
        raise NonFinite("cross-entropy overflow")
    return loss, grad


def softmax_good(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 1] / e.sum(axis=1)


def step_lr(epoch: int, config: TrainConfig = TrainConfig()) -> float:
    # decimal arithmetic so 1e-4 * 0.1**2 comes out as the float nearest 1e-6
    k = epoch // config.step_size
    return float(Decimal(repr(config.lr)) * Decimal(repr(config.gamma)) ** k)


def adam_step(state: TrainState, config: TrainConfig, grads: dict | None = None) -> TrainState:
    """One bias-corrected Adam update in place; weight decay is added to the
    gradient (coupled L2) unless ``decoupled_weight_decay`` is set."""
    store = state.store
    grads = store.grads if grads is None else grads
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    lr = state.lr
    wd = config.weight_decay
    for name, p in store.params.items():
        g = grads[name]
        if wd and not config.decoupled_weight_decay:
            g = g + wd * p
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if wd and config.decoupled_weight_decay:
            p *= 1.0 - lr * wd
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return state


def split_subjects(subjects: Sequence[str], folds: int = 5, global_seed: int = 0) -> list[FoldSplit]:
    """Shuffle once with ``seeded_rng(global_seed)`` and deal round-robin."""
    subjects = list(subjects)
    if len(subjects) < folds:
        raise TooFewSubjects(f"{len(subjects)} subjects cannot fill {folds} folds")
    if len(set(subjects)) != len(subjects):
        raise ValueError("duplicate subject ids")
    perm = seeded_rng(global_seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in perm]
    splits = []
    for f in range(folds):
        val = tuple(shuffled[f::folds])
        held = set(val)
        train = tuple(s for s in shuffled if s not in held)
        splits.append(FoldSplit(f, train, val))
    return splits


def fold_seed(global_seed: int, fold_index: int) -> int:
    return global_seed * FOLD_SEED_MULTIPLIER + fold_index


@contextlib.contextmanager
def deterministic_mode(enabled: bool = True):
    """Pin BLAS to one thread so reductions keep a fixed order."""
    if not enabled:
        yield
        return
    with threadpool_limits(limits=1):
        yield


# -- loops -------------------------------------------------------------------

def predict_logits(store: ParameterStore, config: ModelConfig, X, batch_size: int = 256):
    net = SignalQualityNet(config, store)
    out = [net.forward(X[i:i + batch_size], training=False) for i in range(0, len(X), batch_size)]
    if not out:
        return np.zeros((0, config.num_classes), dtype=store.dtype)
    return np.concatenate(out)


def evaluate(store: ParameterStore, config: ModelConfig, ds: SegmentDataset) -> tuple[float, float | None]:
    logits = predict_logits(store, config, ds.X)
    loss, _ = cross_entropy_loss(logits.astype(np.float64), ds.y)
    try:
        score = auc(softmax_good(logits), ds.y)
    except SingleClass:
        score = None
    return loss, score


def train_model(train_ds: SegmentDataset, model_config: ModelConfig, train_config: TrainConfig,
                seed: int, val_ds: SegmentDataset | None = None,
                on_epoch: Callable[[EpochRecord], None] | None = None,
                deterministic: bool = True) -> tuple[ParameterStore, list[EpochRecord]]:
    """Core loop shared by fold training and the full retrain."""
    if len(train_ds) == 0:
        raise EmptyDataset("no training segments")
    if train_ds.X.shape[1] != model_config.in_channels:
        raise ValueError(f"dataset has {train_ds.X.shape[1]} channels, model expects "
                         f"{model_config.in_channels}")
    rng = seeded_rng(seed)
    net = SignalQualityNet.initialize(model_config, rng, np.float32)
    state = TrainState.fresh(net.store, train_config.lr, rng)
    history = []
    X, y = train_ds.X, train_ds.y
    n = len(train_ds)
    bs = train_config.batch_size
    with deterministic_mode(deterministic):
        for epoch in range(train_config.epochs):
            state.epoch = epoch
            state.lr = step_lr(epoch, train_config)
            net.store.train()
            perm = rng.permutation(n)
            total = 0.0
            for b in range(0, n, bs):
                idx = perm[b:b + bs]
                logits = net.forward(X[idx], training=True, rng=rng)
                loss, grad = cross_entropy_loss(logits, y[idx])
                net.backward(grad)
                adam_step(state, train_config)
                total += loss * idx.size
            net.store.eval()
            rec = EpochRecord(epoch, state.lr, total / n)
            if val_ds is not None and len(val_ds):
                rec.val_loss, rec.val_auc = evaluate(net.store, model_config, val_ds)
            history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
    net.store.eval()
    return net.store, history


def train_fold(dataset: SegmentDataset, split: FoldSplit, model_config: ModelConfig,
               train_config: TrainConfig, on_epoch=None, deterministic: bool = True) -> FoldResult:
    train_ds = dataset.subset(split.train_subjects)
    val_ds = dataset.subset(split.val_subjects)
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise EmptyFold(f"fold {split.fold_index} has no training or validation segments")
    store, history = train_model(train_ds, model_config, train_config,
                                 fold_seed(train_config.global_seed, split.fold_index),
                                 val_ds, on_epoch, deterministic)
    return FoldResult(split, store, history)


def train_full(dataset: SegmentDataset, model_config: ModelConfig, train_config: TrainConfig,
               on_epoch=None, deterministic: bool = True) -> tuple[ParameterStore, list[EpochRecord]]:
    if len(dataset) == 0:
        raise EmptyDataset("no segments to train on")
    return train_model(dataset, model_config, train_config,
                       fold_seed(train_config.global_seed, train_config.folds),
                       None, on_epoch, deterministic)


def cross_validate(dataset: SegmentDataset, model_config: ModelConfig, train_config: TrainConfig,
                   on_epoch=None, deterministic: bool = True) -> list[FoldResult]:
    splits = split_subjects(dataset.subject_ids(), train_config.folds, train_config.global_seed)
    results = []
    for split in splits:
        cb = None if on_epoch is None else (lambda rec, f=split.fold_index: on_epoch(f, rec))
        results.append(train_fold(dataset, split, model_config, train_config, cb, deterministic))
    return results


def cv_summary(results: Sequence[FoldResult]) -> dict:
    aucs = [r.final_val_auc for r in results]
    valid = [a for a in aucs if a is not None]
    return {
        "folds": len(results),
        "fold_val_auc": aucs,
        "mean_val_auc": float(np.mean(valid)) if valid else None,
        "std_val_auc": float(np.std(valid)) if valid else None,
        "val_subjects": [list(r.split.val_subjects) for r in results],
    }
