"""Training loop for one architecture: augmentation, mini-batches, early stop."""
from __future__ import annotations

import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .builder import STREAMS, ArchitectureGraph
from .dataset import WindowSet
from .nn import ModelWeights, forward, init_weights, predict_proba
from .optim import make_optimizer, optimizer_step, lr_schedule
from .signal import AugmentRanges, FeatureSet, augment_batch, compute_features
from .skeleton import SkeletonGraph, load_skeleton
from .stats import roc_auc

# named substreams of a student's seed
SUB_INIT, SUB_SHUFFLE, SUB_AUGMENT, SUB_DROPOUT = 0, 1, 2, 3


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainBudget:
    epochs: int = 50
    warmup_epochs: int = 10
    early_stop_epoch: int | None = 6
    early_stop_below: float = 0.5
    halving_epochs: tuple[int, ...] = ()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warm-up must not exceed the epoch budget")
        if any(not 1 <= h < self.epochs for h in self.halving_epochs):
            raise ValueError("halving epochs must fall inside the budget")

    @classmethod
    def student(cls) -> "TrainBudget":
        return cls(epochs=50, warmup_epochs=10, early_stop_epoch=6)

    @classmethod
    def final(cls) -> "TrainBudget":
        return cls(epochs=300, warmup_epochs=10, early_stop_epoch=None, halving_epochs=(200, 250))

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "warmup_epochs": self.warmup_epochs,
                "early_stop_epoch": self.early_stop_epoch, "early_stop_below": self.early_stop_below,
                "halving_epochs": list(self.halving_epochs)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainBudget":
        return cls(int(d["epochs"]), int(d["warmup_epochs"]),
                   None if d.get("early_stop_epoch") is None else int(d["early_stop_epoch"]),
                   float(d.get("early_stop_below", 0.5)), tuple(int(h) for h in d.get("halving_epochs", ())))


@dataclass
class TrainReport:
    losses: list[float]
    val_aucs: list[float]
    val_losses: list[float]
    best_auc: float
    best_epoch: int
    early_stopped: bool
    seconds: float
    weights: ModelWeights | None = field(default=None, repr=False)

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def to_dict(self, timing: bool = False) -> dict:
        d = {"epochs_run": self.epochs_run, "losses": self.losses, "val_aucs": self.val_aucs,
             "val_losses": self.val_losses, "best_auc": self.best_auc, "best_epoch": self.best_epoch,
             "early_stopped": self.early_stopped}
        if timing:
            d["seconds"] = self.seconds
        return d


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights scaled so the majority class gets 1."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=2).astype(float)
    if (counts == 0).any():
        raise ValueError("both classes must be present to weight them")
    return counts.max() / counts


def _rng(seed, sub: int) -> np.random.Generator:
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return np.random.default_rng(base + [sub])


def features_f32(frames: np.ndarray, skel: SkeletonGraph) -> dict[str, np.ndarray]:
    fs = compute_features(frames, skel)
    return {k: np.ascontiguousarray(getattr(fs, k), dtype=np.float32) for k in STREAMS}


def evaluate_auc(graph: ArchitectureGraph, weights: ModelWeights, feats, labels) -> tuple[float, np.ndarray]:
    scores = predict_proba(graph, weights, feats)
    if not np.isfinite(scores).all():
        return 0.0, scores
    return roc_auc(scores, labels), scores


def log_loss(scores: np.ndarray, labels) -> float:
    """Unweighted binary cross-entropy of positive-class probabilities."""
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-12, 1 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def train_student(graph: ArchitectureGraph, train: WindowSet, val: WindowSet, hyper: dict,
                  budget: TrainBudget = TrainBudget.student(), seed: int | Sequence[int] = 1234,
                  skeleton: SkeletonGraph | None = None, augment: bool = True,
                  weighted: bool = True, val_features: dict | None = None,
                  ranges: AugmentRanges = AugmentRanges()) -> TrainReport:
    """Train from scratch and report per-epoch loss and validation AUC.

    ``hyper`` carries optimizer, lr, weight_decay, momentum and batch_size.
    The returned weights are those of the epoch with the best validation AUC;
    among epochs tied on AUC the lowest validation log-loss wins, so a
    saturated AUC does not freeze the weights at the first perfect epoch.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(set(np.asarray(val.labels).tolist())) < 2:
        raise ValueError("validation set needs both classes for AUC")
    skel = load_skeleton() if skeleton is None else skeleton
    t0 = time.perf_counter()
    weights = init_weights(graph, rng=_rng(seed, SUB_INIT))
    weights.seed = list(seed) if isinstance(seed, (list, tuple)) else int(seed)
    opt = make_optimizer(hyper["optimizer"], hyper["lr"], hyper.get("weight_decay", 0.0),
                         hyper.get("momentum", 0.9))
    cw = class_weights(train.labels) if weighted else None
    shuffle_rng = _rng(seed, SUB_SHUFFLE)
    aug_rng = _rng(seed, SUB_AUGMENT)
    drop_rng = _rng(seed, SUB_DROPOUT)
    if val_features is None:
        val_features = features_f32(val.frames, skel)
    static = None if augment else features_f32(train.frames, skel)
    bs = int(hyper.get("batch_size", 32))
    n = len(train)
    labels = np.asarray(train.labels, dtype=int)

    losses, aucs, val_losses = [], [], []
    best_auc, best_loss, best_epoch, best_w = -1.0, np.inf, 0, None
    early = False
    for epoch in range(1, budget.epochs + 1):
        lr = lr_schedule(budget, hyper["lr"], epoch)
        if augment:
            feats = features_f32(augment_batch(train.frames, aug_rng, ranges), skel)
        else:
            feats = static
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = order[lo: lo + bs]
            batch = {k: feats[k][idx] for k in STREAMS}
            params = weights.tensors(requires_grad=True)
            logits = forward(graph, weights, batch, "train", rng=drop_rng, params=params)
            loss = ad.cross_entropy(logits, labels[idx], cw)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, value)
            loss.backward()
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            optimizer_step(opt, weights.params, grads, lr=lr)
            total += value * len(idx)
        losses.append(total / n)
        auc, scores = evaluate_auc(graph, weights, val_features, val.labels)
        vloss = log_loss(scores, val.labels) if np.isfinite(scores).all() else np.inf
        aucs.append(auc)
        val_losses.append(vloss if np.isfinite(vloss) else None)
        if auc > best_auc or (auc == best_auc and vloss < best_loss):
            best_auc, best_loss, best_epoch, best_w = auc, vloss, epoch, weights.copy()
        if budget.early_stop_epoch is not None and epoch == budget.early_stop_epoch \
                and auc < budget.early_stop_below:
            early = True
            break
    return TrainReport(losses, aucs, val_losses, best_auc, best_epoch, early, time.perf_counter() - t0, best_w)
