"""Adam, AUROC, early-stopped fold training and k-fold cross-validation."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .config import Config
from .dataio import Dataset, split_kfold
from .model import AdaFCN
from .tensorcore import Tape, Tensor, backward

logger = logging.getLogger(__name__)

METRIC_FIELDS = ["epoch", "train_loss", "ce", "div", "sparse", "val_acc", "val_auroc"]


class Adam:
    """Adam with L2 weight decay folded into the gradient (not decoupled)."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    # Mann-Whitney U from average ranks; ties contribute 1/2
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(scores, labels) -> Optional[float]:
    """AUROC in percent, or None when fewer than two classes are present.

    ``scores`` is (n,) class-1 scores or (n, c) per-class scores. Binary tasks
    use column 1; multiclass averages one-vs-rest AUROC over present classes.
    """
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=np.float64)
    present = np.unique(labels)
    if len(present) < 2:
        return None
    if scores.ndim == 1:
        return 100.0 * _binary_auc(scores, labels == 1)
    if scores.shape[1] == 2:
        return 100.0 * _binary_auc(scores[:, 1], labels == 1)
    return 100.0 * float(np.mean([_binary_auc(scores[:, c], labels == c) for c in present]))


def accuracy(probs: np.ndarray, labels) -> float:
    return 100.0 * float(np.mean(np.argmax(probs, axis=1) == np.asarray(labels)))


@dataclass
class FoldResult:
    fold: int
    test_acc: float
    test_auroc: Optional[float]
    best_epoch: int
    log: list[dict] = field(default_factory=list)
    state: dict = field(default_factory=dict, repr=False)


def _class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    return np.where(counts > 0, len(labels) / (n_classes * np.maximum(counts, 1)), 0.0)


def fold_indices(dataset: Dataset, fold: int, cfg: Config):
    if cfg.train.split == "all":
        idx = np.arange(len(dataset))
        return idx, idx, idx
    if not 0 <= fold < cfg.train.folds:
        raise ValueError(f"fold {fold} outside [0, {cfg.train.folds})")
    return split_kfold(dataset, cfg.train.folds, fold, seed=cfg.train.seed)


def model_config_for(dataset: Dataset, cfg: Config):
    mc = cfg.model
    mc.n_roi, mc.t_len, mc.n_classes = dataset.atlas_size, dataset.t_len, dataset.n_classes
    return mc


def train_fold(dataset: Dataset, fold: int, cfg: Config) -> FoldResult:
    """Train one fold with early stopping on validation AUROC; test the best checkpoint."""
    tc = cfg.train
    seed = tc.seed + fold
    train_idx, val_idx, test_idx = fold_indices(dataset, fold, cfg)
    model = AdaFCN(model_config_for(dataset, cfg), seed=seed)
    opt = Adam(model.params, lr=tc.lr, weight_decay=tc.weight_decay)
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    x_all = dataset.stack()
    cw = _class_weights(labels[train_idx], dataset.n_classes) if cfg.losses.class_weighted else None

    best_auroc = -np.inf
    best_epoch = 0
    best_state = model.state_dict()
    improved_once = False
    stale = 0
    log = []
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(train_idx)
        sums = {"train_loss": 0.0, "ce": 0.0, "div": 0.0, "sparse": 0.0}
        for start in range(0, len(order), tc.batch_size):
            batch = order[start:start + tc.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                loss, parts, _ = model.loss(x_all[batch], labels[batch], cfg.losses, cw)
            backward(tape, loss)
            opt.step()
            sums["train_loss"] += loss.item() * len(batch)
            for k, v in parts.items():
                sums[k] += v * len(batch)
        row = {"epoch": epoch, **{k: v / len(order) for k, v in sums.items()}}
        probs = model.predict_proba(x_all[val_idx])
        row["val_acc"] = accuracy(probs, labels[val_idx])
        val_auc = auroc(probs, labels[val_idx])
        row["val_auroc"] = val_auc
        log.append(row)
        if val_auc is None:
            continue
        if val_auc > best_auroc:
            best_auroc, best_epoch, stale = val_auc, epoch, 0
            best_state = model.state_dict()
            improved_once = True
        else:
            stale += 1
            if stale >= tc.patience:
                break
    if not improved_once and log:
        best_state, best_epoch = model.state_dict(), log[-1]["epoch"]

    model.load_state_dict(best_state)
    probs = model.predict_proba(x_all[test_idx])
    result = FoldResult(fold, accuracy(probs, labels[test_idx]), auroc(probs, labels[test_idx]),
                        best_epoch, log, best_state)
    logger.info("fold %d: test acc %.2f auroc %s (best epoch %d)", fold, result.test_acc,
                result.test_auroc, best_epoch)
    return result


def summarize(results: list[FoldResult]) -> dict:
    """Mean and population std of test metrics over folds."""
    acc = np.array([r.test_acc for r in results])
    aucs = np.array([r.test_auroc for r in results if r.test_auroc is not None])
    return {
        "acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
        "auroc_mean": float(aucs.mean()) if len(aucs) else None,
        "auroc_std": float(aucs.std()) if len(aucs) else None,
        "folds": results,
    }


def run_cv(dataset: Dataset, cfg: Config, workers: int = 1, folds=None) -> dict:
    """Train every fold (threaded when ``workers > 1``) and aggregate."""
    folds = list(range(cfg.train.folds)) if folds is None else list(folds)

    def one(fold):
        try:
            return train_fold(dataset, fold, cfg)
        except Exception as exc:
            raise RuntimeError(f"fold {fold} failed: {exc}") from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, folds))
    else:
        results = [one(f) for f in folds]
    return summarize(results)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for row in log:
            writer.writerow([_fmt(row[k]) for k in METRIC_FIELDS])


def write_cv_summary(path, summary: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "test_acc", "test_auroc", "best_epoch"])
        for r in summary["folds"]:
            writer.writerow([r.fold, _fmt(r.test_acc), _fmt(r.test_auroc), r.best_epoch])
        writer.writerow(["mean", _fmt(summary["acc_mean"]), _fmt(summary["auroc_mean"]), ""])
        writer.writerow(["std", _fmt(summary["acc_std"]), _fmt(summary["auroc_std"]), ""])
