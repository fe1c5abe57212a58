"""Classification, band-diversity and cross-band sparsity losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .connectivity import cross_blocks
from .tensorcore import Tensor, as_tensor, log_softmax

COS_EPS = 1e-8


@dataclass
class LossWeights:
    lambda1: float = 0.1    # diversity
    lambda2: float = 0.001  # sparsity

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError(f"loss weights must be >= 0, got {self.lambda1}, {self.lambda2}")


def cross_entropy(logits: Tensor, labels, class_weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-softmax at the true label. ``logits`` is (c,) or (B, c)."""
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = logits.reshape((1, logits.shape[0]))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    c = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {logits.shape[0]} rows of logits")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range for {c} classes: {labels.tolist()}")
    onehot = np.eye(c)[labels]
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=np.float64)[labels]
        onehot = onehot * (w / w.sum() * len(labels))[:, None]
    return -(log_softmax(logits) * onehot).sum() * (1.0 / len(labels))


def diversity_loss(bands: Tensor) -> Tensor:
    """Average pairwise cosine similarity between distinct band embeddings.

    ``bands`` is (P, d) or (B, P, d); batches are averaged.
    """
    bands = as_tensor(bands)
    P = bands.shape[-2]
    if P < 2:
        raise ValueError("diversity loss needs at least two bands")
    norms = ((bands * bands).sum(axis=-1, keepdims=True) + COS_EPS ** 2) ** 0.5
    unit = bands / norms
    cos = unit @ unit.mT
    off = 1.0 - np.eye(P)
    per_graph = (cos * off).sum(axis=(-2, -1)) * (1.0 / (P * (P - 1)))
    return per_graph.mean()


def sparsity_from_blocks(blocks: Tensor) -> Tensor:
    """Mean over ordered band pairs of the per-entry L1 norm of each cross block.

    ``blocks`` is the (..., P, P, N, N) grid from :func:`connectivity.cross_blocks`,
    whose diagonal blocks are zero and excluded from the average.
    """
    P, N = blocks.shape[-4], blocks.shape[-1]
    total = blocks.abs().sum(axis=(-4, -3, -2, -1)) * (1.0 / (P * (P - 1) * N * N))
    return total.mean()


def sparsity_loss(cross_params, corr) -> Tensor:
    """Sparsity penalty computed directly from correlations and projections."""
    return sparsity_from_blocks(cross_blocks(corr, cross_params))


def total_loss(ce, div, sparse, weights: LossWeights):
    """ce + lambda1 * div + lambda2 * sparse."""
    return ce + weights.lambda1 * div + weights.lambda2 * sparse
