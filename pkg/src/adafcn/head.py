"""Per-band mean readout and MLP classifier."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, relu


@dataclass
class HeadParams:
    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"mlp_w{i}"] = w
            out[f"mlp_b{i}"] = b
        return out


def init_head(in_dim: int, n_classes: int, hidden: int = 128, seed: int = 0) -> HeadParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases. ``hidden=0`` gives a single linear layer."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, hidden, n_classes] if hidden else [in_dim, n_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return HeadParams(weights, biases)


def readout(z: Tensor, n_bands: int) -> Tensor:
    """Mean over the N nodes of each band block: (..., P*N, d) -> (..., P, d)."""
    M, d = z.shape[-2:]
    if M % n_bands:
        raise ValueError(f"{M} nodes do not split into {n_bands} bands")
    return z.reshape(z.shape[:-2] + (n_bands, M // n_bands, d)).mean(axis=-2)


def classify(bands: Tensor, params: HeadParams) -> Tensor:
    """Concatenate band embeddings in stack order and map them to class logits."""
    single = bands.ndim == 2
    h = bands.reshape((-1, bands.shape[-2] * bands.shape[-1]))
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = relu(h)
    return h.reshape((h.shape[-1],)) if single else h
