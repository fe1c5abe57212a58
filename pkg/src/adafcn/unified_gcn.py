"""Unified multiplex adjacency and symmetric-normalized graph convolution."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensorcore import Tensor, as_tensor, relu

DEGREE_EPS = 1e-6


@dataclass
class UnifiedGraph:
    a_unified: Tensor  # (..., P*N, P*N)
    h0: Tensor         # (..., P*N, N)


@dataclass
class GcnParams:
    weights: list[Tensor]

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]


def init_gcn(dims, seed: int = 0) -> GcnParams:
    """Glorot-uniform weights for layer sizes ``dims = [N, d1, ..., d_out]``."""
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
    return GcnParams(weights)


def build_unified(intra, cross: Optional[Tensor], lam) -> Tensor:
    """intra + lam * cross; ``cross=None`` means no cross-band edges."""
    intra = as_tensor(intra)
    if cross is None:
        return intra
    if cross.shape[-2:] != intra.shape[-2:]:
        raise ValueError(f"intra {intra.shape} and cross {cross.shape} differ")
    return intra + as_tensor(lam) * cross


def build_h0(corr) -> Tensor:
    """Stack the per-band correlation matrices (..., P, N, N) into (..., P*N, N) node features."""
    corr = as_tensor(corr)
    P, N = corr.shape[-3], corr.shape[-1]
    return corr.reshape(corr.shape[:-3] + (P * N, N))


def normalize_adjacency(a) -> Tensor:
    """D^-1/2 A D^-1/2 with D_ii = sum_j |A_ij| + eps.

    Absolute row sums keep the degree positive when A carries negative
    correlations or negative learned coupling.
    """
    a = as_tensor(a)
    deg = a.abs().sum(axis=-1) + DEGREE_EPS
    inv_sqrt = deg ** -0.5
    lead = inv_sqrt.shape
    return a * inv_sqrt.reshape(lead + (1,)) * inv_sqrt.reshape(lead[:-1] + (1, lead[-1]))


def gcn_forward(graph: UnifiedGraph, params: GcnParams, final_activation: bool = False) -> Tensor:
    """Stacked layers H <- relu(A_hat H W); the last layer is linear unless ``final_activation``."""
    h = graph.h0
    if h.shape[-1] != params.dims[0]:
        raise ValueError(f"first GCN layer expects {params.dims[0]} features, H0 has {h.shape[-1]}")
    a_hat = normalize_adjacency(graph.a_unified)
    last = len(params.weights) - 1
    for i, w in enumerate(params.weights):
        h = a_hat @ (h @ w)
        if i < last or final_activation:
            h = relu(h)
    return h
