"""Adaptive cascade decomposer: learnable low/high sub-band pairs per level."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, conv1d, leaky_relu, stack


@dataclass
class DecomposerParams:
    low: list[Tensor]   # one shared kernel per level
    high: list[Tensor]
    leaky_slope: float = 0.01

    @property
    def levels(self) -> int:
        return len(self.low)

    def tensors(self) -> dict[str, Tensor]:
        out = {f"low_{k}": w for k, w in enumerate(self.low)}
        out.update({f"high_{k}": w for k, w in enumerate(self.high)})
        return out


def band_names(K: int) -> list[str]:
    """Band labels in stack order: L1, H1, L2, H2, ..."""
    return [f"{kind}{k}" for k in range(1, K + 1) for kind in ("L", "H")]


def init_decomposer(K: int, w_low: int = 5, w_high: int = 3, seed: int = 0,
                    noise: float = 0.01, leaky_slope: float = 0.01) -> DecomposerParams:
    """Box-filter low kernels and identity high kernels, each jittered by ``noise``."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if w_low % 2 == 0 or w_high % 2 == 0:
        raise ValueError(f"kernel widths must be odd, got w_low={w_low}, w_high={w_high}")
    rng = np.random.default_rng(seed)
    box = np.full(w_low, 1.0 / w_low)
    ident = np.zeros(w_high)
    ident[w_high // 2] = 1.0
    low = [Tensor(box + noise * rng.standard_normal(w_low), requires_grad=True) for _ in range(K)]
    high = [Tensor(ident + noise * rng.standard_normal(w_high), requires_grad=True) for _ in range(K)]
    return DecomposerParams(low, high, leaky_slope)


def decompose(x, params: DecomposerParams) -> Tensor:
    """Split ``x`` of shape (..., N, T) into a (..., 2K, N, T) stack [L1, H1, ..., LK, HK].

    Level k smooths the previous approximation with the shared low kernel at
    dilation 2**(k-1) followed by LeakyReLU; the high band filters what the
    smoothing removed, with no activation.
    """
    K = params.levels
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    T = x.shape[-1]
    w_low = params.low[0].shape[0]
    reach = 2 ** (K - 1) * (w_low - 1)
    if T <= reach:
        raise ValueError(f"T={T} too short for K={K} levels with low kernel width {w_low} (needs > {reach})")

    prev = x
    bands = []
    for k in range(K):
        low = leaky_relu(conv1d(prev, params.low[k], dilation=2 ** k), params.leaky_slope)
        high = conv1d(prev - low, params.high[k], dilation=1)
        bands += [low, high]
        prev = low
    return stack(bands, axis=-3)
