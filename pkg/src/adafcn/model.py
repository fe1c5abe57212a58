"""End-to-end model: forward pass and loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import LossConfig, ModelConfig
from .connectivity import (CrossBandParams, assemble_blocks, assemble_intra, cross_blocks,
                           dynamic_threshold, fixed_threshold_top_q, init_cross_params, pearson)
from .decomposer import DecomposerParams, band_names, decompose, init_decomposer
from .head import HeadParams, classify, init_head, readout
from .losses import LossWeights, cross_entropy, diversity_loss, sparsity_from_blocks, total_loss
from .tensorcore import Tensor
from .unified_gcn import GcnParams, UnifiedGraph, build_h0, build_unified, gcn_forward, init_gcn


@dataclass
class ForwardResult:
    logits: Tensor          # (B, c)
    band_embeddings: Tensor  # (B, P, d)
    corr: Tensor            # (B, P, N, N)
    masks: np.ndarray       # (B, P, N, N)
    a_intra: Tensor         # (B, PN, PN)
    a_cross: Optional[Tensor]
    a_unified: Tensor
    cross_grid: Optional[Tensor]  # (B, P, P, N, N)


class AdaFCN:
    """Parameters plus the fixed computation graph.

    ``K == 0`` switches to a single-band baseline: correlation of the raw
    series feeds the GCN directly, with no decomposer or cross-band terms.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        if cfg.n_roi < 2 or cfg.n_classes < 2:
            raise ValueError("model config needs n_roi >= 2 and n_classes >= 2 (fill from the dataset)")
        self.cfg = cfg
        seeds = np.random.default_rng(seed).integers(2 ** 31, size=4)
        self.n_bands = 2 * cfg.K if cfg.K > 0 else 1
        self.decomposer: Optional[DecomposerParams] = None
        self.cross: Optional[CrossBandParams] = None
        self.lam: Optional[Tensor] = None
        if cfg.K > 0:
            self.decomposer = init_decomposer(cfg.K, cfg.w_low, cfg.w_high, int(seeds[0]),
                                              cfg.init_noise, cfg.leaky_slope)
            self.cross = init_cross_params(cfg.K, cfg.n_roi, cfg.d_cross, int(seeds[1]))
            self.lam = Tensor(np.array(cfg.lambda_init), requires_grad=True)
        self.gcn: GcnParams = init_gcn([cfg.n_roi] + list(cfg.gcn_dims), int(seeds[2]))
        self.head: HeadParams = init_head(self.n_bands * cfg.gcn_dims[-1], cfg.n_classes,
                                          cfg.mlp_hidden, int(seeds[3]))

    @property
    def band_names(self) -> list[str]:
        return band_names(self.cfg.K) if self.cfg.K > 0 else ["raw"]

    @property
    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.decomposer is not None:
            out.update(self.decomposer.tensors())
            out["w_src"] = self.cross.w_src
            out["w_tgt"] = self.cross.w_tgt
            out["lambda"] = self.lam
        out.update({f"gcn_{i}": w for i, w in enumerate(self.gcn.weights)})
        out.update(self.head.tensors())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.params
        if set(state) != set(params):
            raise ValueError(f"state keys {sorted(state)} do not match model {sorted(params)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape}, expected {p.shape}")
            p.data[...] = arr

    def bands(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if self.decomposer is None:
            return Tensor(x[..., None, :, :])
        return decompose(x, self.decomposer)

    def masks(self, corr: np.ndarray) -> np.ndarray:
        if self.cfg.dt_mode == "fixed25":
            return fixed_threshold_top_q(corr, self.cfg.fixed_q)
        return dynamic_threshold(corr, self.cfg.beta)[0]

    def forward(self, x) -> ForwardResult:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        corr = pearson(self.bands(x))
        masks = self.masks(corr.data)
        a_intra = assemble_intra(masks, corr, binary=self.cfg.intra_binary)
        grid = a_cross = None
        a = a_intra
        if self.cross is not None:
            grid = cross_blocks(corr, self.cross)
            a_cross = assemble_blocks(grid)
            a = build_unified(a_intra, a_cross, self.lam)
        z = gcn_forward(UnifiedGraph(a, build_h0(corr)), self.gcn, self.cfg.final_activation)
        emb = readout(z, self.n_bands)
        return ForwardResult(classify(emb, self.head), emb, corr, masks, a_intra, a_cross, a, grid)

    def loss(self, x, labels, losses: LossConfig, class_weights=None):
        """Total loss tensor and a dict of its float components."""
        out = self.forward(x)
        ce = cross_entropy(out.logits, labels, class_weights)
        weights = LossWeights(losses.lambda1 if losses.use_div else 0.0,
                              losses.lambda2 if losses.use_sparse else 0.0)
        div = sparse = 0.0
        if weights.lambda1 > 0 and self.n_bands > 1:
            div = diversity_loss(out.band_embeddings)
        if weights.lambda2 > 0 and out.cross_grid is not None:
            sparse = sparsity_from_blocks(out.cross_grid)
        total = total_loss(ce, div, sparse, weights)
        parts = {"ce": ce.item(), "div": float(getattr(div, "data", div)),
                 "sparse": float(getattr(sparse, "data", sparse))}
        return total, parts, out

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        probs = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start:start + batch_size]).logits.data
            e = np.exp(logits - logits.max(axis=-1, keepdims=True))
            probs.append(e / e.sum(axis=-1, keepdims=True))
        return np.concatenate(probs)
