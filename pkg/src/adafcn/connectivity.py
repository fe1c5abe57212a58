"""Per-band Pearson connectivity, thresholding, and cross-band bilinear coupling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, as_tensor, clamp_min

VAR_EPS = 1e-8
# |corr| within this of tau counts as equal, so strict > excludes it
TIE_TOL = 1e-12


def pearson(band) -> Tensor:
    """Row-wise Pearson correlation of (..., N, T) -> (..., N, N).

    Row variances are floored at ``VAR_EPS`` so constant rows yield zero
    correlation instead of NaN.
    """
    band = as_tensor(band)
    T = band.shape[-1]
    centered = band - band.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    z = centered * clamp_min(var, VAR_EPS) ** -0.5
    return (z @ z.mT) * (1.0 / T)


def _offdiag(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def dynamic_threshold(corr, beta: float = 0.5):
    """Keep edges with |corr| above mean + beta*std of the off-diagonal |corr|.

    Works on (..., N, N); returns ``(mask, tau)`` with one tau per matrix. The
    diagonal is always kept.
    """
    c = np.abs(corr.data if isinstance(corr, Tensor) else np.asarray(corr, dtype=np.float64))
    n = c.shape[-1]
    off = c[..., _offdiag(n)]
    tau = off.mean(axis=-1) + beta * off.std(axis=-1)
    mask = c > tau[..., None, None] + TIE_TOL
    mask[..., np.arange(n), np.arange(n)] = True
    return mask.astype(np.float64), tau


def fixed_threshold_top_q(corr, q: float = 0.25) -> np.ndarray:
    """Keep the top ceil(q*N*(N-1)) off-diagonal entries by |corr|, ties to the smaller (i, j)."""
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    c = np.abs(corr.data if isinstance(corr, Tensor) else np.asarray(corr, dtype=np.float64))
    n = c.shape[-1]
    n_keep = math.ceil(q * n * (n - 1))
    ii, jj = np.nonzero(_offdiag(n))
    flat = c.reshape(-1, n, n)
    mask = np.zeros_like(flat)
    for b, mat in enumerate(flat):
        order = np.lexsort((jj, ii, -mat[ii, jj]))[:n_keep]
        mask[b, ii[order], jj[order]] = 1.0
        mask[b, np.arange(n), np.arange(n)] = 1.0
    return mask.reshape(c.shape)


def assemble_blocks(blocks: Tensor) -> Tensor:
    """(..., P, P, N, N) grid of blocks -> (..., P*N, P*N) matrix."""
    *lead, P, P2, N, N2 = blocks.shape
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
    return blocks.transpose(perm).reshape(tuple(lead) + (P * N, P2 * N2))


def assemble_intra(masks, corr, binary: bool = False) -> Tensor:
    """Direct sum of the masked per-band matrices: block k on the diagonal is corr[k] * mask[k].

    With ``binary=True`` the blocks are the 0/1 masks themselves.
    """
    corr = as_tensor(corr)
    masks = np.asarray(masks, dtype=np.float64)
    P = corr.shape[-3]
    block = Tensor(masks) if binary else corr * masks
    eye = np.eye(P)[:, :, None, None]
    grid = block.reshape(block.shape[:-3] + (P, 1) + block.shape[-2:]) * eye
    return assemble_blocks(grid)


@dataclass
class CrossBandParams:
    w_src: Tensor  # (P, N, d), row s is W_src for band s
    w_tgt: Tensor  # (P, N, d)

    @property
    def hidden(self) -> int:
        return self.w_src.shape[-1]


def init_cross_params(K: int, n_roi: int, d: int = 32, seed: int = 0) -> CrossBandParams:
    if d < 1:
        raise ValueError(f"hidden dim must be >= 1, got {d}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(n_roi)
    shape = (2 * K, n_roi, d)
    return CrossBandParams(Tensor(rng.uniform(-bound, bound, shape), requires_grad=True),
                           Tensor(rng.uniform(-bound, bound, shape), requires_grad=True))


def cross_blocks(corr, params: CrossBandParams) -> Tensor:
    """Bilinear coupling blocks S_s M_m^T as a (..., P, P, N, N) grid with zero diagonal blocks."""
    corr = as_tensor(corr)
    P, N = corr.shape[-3], corr.shape[-1]
    if params.w_src.shape[:2] != (P, N) or params.w_tgt.shape != params.w_src.shape:
        raise ValueError(f"cross params {params.w_src.shape}/{params.w_tgt.shape} do not fit "
                         f"{P} bands of {N} ROIs")
    d = params.hidden
    lead = corr.shape[:-3]
    src = (corr @ params.w_src).reshape(lead + (P, 1, N, d))
    tgt = (corr @ params.w_tgt).reshape(lead + (1, P, N, d))
    off = (1.0 - np.eye(P))[:, :, None, None]
    return (src @ tgt.mT) * off


def cross_attention(corr, params: CrossBandParams) -> Tensor:
    """Assembled (..., P*N, P*N) cross-band adjacency."""
    return assemble_blocks(cross_blocks(corr, params))
