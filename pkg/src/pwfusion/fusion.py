"""Precision-weighted fusion of per-modality Gaussian embeddings.

Per embedding element d, each available modality m contributes with weight
proportional to its precision 1 / sigma_m[d]^2:

    1 / sigma[d]^2 = sum_m delta_m / sigma_m[d]^2
    omega_m[d]     = delta_m * sigma[d]^2 / sigma_m[d]^2
    h[d]           = sum_m omega_m[d] * mu_m[d]

which is exactly the mean of the product of the available Gaussians.  Weights
of unavailable modalities are identically zero and the remaining weights sum
to one per element.  Everything is differentiable through both the means and
the sigmas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import GaussianEmbedding


@dataclass
class FusionResult:
    h: Tensor                       # (n, D) fused embedding
    omega: list[Tensor]             # per modality, (n, D) element-wise weights
    combined_variance: Tensor       # (n, D)


def validate_delta(delta: np.ndarray, n: int, num_modalities: int) -> np.ndarray:
    delta = np.asarray(delta)
    if delta.shape != (n, num_modalities):
        raise ValueError(f"delta shape {delta.shape} != ({n}, {num_modalities})")
    if not np.isin(delta, (0, 1)).all():
        raise ValueError("delta entries must be 0 or 1")
    if (delta.sum(axis=1) == 0).any():
        rows = np.flatnonzero(delta.sum(axis=1) == 0)
        raise ValueError(f"no modality available for sample(s) {rows.tolist()}")
    return delta.astype(np.float64)


def _delta_tiles(rec, delta: np.ndarray, d: int) -> list[Tensor]:
    """Per-modality (n, D) constant masks broadcast from (n, M) delta."""
    return [rec.constant(np.tile(delta[:, m:m + 1], (1, d))) for m in range(delta.shape[1])]


def _precision_parts(embs: list[GaussianEmbedding], delta: np.ndarray):
    n, d = embs[0].mu.shape
    delta = validate_delta(delta, n, len(embs))
    rec = embs[0].mu.record
    tiles = _delta_tiles(rec, delta, d)
    masked_prec = [ad.mul(ad.reciprocal(ad.square(e.sigma)), t)
                   for e, t in zip(embs, tiles)]
    total_prec = ad.add_chain(masked_prec)
    combined_var = ad.reciprocal(total_prec)
    return tiles, masked_prec, combined_var


def combined_variance(embs: list[GaussianEmbedding], delta: np.ndarray) -> Tensor:
    """Variance of the product of the available Gaussians, (n, D)."""
    _, _, var = _precision_parts(embs, delta)
    return var


def fusion_weights(embs: list[GaussianEmbedding], delta: np.ndarray) -> list[Tensor]:
    """Element-wise weights omega_m = delta_m * combined_var / sigma_m^2."""
    _, masked_prec, var = _precision_parts(embs, delta)
    return [ad.mul(p, var) for p in masked_prec]


def fuse(embs: list[GaussianEmbedding], delta: np.ndarray) -> FusionResult:
    """Precision-weighted mean of the available modality means."""
    _, masked_prec, var = _precision_parts(embs, delta)
    omega = [ad.mul(p, var) for p in masked_prec]
    h = ad.add_chain([ad.mul(w, e.mu) for w, e in zip(omega, embs)])
    return FusionResult(h=h, omega=omega, combined_variance=var)


def identical_fusion(embs: list[GaussianEmbedding], delta: np.ndarray) -> FusionResult:
    """Uniform weights over the available modalities: omega_m = delta_m / sum(delta)."""
    n, d = embs[0].mu.shape
    delta = validate_delta(delta, n, len(embs))
    rec = embs[0].mu.record
    counts = delta.sum(axis=1, keepdims=True)
    omega = [rec.constant(np.tile(delta[:, m:m + 1] / counts, (1, d)))
             for m in range(len(embs))]
    h = ad.add_chain([ad.mul(w, e.mu) for w, e in zip(omega, embs)])
    var = ad.add_chain([ad.mul(ad.square(w), ad.square(e.sigma))
                        for w, e in zip(omega, embs)])
    return FusionResult(h=h, omega=omega, combined_variance=var)


def fixed_fusion(embs: list[GaussianEmbedding], delta: np.ndarray,
                 logits: Tensor) -> FusionResult:
    """Input-independent learned weights, one logit per (modality, element),
    softmax-normalised over the available modalities of each sample."""
    n, d = embs[0].mu.shape
    m = len(embs)
    delta = validate_delta(delta, n, m)
    if logits is None:
        raise ValueError("fixed weighting requires fusion logits")
    if logits.shape != (m, d):
        raise ValueError(f"fusion logits shape {logits.shape} != ({m}, {d})")
    rec = embs[0].mu.record
    tiles = _delta_tiles(rec, delta, d)
    ones = rec.constant(np.ones((n, 1)))
    masked_exp = []
    for i, t in enumerate(tiles):
        row = ad.exp(ad.gather_rows(logits, np.full(1, i)))   # (1, D)
        tiled = ad.matmul(ones, row)                          # broadcast to (n, D)
        masked_exp.append(ad.mul(tiled, t))
    denom = ad.add_chain(masked_exp)
    omega = [ad.div(e, denom) for e in masked_exp]
    h = ad.add_chain([ad.mul(w, e.mu) for w, e in zip(omega, embs)])
    var = ad.add_chain([ad.mul(ad.square(w), ad.square(e.sigma))
                        for w, e in zip(omega, embs)])
    return FusionResult(h=h, omega=omega, combined_variance=var)


def fuse_with_strategy(embs: list[GaussianEmbedding], delta: np.ndarray,
                       strategy: str, logits: Tensor | None = None) -> FusionResult:
    if strategy == "adaptive":
        return fuse(embs, delta)
    if strategy == "identical":
        return identical_fusion(embs, delta)
    if strategy == "fixed":
        return fixed_fusion(embs, delta, logits)
    raise ValueError(f"unknown weighting strategy: {strategy!r}")
