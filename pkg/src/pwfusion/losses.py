"""Training objectives: fused-prediction loss, per-modality prediction loss,
and the variance-weighted L1 sparsity penalty, combined as

    total = l_multimodal + lambda1 * l_unimodal + lambda2 * l_sparsity

All losses are means over the batch so the lambdas are batch-size independent.

Masking semantics: augmented batches zero-fill missing modalities, and
supervising an embedding computed from zeros against the label would train a
spurious class prior.  By default the unimodal and sparsity terms therefore
include only the modalities available per sample (and the sparsity weights use
the availability-masked combined variance).  ``literal=True`` / ``delta=None``
switches to the unmasked variant that sums over every modality regardless of
availability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fusion as fu
from .autodiff import Tensor
from .model import GaussianEmbedding, PredictorParams, predict, reparameterize


def _check_labels(labels: np.ndarray, n: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if labels.size == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} outside [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-sample -log softmax(logits)[label], via log-sum-exp. Shape (n,)."""
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    rec = logits.record
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.reduce_sum(ad.mul(logits, rec.constant(onehot)), axis=1)
    return ad.add(ad.logsumexp(logits), ad.scale(picked, -1.0))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch (scalar tensor)."""
    rows = cross_entropy_rows(logits, labels)
    return ad.scale(ad.reduce_sum(rows), 1.0 / rows.shape[0])


def unimodal_loss(embs: list[GaussianEmbedding], labels: np.ndarray,
                  delta: np.ndarray, predictor: PredictorParams,
                  rng: np.random.Generator, literal: bool = False) -> Tensor:
    """Sum over modalities of the cross-entropy on one reparameterized draw,
    averaged over the batch.  Unless ``literal``, a sample contributes to
    modality m only when delta[:, m] == 1."""
    n, d = embs[0].mu.shape
    rec = embs[0].mu.record
    delta = fu.validate_delta(delta, n, len(embs))
    terms = []
    for m, emb in enumerate(embs):
        noise = rng.standard_normal((n, d))
        logits = predict(predictor, reparameterize(emb, noise))
        rows = cross_entropy_rows(logits, labels)
        if not literal:
            rows = ad.mul(rows, rec.constant(delta[:, m]))
        terms.append(ad.reduce_sum(rows))
    return ad.scale(ad.add_chain(terms), 1.0 / n)


def sparsity_loss(embs: list[GaussianEmbedding], delta: np.ndarray | None = None) -> Tensor:
    """Variance-weighted L1 penalty on the unimodal means, batch mean:

        sum_m || (sigma / sigma_m)^2 * mu_m ||_1

    with 1/sigma^2 the summed precision of all modalities.  ``delta=None``
    uses every modality (availability-free weights); passing delta masks both
    the combined precision and the per-modality terms.
    """
    n = embs[0].mu.shape[0]
    effective = np.ones((n, len(embs))) if delta is None else delta
    _, masked_prec, var = fu._precision_parts(embs, effective)
    terms = []
    for emb, prec in zip(embs, masked_prec):
        weight = ad.mul(prec, var)  # delta_m * (sigma / sigma_m)^2
        terms.append(ad.reduce_sum(ad.absolute(ad.mul(weight, emb.mu))))
    return ad.scale(ad.add_chain(terms), 1.0 / n)


def multimodal_loss(fused: fu.FusionResult, labels: np.ndarray,
                    predictor: PredictorParams) -> Tensor:
    """Cross-entropy of the shared predictor on the fused embedding."""
    return cross_entropy(predict(predictor, fused.h), labels)


@dataclass
class LossBreakdown:
    l_multimodal: float
    l_unimodal: float
    l_sparsity: float
    total: float
    lambda1: float
    lambda2: float


def total_loss(l_multimodal: Tensor, l_unimodal: Tensor, l_sparsity: Tensor,
               lambda1: float, lambda2: float) -> tuple[Tensor, LossBreakdown]:
    """Affine combination of the three scalar losses, plus its breakdown."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be nonnegative")
    total = ad.add(ad.add(l_multimodal, ad.scale(l_unimodal, lambda1)),
                   ad.scale(l_sparsity, lambda2))
    breakdown = LossBreakdown(
        l_multimodal=float(l_multimodal.values),
        l_unimodal=float(l_unimodal.values),
        l_sparsity=float(l_sparsity.values),
        total=float(total.values),
        lambda1=float(lambda1),
        lambda2=float(lambda2),
    )
    return total, breakdown
