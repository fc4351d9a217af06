"""Per-modality Gaussian encoders, the shared linear predictor, and the
concatenation baseline.

Each modality owns an MLP trunk with two relu hidden layers plus two linear
heads producing the mean and (via softplus) the standard deviation of a
D-dimensional Gaussian embedding.  A single linear predictor is shared by all
unimodal embeddings and by the fused embedding, so all of them live in one
comparable latent space.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Record, Tensor
from .seeds import derive_rng

# softplus(x) = 1 at x = ln(e - 1); initialising the sigma head bias there
# starts every embedding near unit standard deviation.
SIGMA_RAW_INIT = math.log(math.e - 1.0)


@dataclass
class ModelSpec:
    modality_dims: list[int]
    modality_names: list[str]
    num_classes: int
    embed_dim: int = 16
    hidden_dim: int = 64
    sigma_floor: float = 1e-4
    weighting: str = "adaptive"  # adaptive | identical | fixed

    def __post_init__(self):
        if len(self.modality_dims) != len(self.modality_names):
            raise ValueError("modality_dims and modality_names differ in length")
        if not self.modality_dims:
            raise ValueError("at least one modality required")
        if any(d < 1 for d in self.modality_dims):
            raise ValueError("modality dims must be >= 1")
        if self.num_classes < 2 or self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("invalid model dimensions")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if self.weighting not in ("adaptive", "identical", "fixed"):
            raise ValueError(f"unknown weighting kind: {self.weighting!r}")

    @property
    def num_modalities(self) -> int:
        return len(self.modality_dims)


@dataclass
class EncoderParams:
    """Trunk (in -> H -> H) and mean/sigma heads (H -> D) for one modality."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    mu_w: np.ndarray
    mu_b: np.ndarray
    sigma_w: np.ndarray
    sigma_b: np.ndarray


@dataclass
class PredictorParams:
    """Shared linear classifier, embedding dim -> class count."""
    w: np.ndarray
    b: np.ndarray


@dataclass
class GaussianEmbedding:
    """Batched diagonal Gaussian: mu and sigma are (n, D) tensors with
    sigma >= sigma_floor elementwise."""
    mu: Tensor
    sigma: Tensor


@dataclass
class Standardizer:
    """Per-coordinate affine normalisation fitted on the training split."""
    mean: list[np.ndarray]
    std: list[np.ndarray]

    def transform(self, features: list[np.ndarray]) -> list[np.ndarray]:
        if len(features) != len(self.mean):
            raise ValueError("standardizer modality count mismatch")
        return [(x - m) / s for x, m, s in zip(features, self.mean, self.std)]


def fit_standardizer(features: list[np.ndarray]) -> Standardizer:
    means = [x.mean(axis=0) for x in features]
    stds = [np.where(x.std(axis=0) < 1e-12, 1.0, x.std(axis=0)) for x in features]
    return Standardizer(means, stds)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_encoder(rng: np.random.Generator, d_in: int, hidden: int, d_out: int) -> EncoderParams:
    return EncoderParams(
        w1=_glorot(rng, d_in, hidden), b1=np.zeros(hidden),
        w2=_glorot(rng, hidden, hidden), b2=np.zeros(hidden),
        mu_w=_glorot(rng, hidden, d_out), mu_b=np.zeros(d_out),
        sigma_w=_glorot(rng, hidden, d_out),
        sigma_b=np.full(d_out, SIGMA_RAW_INIT),
    )


def init_predictor(rng: np.random.Generator, d_in: int, num_classes: int) -> PredictorParams:
    return PredictorParams(w=_glorot(rng, d_in, num_classes), b=np.zeros(num_classes))


def _bind(rec: Record, params, trainable: bool):
    """Wrap every array field of a params dataclass as a leaf of rec."""
    wrapped = {f.name: rec.leaf(getattr(params, f.name), requires_grad=trainable)
               for f in dataclasses.fields(params)}
    return type(params)(**wrapped)


def encode(enc: EncoderParams, x: np.ndarray, sigma_floor: float = 1e-4) -> GaussianEmbedding:
    """Run one modality's encoder on a (n, D_m) batch.

    sigma = softplus(raw) + sigma_floor, so it is strictly positive for any
    finite input.  ``enc`` must hold bound tensors (see Model.bind).
    """
    rec = enc.w1.record
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != enc.w1.shape[0]:
        raise ValueError(
            f"encode: input dim {x.shape[1]} does not match encoder dim {enc.w1.shape[0]}")
    xt = rec.constant(x)
    h1 = ad.relu(ad.add(ad.matmul(xt, enc.w1), enc.b1))
    h2 = ad.relu(ad.add(ad.matmul(h1, enc.w2), enc.b2))
    mu = ad.add(ad.matmul(h2, enc.mu_w), enc.mu_b)
    raw = ad.add(ad.matmul(h2, enc.sigma_w), enc.sigma_b)
    floor = rec.constant(np.full(mu.shape[1], sigma_floor))
    sigma = ad.add(ad.softplus(raw), floor)
    return GaussianEmbedding(mu=mu, sigma=sigma)


def reparameterize(emb: GaussianEmbedding, noise: np.ndarray) -> Tensor:
    """Pathwise sample mu + noise * sigma; gradients flow to mu and sigma."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != emb.mu.shape:
        raise ValueError(f"reparameterize: noise shape {noise.shape} != {emb.mu.shape}")
    return ad.add(emb.mu, ad.mul(emb.mu.record.constant(noise), emb.sigma))


def predict(pred: PredictorParams, h: Tensor) -> Tensor:
    """Shared linear classifier: logits = h @ w + b."""
    if h.shape[-1] != pred.w.shape[0]:
        raise ValueError(f"predict: embedding dim {h.shape[-1]} != predictor dim {pred.w.shape[0]}")
    return ad.add(ad.matmul(h, pred.w), pred.b)


@dataclass
class BoundModel:
    encoders: list[EncoderParams]
    predictor: PredictorParams
    fusion_logits: Tensor | None = None


@dataclass
class Model:
    spec: ModelSpec
    encoders: list[EncoderParams]
    predictor: PredictorParams
    fusion_logits: np.ndarray | None = None
    scaler: Standardizer | None = None

    def named_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m, enc in enumerate(self.encoders):
            for f in dataclasses.fields(enc):
                out[f"enc{m}.{f.name}"] = getattr(enc, f.name)
        for f in dataclasses.fields(self.predictor):
            out[f"predictor.{f.name}"] = getattr(self.predictor, f.name)
        if self.fusion_logits is not None:
            out["fusion.logits"] = self.fusion_logits
        return out

    def set_params(self, named: dict[str, np.ndarray]):
        for m, enc in enumerate(self.encoders):
            for f in dataclasses.fields(enc):
                setattr(enc, f.name, named[f"enc{m}.{f.name}"])
        for f in dataclasses.fields(self.predictor):
            setattr(self.predictor, f.name, named[f"predictor.{f.name}"])
        if self.fusion_logits is not None:
            self.fusion_logits = named["fusion.logits"]

    def bind(self, rec: Record, trainable: bool = True) -> BoundModel:
        """One leaf per parameter; reuse the bound object for every operation
        inside a record so gradients accumulate on a single node."""
        logits = None
        if self.fusion_logits is not None:
            logits = rec.leaf(self.fusion_logits, requires_grad=trainable)
        return BoundModel(
            encoders=[_bind(rec, e, trainable) for e in self.encoders],
            predictor=_bind(rec, self.predictor, trainable),
            fusion_logits=logits,
        )

    def predict_logits(self, features: list[np.ndarray], delta: np.ndarray,
                       strategy: str | None = None) -> np.ndarray:
        """Deterministic evaluation path: encode, fuse the means with the
        requested weighting, apply the shared predictor.  No sampling."""
        from . import fusion

        strategy = strategy or self.spec.weighting
        rec = Record()
        bound = self.bind(rec, trainable=False)
        embs = [encode(enc, x, self.spec.sigma_floor)
                for enc, x in zip(bound.encoders, features)]
        fused = fusion.fuse_with_strategy(embs, delta, strategy, bound.fusion_logits)
        return predict(bound.predictor, fused.h).values


def init_model(spec: ModelSpec, seed: int) -> Model:
    rng = derive_rng(seed, "model-init")
    encoders = [init_encoder(rng, d, spec.hidden_dim, spec.embed_dim)
                for d in spec.modality_dims]
    predictor = init_predictor(rng, spec.embed_dim, spec.num_classes)
    logits = None
    if spec.weighting == "fixed":
        logits = np.zeros((spec.num_modalities, spec.embed_dim))
    return Model(spec=spec, encoders=encoders, predictor=predictor, fusion_logits=logits)


# ---------------------------------------------------------------------------
# Concatenation baseline: deterministic trunks, no sigma heads, one classifier
# over the concatenated modality embeddings.  Trained on full-modality data.

@dataclass
class ConcatEncoderParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray


@dataclass
class ConcatModel:
    spec: ModelSpec
    encoders: list[ConcatEncoderParams]
    classifier: PredictorParams
    scaler: Standardizer | None = None

    def named_params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for m, enc in enumerate(self.encoders):
            for f in dataclasses.fields(enc):
                out[f"enc{m}.{f.name}"] = getattr(enc, f.name)
        for f in dataclasses.fields(self.classifier):
            out[f"classifier.{f.name}"] = getattr(self.classifier, f.name)
        return out

    def set_params(self, named: dict[str, np.ndarray]):
        for m, enc in enumerate(self.encoders):
            for f in dataclasses.fields(enc):
                setattr(enc, f.name, named[f"enc{m}.{f.name}"])
        for f in dataclasses.fields(self.classifier):
            setattr(self.classifier, f.name, named[f"classifier.{f.name}"])

    def bind(self, rec: Record, trainable: bool = True):
        return ([_bind(rec, e, trainable) for e in self.encoders],
                _bind(rec, self.classifier, trainable))

    def forward_logits(self, rec_encoders, classifier, features: list[np.ndarray]) -> Tensor:
        parts = []
        for enc, x in zip(rec_encoders, features):
            rec = enc.w1.record
            xt = rec.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
            h1 = ad.relu(ad.add(ad.matmul(xt, enc.w1), enc.b1))
            h2 = ad.relu(ad.add(ad.matmul(h1, enc.w2), enc.b2))
            parts.append(ad.add(ad.matmul(h2, enc.head_w), enc.head_b))
        return predict(classifier, ad.concat_cols(parts))

    def predict_logits(self, features: list[np.ndarray], delta: np.ndarray,
                       strategy: str | None = None) -> np.ndarray:
        # delta is accepted for interface parity; missing modalities are
        # already zero-filled in the features.
        rec = Record()
        encoders, classifier = self.bind(rec, trainable=False)
        return self.forward_logits(encoders, classifier, features).values


def build_concat_baseline(spec: ModelSpec, seed: int) -> ConcatModel:
    """Same trunk architecture as the Gaussian encoders, deterministic heads,
    classifier over the concatenated (M * embed_dim) features."""
    rng = derive_rng(seed, "model-init")
    encoders = []
    for d in spec.modality_dims:
        encoders.append(ConcatEncoderParams(
            w1=_glorot(rng, d, spec.hidden_dim), b1=np.zeros(spec.hidden_dim),
            w2=_glorot(rng, spec.hidden_dim, spec.hidden_dim), b2=np.zeros(spec.hidden_dim),
            head_w=_glorot(rng, spec.hidden_dim, spec.embed_dim),
            head_b=np.zeros(spec.embed_dim),
        ))
    classifier = init_predictor(rng, spec.embed_dim * spec.num_modalities, spec.num_classes)
    return ConcatModel(spec=spec, encoders=encoders, classifier=classifier)
