"""Training loop: per-batch availability augmentation, the three losses, and
bias-corrected Adam with coupled L2 weight decay.

Every step rebuilds the computation record (define-by-run): encode all
modalities, score one reparameterized draw per modality, fuse the means with
availability-masked precision weights, add the sparsity penalty, then take one
optimizer step.  All randomness is derived from the config seed, so a run is
fully determined by (seed, config, dataset).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as dt
from . import fusion as fu
from . import losses as ls
from . import model as md
from .seeds import derive_rng

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    lambda1: float = 1.0
    lambda2: float = 0.2
    embed_dim: int = 16
    hidden_dim: int = 64
    seed: int = 0
    literal_losses: bool = False
    materialize_patterns: bool = False
    weighting: str = "adaptive"
    decoupled_weight_decay: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("invalid learning rate or weight decay")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("model dims must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, weight_decay: float = 0.0,
              decoupled: bool = False):
    """In-place bias-corrected Adam update.  Weight decay is coupled (added to
    the gradient before the moment update) unless ``decoupled``."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter "
                             f"shape {p.shape} for {name}")
        if weight_decay and not decoupled:
            g = g + weight_decay * p
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        if weight_decay and decoupled:
            p -= lr * weight_decay * p
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def _batch_losses(model: md.Model, bound: md.BoundModel, batch: dt.MultimodalBatch,
                  config: TrainConfig, rng: np.random.Generator):
    embs = [md.encode(enc, x, model.spec.sigma_floor)
            for enc, x in zip(bound.encoders, batch.features)]
    l_u = ls.unimodal_loss(embs, batch.labels, batch.delta, bound.predictor,
                           rng, literal=config.literal_losses)
    fused = fu.fuse_with_strategy(embs, batch.delta, model.spec.weighting,
                                  bound.fusion_logits)
    l_m = ls.multimodal_loss(fused, batch.labels, bound.predictor)
    l_d = ls.sparsity_loss(embs, None if config.literal_losses else batch.delta)
    return ls.total_loss(l_m, l_u, l_d, config.lambda1, config.lambda2)


def train_epoch(model: md.Model, dataset: dt.Dataset, config: TrainConfig,
                state: AdamState, rng: np.random.Generator) -> ls.LossBreakdown:
    """One pass over shuffled batches of an already-standardized dataset.
    Returns the sample-weighted mean loss breakdown."""
    order = rng.permutation(dataset.n)
    sums = np.zeros(4)
    params = model.named_params()
    for start in range(0, dataset.n, config.batch_size):
        idx = order[start:start + config.batch_size]
        batch = dataset.subset(idx).to_batch()
        if config.materialize_patterns:
            batch = dt.materialize_patterns(batch)
        else:
            batch = dt.augment_missing(batch, rng)
        rec = ad.Record()
        bound = model.bind(rec)
        total, breakdown = _batch_losses(model, bound, batch, config, rng)
        for tag, value in (("multimodal", breakdown.l_multimodal),
                           ("unimodal", breakdown.l_unimodal),
                           ("sparsity", breakdown.l_sparsity),
                           ("total", breakdown.total)):
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite {tag} loss ({value}) in batch starting at sample "
                    f"{start}")
        ad.backward(total)
        bound_params = _bound_named(bound)
        grads = {name: t.grad for name, t in bound_params.items() if t.grad is not None}
        adam_step(params, grads, state, config.learning_rate, config.weight_decay,
                  config.decoupled_weight_decay)
        sums += len(idx) * np.array([breakdown.l_multimodal, breakdown.l_unimodal,
                                     breakdown.l_sparsity, breakdown.total])
    means = sums / dataset.n
    return ls.LossBreakdown(float(means[0]), float(means[1]), float(means[2]),
                            float(means[3]), config.lambda1, config.lambda2)


def _bound_named(bound: md.BoundModel) -> dict:
    out = {}
    for m, enc in enumerate(bound.encoders):
        for name in ("w1", "b1", "w2", "b2", "mu_w", "mu_b", "sigma_w", "sigma_b"):
            out[f"enc{m}.{name}"] = getattr(enc, name)
    out["predictor.w"] = bound.predictor.w
    out["predictor.b"] = bound.predictor.b
    if bound.fusion_logits is not None:
        out["fusion.logits"] = bound.fusion_logits
    return out


def fit(config: TrainConfig, train_ds: dt.Dataset, val_ds: dt.Dataset | None = None
        ) -> tuple[md.Model, list[dict]]:
    """Standardize on the training split, train for config.epochs, and record
    per-epoch losses plus (when a validation set is given) the accuracy
    averaged over all availability patterns."""
    scaler = md.fit_standardizer(train_ds.features)
    train_std = dt.Dataset(scaler.transform(train_ds.features), train_ds.labels,
                           train_ds.modality_names, train_ds.num_classes, train_ds.split)
    spec = md.ModelSpec(
        modality_dims=train_ds.modality_dims,
        modality_names=list(train_ds.modality_names),
        num_classes=train_ds.num_classes,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        weighting=config.weighting,
    )
    model = md.init_model(spec, config.seed)
    model.scaler = scaler
    state = init_adam(model.named_params())
    history: list[dict] = []
    for epoch in range(config.epochs):
        rng = derive_rng(config.seed, f"epoch-{epoch}")
        t0 = time.perf_counter()
        breakdown = train_epoch(model, train_std, config, state, rng)
        row = {
            "epoch": epoch,
            "l_m": breakdown.l_multimodal,
            "l_u": breakdown.l_unimodal,
            "l_d": breakdown.l_sparsity,
            "total": breakdown.total,
            "val_avg_metric": float("nan"),
            "seconds": time.perf_counter() - t0,
        }
        if val_ds is not None:
            from .evaluate import average_over_patterns
            row["val_avg_metric"] = average_over_patterns(model, val_ds)
        history.append(row)
    return model, history


def fit_concat(config: TrainConfig, train_ds: dt.Dataset,
               val_ds: dt.Dataset | None = None) -> tuple[md.ConcatModel, list[dict]]:
    """Train the concatenation baseline with plain cross-entropy on
    full-modality data only (no availability augmentation)."""
    scaler = md.fit_standardizer(train_ds.features)
    features = scaler.transform(train_ds.features)
    spec = md.ModelSpec(
        modality_dims=train_ds.modality_dims,
        modality_names=list(train_ds.modality_names),
        num_classes=train_ds.num_classes,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
    )
    model = md.build_concat_baseline(spec, config.seed)
    model.scaler = scaler
    params = model.named_params()
    state = init_adam(params)
    history: list[dict] = []
    for epoch in range(config.epochs):
        rng = derive_rng(config.seed, f"epoch-{epoch}")
        t0 = time.perf_counter()
        order = rng.permutation(train_ds.n)
        total_sum = 0.0
        for start in range(0, train_ds.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            rec = ad.Record()
            encoders, classifier = model.bind(rec)
            logits = model.forward_logits(encoders, classifier, [x[idx] for x in features])
            loss = ls.cross_entropy(logits, train_ds.labels[idx])
            if not np.isfinite(loss.values):
                raise RuntimeError(f"non-finite loss in batch starting at sample {start}")
            ad.backward(loss)
            named = {}
            for m, enc in enumerate(encoders):
                for name in ("w1", "b1", "w2", "b2", "head_w", "head_b"):
                    named[f"enc{m}.{name}"] = getattr(enc, name)
            named["classifier.w"] = classifier.w
            named["classifier.b"] = classifier.b
            grads = {k: t.grad for k, t in named.items() if t.grad is not None}
            adam_step(params, grads, state, config.learning_rate, config.weight_decay,
                      config.decoupled_weight_decay)
            total_sum += len(idx) * float(loss.values)
        row = {"epoch": epoch, "l_m": total_sum / train_ds.n, "l_u": 0.0, "l_d": 0.0,
               "total": total_sum / train_ds.n, "val_avg_metric": float("nan"),
               "seconds": time.perf_counter() - t0}
        if val_ds is not None:
            from .evaluate import average_over_patterns
            row["val_avg_metric"] = average_over_patterns(model, val_ds)
        history.append(row)
    return model, history


# ---------------------------------------------------------------------------
# Checkpoints: JSON {version, config, params: {name: [numbers]}} with shapes
# recoverable from the config echo.  Round-trips are bit-exact.

def _model_config(model) -> dict:
    kind = "concat" if isinstance(model, md.ConcatModel) else model.spec.weighting
    cfg = {
        "kind": kind,
        "modality_dims": list(model.spec.modality_dims),
        "modality_names": list(model.spec.modality_names),
        "num_classes": model.spec.num_classes,
        "embed_dim": model.spec.embed_dim,
        "hidden_dim": model.spec.hidden_dim,
        "sigma_floor": model.spec.sigma_floor,
    }
    if model.scaler is not None:
        cfg["scaler"] = {
            "mean": [m.tolist() for m in model.scaler.mean],
            "std": [s.tolist() for s in model.scaler.std],
        }
    return cfg


def _param_shapes(cfg: dict) -> dict[str, tuple[int, ...]]:
    hidden, emb, c = cfg["hidden_dim"], cfg["embed_dim"], cfg["num_classes"]
    shapes: dict[str, tuple[int, ...]] = {}
    for m, dim in enumerate(cfg["modality_dims"]):
        if cfg["kind"] == "concat":
            fields = {"w1": (dim, hidden), "b1": (hidden,), "w2": (hidden, hidden),
                      "b2": (hidden,), "head_w": (hidden, emb), "head_b": (emb,)}
        else:
            fields = {"w1": (dim, hidden), "b1": (hidden,), "w2": (hidden, hidden),
                      "b2": (hidden,), "mu_w": (hidden, emb), "mu_b": (emb,),
                      "sigma_w": (hidden, emb), "sigma_b": (emb,)}
        for name, shape in fields.items():
            shapes[f"enc{m}.{name}"] = shape
    if cfg["kind"] == "concat":
        shapes["classifier.w"] = (emb * len(cfg["modality_dims"]), c)
        shapes["classifier.b"] = (c,)
    else:
        shapes["predictor.w"] = (emb, c)
        shapes["predictor.b"] = (c,)
        if cfg["kind"] == "fixed":
            shapes["fusion.logits"] = (len(cfg["modality_dims"]), emb)
    return shapes


def save_checkpoint(model, path: str | Path, train_config: TrainConfig | None = None,
                    opt_state: AdamState | None = None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": _model_config(model),
        "params": {k: v.ravel().tolist() for k, v in model.named_params().items()},
    }
    if train_config is not None:
        payload["config"]["train"] = asdict(train_config)
    if opt_state is not None:
        payload["optimizer"] = {
            "step": opt_state.step,
            "m": {k: v.ravel().tolist() for k, v in opt_state.m.items()},
            "v": {k: v.ravel().tolist() for k, v in opt_state.v.items()},
        }
    Path(path).write_text(json.dumps(payload) + "\n")


def load_checkpoint(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"corrupt checkpoint {path}: {err}") from None
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unknown checkpoint version {payload.get('version')!r} "
                         f"(expected {CHECKPOINT_VERSION})")
    cfg = payload["config"]
    shapes = _param_shapes(cfg)
    raw = payload["params"]
    missing = sorted(set(shapes) - set(raw))
    if missing:
        raise ValueError(f"checkpoint {path} missing parameter(s): {missing}")
    extra = sorted(set(raw) - set(shapes))
    if extra:
        raise ValueError(f"checkpoint {path} has unexpected parameter(s): {extra}")
    params = {}
    for name, shape in shapes.items():
        flat = np.asarray(raw[name], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise ValueError(f"checkpoint {path}: parameter {name} has {flat.size} "
                             f"values, expected shape {shape}")
        params[name] = flat.reshape(shape)

    spec = md.ModelSpec(
        modality_dims=list(cfg["modality_dims"]),
        modality_names=list(cfg["modality_names"]),
        num_classes=cfg["num_classes"],
        embed_dim=cfg["embed_dim"],
        hidden_dim=cfg["hidden_dim"],
        sigma_floor=cfg["sigma_floor"],
        weighting=cfg["kind"] if cfg["kind"] != "concat" else "adaptive",
    )
    scaler = None
    if "scaler" in cfg:
        scaler = md.Standardizer(
            mean=[np.asarray(v, dtype=np.float64) for v in cfg["scaler"]["mean"]],
            std=[np.asarray(v, dtype=np.float64) for v in cfg["scaler"]["std"]],
        )
    if cfg["kind"] == "concat":
        model = md.build_concat_baseline(spec, seed=0)
    else:
        model = md.init_model(spec, seed=0)
    model.set_params(params)
    model.scaler = scaler
    return model
