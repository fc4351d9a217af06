"""Metrics, availability-pattern grids, corruption sweeps, and element-wise
fusion-weight inspection.

Evaluation is deterministic: missing modalities are zero-filled, fusion uses
the embedding means only (no sampling), and argmax ties go to the lowest class
index.  Every test sample is evaluated under every availability pattern, and
corruption sweeps draw their noise from a seed fixed per (kind, level,
modality) so competing models see identical corrupted inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dt
from .seeds import derive_rng

GAUSSIAN_LEVELS = (0.08, 0.12, 0.18, 0.26, 0.38)
MASK_LEVELS = (0.05, 0.10, 0.15, 0.20, 0.25)
HEATMAP_GAUSSIAN_LEVELS = (0.0, 0.18, 0.38)
HEATMAP_MASK_LEVELS = (0.0, 0.15, 0.25)


@dataclass
class ReportRow:
    condition: str
    metric: str
    value: float
    n: int


@dataclass
class EvalReport:
    rows: list[ReportRow]

    def value(self, condition: str) -> float:
        for row in self.rows:
            if row.condition == condition:
                return row.value
        raise KeyError(condition)

    def write_csv(self, path: str | Path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "metric", "value", "n"])
            for row in self.rows:
                writer.writerow([row.condition, row.metric, repr(row.value), row.n])

    def write_json(self, path: str | Path):
        payload = [{"condition": r.condition, "metric": r.metric,
                    "value": r.value, "n": r.n} for r in self.rows]
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def weighted_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Overall fraction of correct predictions."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise ValueError("empty evaluation set")
    if preds.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    return float(np.mean(preds == labels))


def unweighted_accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-class recall over the classes present in the evaluation set."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise ValueError("empty evaluation set")
    recalls = [float(np.mean(preds[labels == c] == c)) for c in np.unique(labels)]
    return float(np.mean(recalls))


_METRICS = {"wa": weighted_accuracy, "ua": unweighted_accuracy}


def _standardized_batch(model, dataset: dt.Dataset) -> dt.MultimodalBatch:
    features = dataset.features
    if model.scaler is not None:
        features = model.scaler.transform(features)
    delta = np.ones((dataset.n, dataset.num_modalities), dtype=np.int64)
    return dt.MultimodalBatch([np.asarray(x, dtype=np.float64) for x in features],
                              dataset.labels.copy(), delta)


def _check_compatible(model, dataset: dt.Dataset):
    if model.spec.modality_dims != dataset.modality_dims:
        raise ValueError(
            f"model expects modalities {model.spec.modality_names} with dims "
            f"{model.spec.modality_dims}, dataset has {dataset.modality_names} "
            f"with dims {dataset.modality_dims}")
    if model.spec.num_classes != dataset.num_classes:
        raise ValueError(f"model has {model.spec.num_classes} classes, dataset "
                         f"has {dataset.num_classes}")


def predict_label(model, batch: dt.MultimodalBatch, pattern=None,
                  strategy: str | None = None) -> np.ndarray:
    """Deterministic class predictions for a (standardized) batch, optionally
    re-masked by an availability pattern."""
    if pattern is not None:
        batch = dt.apply_pattern(batch, pattern)
    logits = model.predict_logits(batch.features, batch.delta, strategy)
    return np.argmax(logits, axis=1)


def evaluate_grid(model, dataset: dt.Dataset, metric: str = "wa",
                  strategy: str | None = None) -> EvalReport:
    """One row per availability pattern (every sample under every pattern)
    plus the arithmetic-mean Average row."""
    _check_compatible(model, dataset)
    metric_fn = _METRICS[metric]
    base = _standardized_batch(model, dataset)
    rows = []
    values = []
    for pattern in dt.enumerate_patterns(dataset.num_modalities):
        preds = predict_label(model, base, pattern, strategy)
        value = metric_fn(preds, dataset.labels)
        values.append(value)
        rows.append(ReportRow(dt.pattern_name(pattern, dataset.modality_names),
                              metric, value, dataset.n))
    rows.append(ReportRow("Average", metric, float(np.mean(values)),
                          dataset.n * len(values)))
    return EvalReport(rows)


def _corrupt(batch: dt.MultimodalBatch, modality: int, kind: str, level: float,
             seed: int) -> dt.MultimodalBatch:
    rng = derive_rng(seed, f"corrupt-{kind}-{modality}-{level:.6g}")
    if kind == "gaussian":
        return dt.corrupt_gaussian(batch, modality, level, rng)
    if kind == "mask":
        return dt.corrupt_mask(batch, modality, level, rng)
    raise ValueError(f"unknown corruption kind: {kind!r}")


def evaluate_corruption_sweep(model, dataset: dt.Dataset, modality: int, kind: str,
                              levels=None, metric: str = "wa", seed: int = 0,
                              fixed: tuple[int, str, float] | None = None,
                              strategy: str | None = None) -> EvalReport:
    """One row per corruption level, full availability.  ``fixed`` optionally
    holds (modality, kind, level) for a second, constant corruption so both
    modalities can be degraded at once."""
    _check_compatible(model, dataset)
    if kind not in ("gaussian", "mask"):
        raise ValueError(f"unknown corruption kind: {kind!r}")
    if levels is None:
        levels = GAUSSIAN_LEVELS if kind == "gaussian" else MASK_LEVELS
    if not len(levels):
        raise ValueError("no corruption levels given")
    metric_fn = _METRICS[metric]
    base = _standardized_batch(model, dataset)
    rows = []
    for level in levels:
        batch = _corrupt(base, modality, kind, float(level), seed)
        if fixed is not None:
            fm, fk, fl = fixed
            batch = _corrupt(batch, fm, fk, float(fl), seed)
        preds = predict_label(model, batch)
        label = f"{'sigma' if kind == 'gaussian' else 'p'}={level:g}"
        rows.append(ReportRow(label, metric, metric_fn(preds, dataset.labels),
                              dataset.n))
    return EvalReport(rows)


def average_over_patterns(model, dataset: dt.Dataset, metric: str = "wa",
                          strategy: str | None = None) -> float:
    return evaluate_grid(model, dataset, metric, strategy).value("Average")


# ---------------------------------------------------------------------------
# Element-wise weight inspection

@dataclass
class HeatmapCondition:
    name: str
    kind: str | None = None       # None = clean
    level: float = 0.0
    modality: int = 0


def default_heatmap_conditions(gaussian_modality: int = 0,
                               mask_modality: int = 1) -> list[HeatmapCondition]:
    conditions = [HeatmapCondition("clean")]
    for level in HEATMAP_GAUSSIAN_LEVELS:
        conditions.append(HeatmapCondition(f"gaussian_{level:g}", "gaussian",
                                           level, gaussian_modality))
    for level in HEATMAP_MASK_LEVELS:
        conditions.append(HeatmapCondition(f"mask_{level:g}", "mask",
                                           level, mask_modality))
    return conditions


def fusion_weight_matrix(model, batch: dt.MultimodalBatch) -> np.ndarray:
    """Element-wise fusion weights for a standardized batch, (n, M, D)."""
    from . import fusion as fusion_mod
    from . import model as model_mod
    from .autodiff import Record

    rec = Record()
    bound = model.bind(rec, trainable=False)
    embs = [model_mod.encode(enc, x, model.spec.sigma_floor)
            for enc, x in zip(bound.encoders, batch.features)]
    fused = fusion_mod.fuse_with_strategy(embs, batch.delta, model.spec.weighting,
                                          bound.fusion_logits)
    return np.stack([w.values for w in fused.omega], axis=1)


def export_weight_heatmap(model, dataset: dt.Dataset,
                          conditions: list[HeatmapCondition] | None = None,
                          seed: int = 0, max_samples: int | None = None
                          ) -> dict[str, np.ndarray]:
    """Per condition: the (n, M, D) element-wise weight tensor under full
    availability (weights per element sum to one across modalities)."""
    _check_compatible(model, dataset)
    if conditions is None:
        mask_mod = 1 if dataset.num_modalities > 1 else 0
        conditions = default_heatmap_conditions(0, mask_mod)
    base = _standardized_batch(model, dataset)
    if max_samples is not None and base.n > max_samples:
        base = dt.MultimodalBatch([x[:max_samples] for x in base.features],
                                  base.labels[:max_samples],
                                  base.delta[:max_samples])
    out = {}
    for cond in conditions:
        batch = base if cond.kind is None else _corrupt(base, cond.modality,
                                                        cond.kind, cond.level, seed)
        out[cond.name] = fusion_weight_matrix(model, batch)
    return out


def write_heatmap_csv(omega: np.ndarray, modality_names: list[str],
                      path: str | Path):
    """Rows: one per (sample, modality); columns: sample, modality,
    mean_weight, then the D per-element weights."""
    n, m, d = omega.shape
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "modality", "mean_weight"] +
                        [f"w{j}" for j in range(d)])
        for i in range(n):
            for k in range(m):
                row = omega[i, k]
                writer.writerow([i, modality_names[k], repr(float(row.mean()))] +
                                [repr(float(v)) for v in row])
