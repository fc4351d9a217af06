"""Synthetic multimodal datasets, disk format, availability patterns, and
feature corruptions.

The generator plants a shared latent (recoverable from every modality, the
redundant signal) and a private latent per modality (the complementary
signal), both with class-dependent centers, then maps them through fixed
random projections plus observation noise.

Availability is a per-sample binary mask over modalities; a missing modality
is replaced by zeros before encoding.  Corruption (additive Gaussian noise or
independent coordinate masking) leaves the availability mask untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .seeds import derive_rng


@dataclass
class Dataset:
    features: list[np.ndarray]      # per modality, (N, D_m)
    labels: np.ndarray              # (N,) ints in [0, num_classes)
    modality_names: list[str]
    num_classes: int
    split: str = ""

    def __post_init__(self):
        n = self.labels.shape[0]
        for name, x in zip(self.modality_names, self.features):
            if x.shape[0] != n:
                raise ValueError(f"modality {name}: {x.shape[0]} rows, expected {n}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside class range")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    @property
    def modality_dims(self) -> list[int]:
        return [x.shape[1] for x in self.features]

    def to_batch(self) -> "MultimodalBatch":
        delta = np.ones((self.n, self.num_modalities), dtype=np.int64)
        return MultimodalBatch([x.copy() for x in self.features], self.labels.copy(), delta)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset([x[idx] for x in self.features], self.labels[idx],
                       self.modality_names, self.num_classes, self.split)


@dataclass
class MultimodalBatch:
    features: list[np.ndarray]
    labels: np.ndarray
    delta: np.ndarray               # (N, M) in {0, 1}

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    def copy(self) -> "MultimodalBatch":
        return MultimodalBatch([x.copy() for x in self.features],
                               self.labels.copy(), self.delta.copy())


@dataclass
class SyntheticSpec:
    modality_dims: list[int]
    num_classes: int
    shared_dim: int = 4
    private_dim: int = 2
    center_scale: float = 1.0
    noise: float | list[float] = 1.0
    degrade_prob: float | list[float] = 0.0
    degrade_noise: float | list[float] = 0.0
    train_per_class: int = 1500
    test_per_class: int = 500
    seed: int = 0
    modality_names: list[str] = field(default_factory=list)
    tie_projections: bool = False

    def __post_init__(self):
        if not self.modality_dims or any(d < 1 for d in self.modality_dims):
            raise ValueError("modality dims must all be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.shared_dim < 0 or self.private_dim < 0 or self.shared_dim + self.private_dim < 1:
            raise ValueError("latent dims must be nonnegative and not both zero")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ValueError("sample counts must be positive")
        if min(self.noise_levels()) < 0 or min(self.degrade_levels()) < 0:
            raise ValueError("noise level must be nonnegative")
        if not all(0.0 <= p <= 1.0 for p in self.degrade_probs()):
            raise ValueError("degrade_prob must lie in [0, 1]")
        if not self.modality_names:
            self.modality_names = [f"m{i}" for i in range(len(self.modality_dims))]
        if len(self.modality_names) != len(self.modality_dims):
            raise ValueError("modality_names length mismatch")
        if self.tie_projections and len(set(self.modality_dims)) != 1:
            raise ValueError("tie_projections requires equal modality dims")

    @property
    def num_modalities(self) -> int:
        return len(self.modality_dims)

    def _per_modality(self, value, name: str) -> list[float]:
        if isinstance(value, (int, float)):
            return [float(value)] * len(self.modality_dims)
        if len(value) != len(self.modality_dims):
            raise ValueError(f"per-modality {name} length mismatch")
        return [float(v) for v in value]

    def noise_levels(self) -> list[float]:
        return self._per_modality(self.noise, "noise")

    def degrade_probs(self) -> list[float]:
        return self._per_modality(self.degrade_prob, "degrade_prob")

    def degrade_levels(self) -> list[float]:
        return self._per_modality(self.degrade_noise, "degrade_noise")


def reference_spec() -> SyntheticSpec:
    """Default demonstration dataset: three 20-d modalities, four classes,
    a 4-d shared latent and 2-d private latents per modality.

    Per-sample imperfection: each modality of each sample is independently
    degraded (much stronger observation noise) with probability
    ``degrade_prob``, so the reliability of a modality varies from sample to
    sample and can be inferred from the features themselves.  Base noise is
    mildly heterogeneous so the modalities also differ statically.
    """
    return SyntheticSpec(
        modality_dims=[20, 20, 20],
        num_classes=4,
        shared_dim=4,
        private_dim=2,
        center_scale=1.0,
        noise=[0.3, 0.5, 0.9],
        degrade_prob=0.35,
        degrade_noise=3.0,
        train_per_class=1500,
        test_per_class=500,
        seed=0,
    )


@dataclass
class _LatentDraw:
    shared: np.ndarray               # (N, k_s)
    private: list[np.ndarray]        # per modality, (N, k_p)
    labels: np.ndarray


def _class_centers(rng: np.random.Generator, spec: SyntheticSpec):
    shared = rng.standard_normal((spec.num_classes, spec.shared_dim)) * spec.center_scale
    private = [rng.standard_normal((spec.num_classes, spec.private_dim)) * spec.center_scale
               for _ in range(spec.num_modalities)]
    return shared, private


def _projections(rng: np.random.Generator, spec: SyntheticSpec) -> list[np.ndarray]:
    k = spec.shared_dim + spec.private_dim
    scale = 1.0 / np.sqrt(max(k, 1))
    mats = []
    for m, d in enumerate(spec.modality_dims):
        if spec.tie_projections and m > 0:
            mats.append(mats[0])
        else:
            mats.append(rng.standard_normal((k, d)) * scale)
    return mats


def _draw_latents(rng: np.random.Generator, spec: SyntheticSpec, per_class: int,
                  centers) -> _LatentDraw:
    shared_c, private_c = centers
    labels = rng.permutation(np.repeat(np.arange(spec.num_classes), per_class))
    n = labels.shape[0]
    shared = shared_c[labels] + rng.standard_normal((n, spec.shared_dim))
    private = [pc[labels] + rng.standard_normal((n, spec.private_dim))
               for pc in private_c]
    return _LatentDraw(shared=shared, private=private, labels=labels)


def _observe(rng: np.random.Generator, spec: SyntheticSpec, latents: _LatentDraw,
             projections: list[np.ndarray]) -> list[np.ndarray]:
    noise = spec.noise_levels()
    probs = spec.degrade_probs()
    degraded = spec.degrade_levels()
    features = []
    for m, a in enumerate(projections):
        z = np.concatenate([latents.shared, latents.private[m]], axis=1)
        x = z @ a
        # per-sample noise scale: base, or the degraded level w.p. degrade_prob
        n = x.shape[0]
        scale = np.full((n, 1), noise[m])
        if probs[m] > 0:
            hit = rng.random(n) < probs[m]
            scale[hit, 0] = degraded[m]
        if scale.max() > 0:
            x = x + scale * rng.standard_normal(x.shape)
        features.append(x)
    return features


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Seeded train/test pair; identical spec gives bit-identical datasets."""
    rng = derive_rng(spec.seed, "synthetic")
    centers = _class_centers(rng, spec)
    projections = _projections(rng, spec)
    splits = []
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        latents = _draw_latents(rng, spec, per_class, centers)
        features = _observe(rng, spec, latents, projections)
        splits.append(Dataset(features, latents.labels, list(spec.modality_names),
                              spec.num_classes, split))
    return splits[0], splits[1]


def generate_with_latents(spec: SyntheticSpec) -> tuple[Dataset, Dataset, _LatentDraw, _LatentDraw]:
    """Same draws as generate_synthetic, additionally returning the latents
    (used by diagnostics that need the ground-truth structure)."""
    rng = derive_rng(spec.seed, "synthetic")
    centers = _class_centers(rng, spec)
    projections = _projections(rng, spec)
    out = []
    for split, per_class in (("train", spec.train_per_class), ("test", spec.test_per_class)):
        latents = _draw_latents(rng, spec, per_class, centers)
        features = _observe(rng, spec, latents, projections)
        out.append((Dataset(features, latents.labels, list(spec.modality_names),
                            spec.num_classes, split), latents))
    return out[0][0], out[1][0], out[0][1], out[1][1]


# ---------------------------------------------------------------------------
# Availability patterns

def enumerate_patterns(num_modalities: int) -> list[tuple[int, ...]]:
    """All 2^M - 1 nonzero availability masks, in ascending binary order with
    modality 0 as the most significant digit."""
    if num_modalities < 1:
        raise ValueError("need at least one modality")
    patterns = []
    for k in range(1, 2 ** num_modalities):
        bits = tuple((k >> (num_modalities - 1 - m)) & 1 for m in range(num_modalities))
        patterns.append(bits)
    return patterns


def pattern_name(pattern: tuple[int, ...], names: list[str]) -> str:
    return "+".join(n for n, bit in zip(names, pattern) if bit)


def apply_pattern(batch: MultimodalBatch, pattern) -> MultimodalBatch:
    """Zero-fill the masked modalities and set every sample's delta to the
    pattern.  Idempotent for a fixed pattern."""
    pattern = tuple(int(b) for b in np.asarray(pattern).ravel())
    if len(pattern) != batch.num_modalities or not any(pattern):
        raise ValueError(f"invalid pattern {pattern} for {batch.num_modalities} modalities")
    features = [x.copy() if bit else np.zeros_like(x)
                for x, bit in zip(batch.features, pattern)]
    delta = np.tile(np.asarray(pattern, dtype=np.int64), (batch.n, 1))
    return MultimodalBatch(features, batch.labels.copy(), delta)


def augment_missing(batch: MultimodalBatch, rng: np.random.Generator) -> MultimodalBatch:
    """Assign each sample one availability pattern drawn uniformly from the
    2^M - 1 possibilities (the full pattern included) and zero-fill."""
    patterns = np.asarray(enumerate_patterns(batch.num_modalities), dtype=np.int64)
    choice = rng.integers(0, len(patterns), size=batch.n)
    delta = patterns[choice]
    features = [x * delta[:, m:m + 1] for m, x in enumerate(batch.features)]
    return MultimodalBatch(features, batch.labels.copy(), delta)


def materialize_patterns(batch: MultimodalBatch) -> MultimodalBatch:
    """Replicate every sample under every availability pattern."""
    parts = [apply_pattern(batch, p) for p in enumerate_patterns(batch.num_modalities)]
    return MultimodalBatch(
        [np.concatenate([p.features[m] for p in parts]) for m in range(batch.num_modalities)],
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.delta for p in parts]),
    )


# ---------------------------------------------------------------------------
# Corruption transforms (availability unchanged: corrupted, not missing)

def corrupt_gaussian(batch: MultimodalBatch, modality: int, sigma_noise: float,
                     rng: np.random.Generator) -> MultimodalBatch:
    """Add iid N(0, sigma_noise^2) noise to one modality's features."""
    if sigma_noise < 0:
        raise ValueError("noise level must be nonnegative")
    out = batch.copy()
    if sigma_noise > 0:
        out.features[modality] = out.features[modality] + \
            sigma_noise * rng.standard_normal(out.features[modality].shape)
    return out


def corrupt_mask(batch: MultimodalBatch, modality: int, p: float,
                 rng: np.random.Generator) -> MultimodalBatch:
    """Zero each coordinate of one modality independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"masking probability {p} outside [0, 1]")
    out = batch.copy()
    keep = rng.random(out.features[modality].shape) >= p
    out.features[modality] = out.features[modality] * keep
    return out


# ---------------------------------------------------------------------------
# Disk format: meta.json + features_<name>.csv + labels.csv, decimal text.

_FLOAT_FMT = "%.17g"


def save_dataset(dataset: Dataset, directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "modalities": [{"name": n, "dim": int(x.shape[1])}
                       for n, x in zip(dataset.modality_names, dataset.features)],
        "num_classes": int(dataset.num_classes),
        "num_samples": int(dataset.n),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for name, x in zip(dataset.modality_names, dataset.features):
        np.savetxt(directory / f"features_{name}.csv", x, fmt=_FLOAT_FMT, delimiter=",")
    np.savetxt(directory / "labels.csv", dataset.labels, fmt="%d")


def _read_csv_matrix(path: Path, expected_rows: int, expected_cols: int) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    rows = []
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != expected_cols:
                raise ValueError(f"{path}:{line_no}: expected {expected_cols} columns, "
                                 f"got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: non-numeric cell") from None
    if len(rows) != expected_rows:
        raise ValueError(f"{path}: expected {expected_rows} rows, got {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text())
    num_samples = int(meta["num_samples"])
    num_classes = int(meta["num_classes"])
    names, features = [], []
    for mod in meta["modalities"]:
        names.append(mod["name"])
        features.append(_read_csv_matrix(directory / f"features_{mod['name']}.csv",
                                         num_samples, int(mod["dim"])))
    labels_path = directory / "labels.csv"
    if not labels_path.exists():
        raise FileNotFoundError(f"missing file: {labels_path}")
    labels = np.empty(0, dtype=np.int64)
    raw = []
    with labels_path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                value = int(line)
            except ValueError:
                raise ValueError(f"{labels_path}:{line_no}: non-integer label") from None
            if not 0 <= value < num_classes:
                raise ValueError(f"{labels_path}:{line_no}: label {value} outside "
                                 f"[0, {num_classes})")
            raw.append(value)
    if len(raw) != num_samples:
        raise ValueError(f"{labels_path}: expected {num_samples} rows, got {len(raw)}")
    labels = np.asarray(raw, dtype=np.int64)
    return Dataset(features, labels, names, num_classes, split=directory.name)
