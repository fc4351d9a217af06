"""Precision-weighted multimodal fusion with per-modality Gaussian embeddings,
robust to missing and corrupted modalities."""

from .autodiff import Record, Tensor, backward, finite_difference_check
from .data import (Dataset, MultimodalBatch, SyntheticSpec, augment_missing,
                   apply_pattern, corrupt_gaussian, corrupt_mask,
                   enumerate_patterns, generate_synthetic, load_dataset,
                   reference_spec, save_dataset)
from .fusion import FusionResult, combined_variance, fuse, fusion_weights
from .losses import (LossBreakdown, cross_entropy, multimodal_loss,
                     sparsity_loss, total_loss, unimodal_loss)
from .model import (GaussianEmbedding, Model, ModelSpec, build_concat_baseline,
                    encode, init_model, predict, reparameterize)
from .bounds import PowerInstance, PowerTriple, power_triple, verify_ordering
from .train import (AdamState, TrainConfig, adam_step, fit, fit_concat,
                    load_checkpoint, save_checkpoint, train_epoch)
from .evaluate import (EvalReport, evaluate_corruption_sweep, evaluate_grid,
                       export_weight_heatmap, predict_label,
                       unweighted_accuracy, weighted_accuracy)

__version__ = "0.1.0"
