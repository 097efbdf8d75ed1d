"""Survival prediction from slide feature bags.

Multimodal training (feature bags + genomic embeddings + survival labels),
unimodal inference (feature bags alone). See README for the pipeline
layout and file formats.
"""

from .autodiff import Parameter, Tensor, check_gradients
from .clustering import GmmModel, em_fit, gmm_from_centroids, kmeans, responsibilities
from .dataio import (
    Cohort,
    FeatureBag,
    GeneratorConfig,
    GenomicEmbedding,
    SurvivalRecord,
    assign_bins,
    generate_synthetic_cohort,
    load_cohort,
)
from .metrics import concordance_index, kaplan_meier, logrank_test, stratify_by_median
from .model import SurvivalNet
from .pipeline import (
    Checkpoint,
    TrainConfig,
    cross_validate,
    evaluate_fold,
    forward_risk,
    load_checkpoint,
    run_ablation,
    save_checkpoint,
    train_fold,
)
from .selection import select, select_cluster, select_em, select_random

__version__ = "0.1.0"

__all__ = [
    "Parameter", "Tensor", "check_gradients",
    "GmmModel", "em_fit", "gmm_from_centroids", "kmeans", "responsibilities",
    "Cohort", "FeatureBag", "GeneratorConfig", "GenomicEmbedding",
    "SurvivalRecord", "assign_bins", "generate_synthetic_cohort", "load_cohort",
    "concordance_index", "kaplan_meier", "logrank_test", "stratify_by_median",
    "SurvivalNet",
    "Checkpoint", "TrainConfig", "cross_validate", "evaluate_fold",
    "forward_risk", "load_checkpoint", "run_ablation", "save_checkpoint",
    "train_fold",
    "select", "select_cluster", "select_em", "select_random",
]
