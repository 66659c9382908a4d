"""Temporal-feature cross attention for longitudinal clinical prediction."""

from .data import (CohortDataset, FeatureSpec, GeneratorSpec, Preprocessor, SplitSpec,
                   generate_cohort, load_csv, preprocess, save_csv, split)
from .estimator import TemporalClassifier
from .evaluation import auroc, compare_models, thresholded_metrics
from .explainability import (InfluenceGraph, InfluenceQuery, aggregate_attention,
                             build_influence_hierarchy, chained_influence, export_graph,
                             feature_importance, temporal_profile)
from .models import ForwardArtifacts, ModelConfig, forward
from .training import TrainedModel, predict, train

__version__ = "0.1.0"

__all__ = [
    "CohortDataset", "FeatureSpec", "ForwardArtifacts", "GeneratorSpec", "InfluenceGraph",
    "InfluenceQuery", "ModelConfig", "Preprocessor", "SplitSpec", "TemporalClassifier",
    "TrainedModel", "aggregate_attention", "auroc", "build_influence_hierarchy",
    "chained_influence", "compare_models", "export_graph", "feature_importance", "forward",
    "generate_cohort", "load_csv", "predict", "preprocess", "save_csv", "split",
    "temporal_profile", "thresholded_metrics", "train",
]
