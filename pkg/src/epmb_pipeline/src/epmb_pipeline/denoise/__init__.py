from epmb_pipeline.denoise.filters import (
    BASELINES,
    EventRole,
    FilterResult,
    baf,
    ie_filter,
    ie_label,
    ie_te_filter,
    nn_filter,
    run_baseline,
)
from epmb_pipeline.denoise.model import DenoiserModel, Objective, read_model, write_model
from epmb_pipeline.denoise.store import FeatureSpec, FeatureTensor, RecentEventStore, extract_features
from epmb_pipeline.denoise.training import (
    LabeledEvent,
    TrainingConfig,
    TrainingSet,
    build_training_set,
    classify,
    threshold_rule_scores,
    train,
)

__all__ = [
    "BASELINES",
    "DenoiserModel",
    "EventRole",
    "FeatureSpec",
    "FeatureTensor",
    "FilterResult",
    "LabeledEvent",
    "Objective",
    "RecentEventStore",
    "TrainingConfig",
    "TrainingSet",
    "baf",
    "build_training_set",
    "classify",
    "extract_features",
    "ie_filter",
    "ie_label",
    "ie_te_filter",
    "nn_filter",
    "read_model",
    "run_baseline",
    "threshold_rule_scores",
    "train",
    "write_model",
]
