"""Pedestrian attribute recognition with a language-model auxiliary branch,
plus benchmark tooling (splits, degradation, statistics, metrics)."""

from .config import TrainConfig, desk_preset, load_config, full_preset
from .estimator import AsaAggregator, PedestrianAttributeClassifier
from .metrics import MetricsReport, evaluate, per_scene_evaluate
from .schema import AttributeGroup, AttributeSchema, SchemaError, load_schema, validate_labels

__version__ = "0.1.0"

__all__ = [
    "AsaAggregator", "AttributeGroup", "AttributeSchema", "MetricsReport", "PedestrianAttributeClassifier",
    "SchemaError", "TrainConfig", "desk_preset", "evaluate", "full_preset", "load_config", "load_schema",
    "per_scene_evaluate", "validate_labels",
]
