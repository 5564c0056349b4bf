"""Manifests, split protocols, degradation, statistics, captions and synthetic data."""

from .captions import Caption, CaptionParseError, build_caption, detokenize, parse_caption, tokenize
from .degrade import DegradationError, assign_degradations, degrade_image
from .images import ImageLoadError, load_image, materialize
from .records import (
    DEGRADATION_KINDS,
    SCENES,
    SPLITS,
    DegradationSpec,
    ManifestError,
    SampleRecord,
    ingest_manifest,
    label_matrix,
    load_dataset,
    read_degradation_sidecar,
    read_split_sidecar,
    write_degradation_sidecar,
    write_manifest,
    write_split_sidecar,
)
from .splits import CROSS_DOMAIN_TEST, CROSS_DOMAIN_TRAIN, RANDOM_SPLIT_COUNTS, SplitError, random_split, scene_split, select, split_counts
from .stats import attribute_distribution, cooccurrence_matrix, scene_attribute_distribution
from .synth import render, synth_generate, write_synthetic
