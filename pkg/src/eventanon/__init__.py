"""Learned noise anonymization of event-camera histograms against re-identification."""

from .events import (
    AugmentationConfig,
    EventDataset,
    EventStream,
    LabeledSample,
    ReIdSplit,
    augment,
    build_histogram,
    build_reid_split,
)
from .models import (
    Anonymizer,
    AnonymizerConfig,
    AnonymizerOutput,
    Classifier,
    ClassifierConfig,
    CompositionMode,
    Denoiser,
    DenoiserConfig,
    GaussianAnonymizer,
    compose_anonymized,
)
from .synthetic import SyntheticDatasetSpec, generate_synthetic_dataset

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig",
    "EventDataset",
    "EventStream",
    "LabeledSample",
    "ReIdSplit",
    "augment",
    "build_histogram",
    "build_reid_split",
    "Anonymizer",
    "AnonymizerConfig",
    "AnonymizerOutput",
    "Classifier",
    "ClassifierConfig",
    "CompositionMode",
    "Denoiser",
    "DenoiserConfig",
    "GaussianAnonymizer",
    "compose_anonymized",
    "SyntheticDatasetSpec",
    "generate_synthetic_dataset",
]
