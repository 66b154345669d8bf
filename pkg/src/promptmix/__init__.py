"""Synthetic dataset boosting: prompt extraction, seeded generation,
multi-annotator labelling, disagreement filtering and real/fake epoch mixing."""

from .core import (
    AnnotationSet, DenseMap, EpochManifest, ImageRecord, PromptRecord, read_dense_map, validate_manifest,
    write_dense_map,
)
from .errors import BackendError, ConfigError, ContractError, FormatError, PromptMixError

__version__ = "0.1.0"

__all__ = [
    "AnnotationSet", "DenseMap", "EpochManifest", "ImageRecord", "PromptRecord", "read_dense_map",
    "validate_manifest", "write_dense_map", "BackendError", "ConfigError", "ContractError", "FormatError",
    "PromptMixError",
]
