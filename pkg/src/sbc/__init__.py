"""Search-by-classification: decision-branch models whose positive-class
inference compiles to orthogonal range queries over pre-built k-d tree indexes."""

from sbc.core import (
    Box,
    ConfigError,
    DomainError,
    FeatureSubset,
    LabeledDataset,
    StorageError,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ConfigError",
    "DomainError",
    "FeatureSubset",
    "LabeledDataset",
    "StorageError",
    "__version__",
]
