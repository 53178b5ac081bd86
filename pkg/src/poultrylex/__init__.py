"""Poultry-discourse analytics: preprocessing, lexicon sentiment scoring,
LDA topic modeling, and a dual-stream gated-cross-attention classifier."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    CorpusError,
    DataFormatError,
    NumericalError,
    PoultryLexError,
    ShapeError,
)
from .ingest import Document, LabeledCorpus, RunConfig, SentimentLabel

__all__ = [
    "__version__",
    "ConfigError",
    "CorpusError",
    "DataFormatError",
    "Document",
    "LabeledCorpus",
    "NumericalError",
    "PoultryLexError",
    "RunConfig",
    "SentimentLabel",
    "ShapeError",
]
